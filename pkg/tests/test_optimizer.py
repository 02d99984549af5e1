import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq, minimize

from mlmc_hierarchy.errors import HierarchyError, InfeasibleToleranceError, UnsupportedCaseError
from mlmc_hierarchy.hierarchy import ModelConstants, ProblemRates, estimator_variance, model_variances
from mlmc_hierarchy.optimizer import (
    OptimalSetup,
    _constrained_log_c,
    asymptotic_work_constants,
    constrained_work,
    continuous_optimal_work,
    difference_residuals,
    factored_work,
    finest_mesh,
    inner_meshes_given_endpoints,
    l_asymptotic_slopes,
    l_bound_constants,
    l_bounds,
    log_continuous_optimal_work,
    mesh_ratio,
    optimal_L,
    optimal_hierarchy_fixed_L,
    optimal_meshes,
    optimal_samples,
    optimal_theta,
    optimal_theta_h0_constrained,
    predicted_work,
    theta_bounds_h0_constrained,
    theta_limit,
)
from mlmc_hierarchy.presets import PRESETS
from oracles import coordinate_descent_meshes, golden_section, grid_bracket

GMRES, MUMPS, EX2 = (PRESETS[k] for k in ("ex1-gmres", "ex1-mumps", "ex2"))


def free(preset, tol):
    return OptimalSetup(preset.rates, preset.constants, tol)


# optimal_samples

def test_optimal_samples_examples():
    assert optimal_samples([1.0], [1.0], 0.5, 0.1, 2.0) == pytest.approx([1600.0])
    assert optimal_samples([1.0, 1.0], [1.0, 4.0], 0.5, 1.0, 1.0) == pytest.approx([12.0, 6.0])
    with pytest.raises(HierarchyError):
        optimal_samples([], [], 0.5, 0.1, 2.0)


def test_optimal_samples_homogeneity():
    v, w = np.array([1.0, 0.3, 0.05]), np.array([1.0, 4.0, 16.0])
    base = optimal_samples(v, w, 0.6, 0.02, 2.0)
    assert optimal_samples(4 * v, w, 0.6, 0.02, 2.0) == pytest.approx(4 * base, rel=1e-12)


def test_optimal_samples_match_numerical_lagrange():
    v, w = np.array([1.0, 1.0]), np.array([1.0, 4.0])
    budget = (0.5 * 1.0 / 1.0) ** 2
    res = minimize(lambda m: m @ w, x0=[10.0, 10.0], method="SLSQP",
                   constraints=[{"type": "eq", "fun": lambda m: np.sum(v / m) - budget}],
                   bounds=[(1e-6, None)] * 2, options={"ftol": 1e-14})
    assert res.x == pytest.approx([12.0, 6.0], rel=1e-5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(1e-4, 10), st.floats(1, 1e4)), min_size=1, max_size=8),
       st.floats(0.05, 0.95), st.floats(1e-4, 1))
def test_optimal_samples_meet_variance_budget(levels, theta, tol):
    v, w = np.array(levels).T
    m = optimal_samples(v, w, theta, tol, 2.0)
    assert np.sum(v / m) == pytest.approx((theta * tol / 2.0) ** 2, rel=1e-12)


# finest_mesh and theta

def test_finest_mesh_examples():
    c = ModelConstants(qw=0.0307, qs=0.263, v0=1.7805)
    r = ProblemRates(q1=1, q2=2)
    assert finest_mesh(0.5, 2 * c.qw, c, r) == pytest.approx(1.0)
    bisect = brentq(lambda h: c.qw * h - 0.5 * 0.01, 1e-9, 10, xtol=1e-15)
    assert finest_mesh(0.5, 0.01, c, r) == pytest.approx(bisect, rel=1e-12)
    assert finest_mesh(0.5, 0.01, c, r) == pytest.approx(0.162866, abs=5e-7)
    hs = [finest_mesh(t, 0.01, c, r) for t in np.linspace(0.1, 0.999, 50)]
    assert all(a > b for a, b in zip(hs, hs[1:]))


def test_optimal_theta_examples():
    assert optimal_theta(ProblemRates(q1=1, q2=1), 0) == pytest.approx(2 / 3, rel=1e-14)
    assert optimal_theta(ProblemRates(q1=1, q2=2), 3) == pytest.approx(30 / 31, rel=1e-14)
    assert optimal_theta(ProblemRates(q1=1, q2=2), 60) == pytest.approx(1.0, abs=1e-12)
    assert optimal_theta(ProblemRates(q1=0.25, q2=0.5), 200) == pytest.approx(0.5, rel=1e-12)
    with pytest.raises(HierarchyError):
        optimal_theta(ProblemRates(q1=1, q2=2), -1)


def test_theta_limits():
    assert theta_limit(ProblemRates(q1=1, q2=2)) == 1.0
    assert theta_limit(ProblemRates(q1=0.25, q2=0.5)) == pytest.approx(0.5)


def test_optimal_theta_h_min_cap():
    r = ProblemRates(q1=1, q2=2)
    cap = 1 - 0.0307 * 0.01 / 0.001
    assert optimal_theta(r, 6, h_min=0.01, tol=0.001, qw=0.0307) == pytest.approx(cap)
    # the free optimum 2/3 at L=0 is below the cap and survives
    assert optimal_theta(r, 0, h_min=0.01, tol=0.001, qw=0.0307) == pytest.approx(2 / 3)
    with pytest.raises(InfeasibleToleranceError):
        optimal_theta(r, 3, h_min=0.1, tol=0.001, qw=0.0307)


# fixed-L hierarchies

def test_single_level_hierarchy():
    s = free(EX2, 0.01)
    opt = optimal_hierarchy_fixed_L(s, 0)
    theta = opt.theta
    assert theta == pytest.approx(optimal_theta(EX2.rates, 0))
    assert opt.hierarchy.mesh_sizes[0] == pytest.approx(finest_mesh(theta, 0.01, EX2.constants, EX2.rates))
    assert opt.hierarchy.samples[0] == pytest.approx((2 / (theta * 0.01)) ** 2 * EX2.constants.v0)
    with pytest.raises(HierarchyError):
        optimal_hierarchy_fixed_L(s, -1)


def test_chi_one_level_separation():
    r = ProblemRates(q1=2, q2=2, d=2)
    c = ModelConstants(qw=0.7, qs=0.4, v0=1.3)
    s = OptimalSetup(r, c, 1e-3)
    for L in (1, 3, 6):
        opt = optimal_hierarchy_fixed_L(s, L)
        h = np.array(opt.hierarchy.mesh_sizes)
        expected = ((c.qw / ((1 - opt.theta) * 1e-3)) ** (1 / r.q1) * (c.v0 / c.qs) ** (1 / r.q2)) ** (1 / (L + 1))
        assert h[:-1] / h[1:] == pytest.approx(np.full(L, expected), rel=1e-12)


@pytest.mark.parametrize("preset", [GMRES, MUMPS, EX2], ids=lambda p: p.name)
@pytest.mark.parametrize("tol", [1e-2, 1e-3])
def test_constraints_active(preset, tol):
    s = free(preset, tol)
    for L in range(0, 7):
        try:
            opt = optimal_hierarchy_fixed_L(s, L)
        except InfeasibleToleranceError:
            continue
        v = model_variances(opt.hierarchy.mesh_sizes, preset.constants, preset.rates)
        assert estimator_variance(opt.hierarchy, v) == pytest.approx(opt.variance_budget, rel=1e-12)
        assert opt.bias == pytest.approx((1 - opt.theta) * tol, rel=1e-12)
        if L >= 2:
            assert np.max(np.abs(difference_residuals(opt.hierarchy.mesh_sizes, preset.rates))) < 1e-10


def test_meshes_match_coordinate_descent_gmres():
    s = free(GMRES, 0.01)
    opt = optimal_hierarchy_fixed_L(s, 4)
    h = np.array(opt.hierarchy.mesh_sizes)
    r, c = GMRES.rates, GMRES.constants
    oracle = coordinate_descent_meshes(h[-1], 4, r.q2, r.dgamma, c.qs, c.v0)
    assert h == pytest.approx(oracle, rel=1e-6)


def test_inner_meshes_examples():
    r1 = ProblemRates(q1=1, q2=1)
    assert inner_meshes_given_endpoints(1.0, 1 / 8, 3, r1) == pytest.approx([1, 1 / 2, 1 / 4, 1 / 8], rel=1e-14)
    assert inner_meshes_given_endpoints(0.7, 0.1, 1, EX2.rates) == pytest.approx([0.7, 0.1])
    h = inner_meshes_given_endpoints(0.9, 1e-3, 6, GMRES.rates)
    assert (h[0], h[-1]) == pytest.approx((0.9, 1e-3), rel=1e-14)
    assert np.max(np.abs(difference_residuals(h, GMRES.rates))) < 1e-10
    with pytest.raises(HierarchyError):
        inner_meshes_given_endpoints(0.1, 0.2, 3, GMRES.rates)
    with pytest.raises(HierarchyError):
        inner_meshes_given_endpoints(0.5, 0.1, 0, GMRES.rates)


# h0-constrained theta

def test_theta_bounds_limits():
    s = free(MUMPS, 0.01)
    lo_small, hi_small = theta_bounds_h0_constrained(s, 4, 1e-6)
    lo_big, hi_big = theta_bounds_h0_constrained(s, 4, 1e6)
    assert lo_small == lo_big
    # C grows with h0 when chi < 1: C -> infinity pins hi to lo, C -> 0 sends hi to 1
    assert hi_big == pytest.approx(lo_big, abs=1e-9)
    assert hi_small == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(UnsupportedCaseError):
        theta_bounds_h0_constrained(OptimalSetup(ProblemRates(q1=1, q2=1), EX2.constants, 0.01), 2, 0.5)


def test_constrained_theta_brackets_golden_oracle():
    s = OptimalSetup(MUMPS.rates, MUMPS.constants, 0.01, h_max=0.5)
    lo, hi = theta_bounds_h0_constrained(s, 4, 0.5)
    assert lo <= hi
    f = lambda t: constrained_work(t, s, 4, 0.5)
    a, b = grid_bracket(f, np.linspace(1e-3, 1 - 1e-3, 2001))
    oracle = golden_section(f, a, b, tol=1e-12)
    assert lo - 1e-9 <= oracle <= hi + 1e-9
    found = optimal_theta_h0_constrained(s, 4)
    assert lo - 1e-12 <= found <= hi + 1e-12
    assert found == pytest.approx(oracle, abs=1e-6)
    assert f(found) <= f(oracle) * (1 + 1e-12)


def test_constrained_theta_degenerate_matches_free():
    r = ProblemRates(q1=1, q2=2)
    c = ModelConstants(qw=0.05, qs=0.3, v0=1.5)
    s = OptimalSetup(r, c, 1e-3)
    for L in (2, 4):
        theta = optimal_theta(r, L)
        h0 = optimal_meshes(s, L, theta)[0]
        pinned = OptimalSetup(r, c, 1e-3, h_max=h0)
        assert optimal_theta_h0_constrained(pinned, L, h0) == pytest.approx(theta, abs=1e-8)


def test_constrained_theta_unit_c_grid_oracle():
    r = ProblemRates(q1=1, q2=2)  # chi = 2, eta = 1
    c = ModelConstants(qw=0.05, qs=0.3, v0=1.5)
    s = OptimalSetup(r, c, 1e-3)
    h0 = math.exp(brentq(lambda x: _constrained_log_c(s, 1, math.exp(x)), -30, 30))
    grid = np.arange(1e-6, 1.0, 1e-6)
    oracle = grid[np.argmin(grid**-2 * (1 + (1 - grid) ** -0.5) ** 2)]
    pinned = OptimalSetup(r, c, 1e-3, h_max=h0)
    assert optimal_theta_h0_constrained(pinned, 1, h0) == pytest.approx(oracle, abs=2e-6)


# level bounds and the level search

def test_l_bounds_gmres():
    s = free(GMRES, 1e-3)
    c1, c2 = l_bound_constants(GMRES.rates, GMRES.constants)
    r = GMRES.rates
    assert c2 == pytest.approx(math.log(r.chi) * 2 * r.eta / (r.chi - 1))
    assert c2 > 0
    lo, hi = l_bounds(s)
    assert lo < hi
    lo10, hi10 = l_bounds(free(GMRES, 1e-4))
    assert hi10 - hi == pytest.approx(math.log(10) * max(1, r.chi) / c2, rel=1e-12)
    assert lo10 - lo == pytest.approx(math.log(10) / c2, rel=1e-12)


@pytest.mark.parametrize("preset", [GMRES, MUMPS, EX2], ids=lambda p: p.name)
def test_l_bounds_asymptotic_slope(preset):
    r = preset.rates
    expected = max(1, r.chi) * (r.chi - 1) / (2 * r.eta * math.log(r.chi))
    assert l_asymptotic_slopes(r)[1] == pytest.approx(expected)
    tol = 1e-250
    _, hi = l_bounds(free(preset, tol))
    assert hi / math.log(1 / tol) == pytest.approx(expected, rel=1e-2)


def test_l_bounds_chi_one_precondition():
    r = ProblemRates(q1=1, q2=1)
    c = ModelConstants(qw=0.1, qs=1.0, v0=1.0)
    with pytest.raises(InfeasibleToleranceError):
        l_bounds(OptimalSetup(r, c, 0.5))
    lo, hi = l_bounds(OptimalSetup(r, c, 1e-4))
    assert lo < hi


def test_optimal_L_single_level_for_loose_tol():
    s = free(EX2, 0.5)
    assert l_bounds(s)[1] < 1
    L, best = optimal_L(s)
    assert L == 0 and best.hierarchy.levels == 0


def test_optimal_L_argmin_and_monotone():
    Ls = []
    for tol in (0.1, 0.05, 0.02, 0.01, 0.005):
        s = free(GMRES, tol)
        L, best = optimal_L(s)
        Ls.append(L)
        for other in (L - 1, L + 1):
            if other < 0:
                continue
            try:
                assert predicted_work(s, other) >= best.predicted_work
            except InfeasibleToleranceError:
                pass
    assert all(b >= a for a, b in zip(Ls, Ls[1:])), Ls


# predicted work

def test_predicted_work_single_level():
    s = free(EX2, 0.02)
    theta = optimal_theta(EX2.rates, 0)
    h0 = finest_mesh(theta, 0.02, EX2.constants, EX2.rates)
    expected = (2 / (theta * 0.02)) ** 2 * EX2.constants.v0 / h0
    assert predicted_work(s, 0) == pytest.approx(expected, rel=1e-12)


def test_doubling_c_alpha_quadruples_work():
    c = MUMPS.constants
    c4 = ModelConstants(c.qw, c.qs, c.v0, 2 * c.c_alpha)
    s = free(MUMPS, 0.02)
    assert predicted_work(s.with_constants(c4), 3) == pytest.approx(4 * predicted_work(s, 3), rel=1e-12)


@pytest.mark.parametrize("preset,L,tol", [(MUMPS, 3, 0.02), (GMRES, 5, 1e-3), (EX2, 4, 1e-3)],
                         ids=["mumps", "gmres", "ex2"])
def test_factored_work_equals_direct_sum(preset, L, tol):
    s = free(preset, tol)
    for theta in (None, 0.4, 0.9):
        opt = optimal_hierarchy_fixed_L(s, L, theta)
        assert factored_work(preset.rates, preset.constants, tol, L, opt.theta) == pytest.approx(
            opt.predicted_work, rel=1e-9)
    assert continuous_optimal_work(preset.rates, preset.constants, tol, L) == pytest.approx(
        predicted_work(s, L), rel=1e-9)


def test_continuous_work_survives_large_L():
    r, c = EX2.rates, EX2.constants
    assert math.isfinite(log_continuous_optimal_work(r, c, 1e-3, 400.0))
    assert math.isfinite(log_continuous_optimal_work(MUMPS.rates, MUMPS.constants, 1e-3, 400.0))


@pytest.mark.parametrize("preset", [GMRES, MUMPS, EX2], ids=lambda p: p.name)
def test_theta_optimality_on_grid(preset):
    s = free(preset, 0.01)
    L = optimal_L(s)[0]
    best = predicted_work(s, L)
    for theta in np.arange(1e-3, 1, 1e-3):
        try:
            w = predicted_work(s, L, float(theta))
        except InfeasibleToleranceError:
            continue
        assert best <= w * (1 + 1e-12)


def test_asymptotic_exponents():
    assert asymptotic_work_constants(GMRES.rates, GMRES.constants)["rate_exponent"] == pytest.approx(2)
    assert asymptotic_work_constants(MUMPS.rates, MUMPS.constants)["rate_exponent"] == pytest.approx(2.25)
    assert asymptotic_work_constants(EX2.rates, EX2.constants)["rate_exponent"] == pytest.approx(2)
    one = asymptotic_work_constants(ProblemRates(q1=1, q2=1), EX2.constants)
    assert one["log_power"] == 2
    assert one["constant"] == pytest.approx(4 * math.e**2 * EX2.constants.qs / 4)


@pytest.mark.parametrize("preset", [GMRES, MUMPS, EX2], ids=lambda p: p.name)
def test_asymptotic_constant_matches_work_limit(preset):
    info = asymptotic_work_constants(preset.rates, preset.constants)
    ratios = []
    # chi > 1 converges fast; past 1e-12 its splitting rounds to 1 in double precision
    tols = (1e-6, 1e-9, 1e-12) if preset.rates.chi > 1 else (1e-12, 1e-20, 1e-30)
    for tol in tols:
        w = optimal_L(free(preset, tol))[1].predicted_work
        ratios.append(w * tol ** info["rate_exponent"] / info["constant"])
    # the chi < 1 limit is approached slowly, so only the last point is tight
    assert abs(ratios[-1] - 1) < 1e-3, ratios
    assert abs(ratios[-1] - 1) <= abs(ratios[0] - 1) + 1e-4, ratios


# mesh ratios and continuity

@pytest.mark.parametrize("preset", [GMRES, MUMPS, EX2], ids=lambda p: p.name)
def test_mesh_ratio_consistency(preset):
    s = free(preset, 1e-3)
    for L in (3, 6):
        h = np.array(optimal_hierarchy_fixed_L(s, L).hierarchy.mesh_sizes)
        got = [mesh_ratio(i, s, L) for i in range(L)]
        assert got == pytest.approx(list(h[1:] / h[:-1]), rel=1e-9)
    with pytest.raises(HierarchyError):
        mesh_ratio(6, s, 6)


def test_mesh_ratio_chi_one_constant():
    r = ProblemRates(q1=2, q2=2, d=2)
    s = OptimalSetup(r, ModelConstants(qw=0.7, qs=0.4, v0=1.3), 1e-3)
    ratios = [mesh_ratio(i, s, 5) for i in range(5)]
    assert ratios == pytest.approx([ratios[0]] * 5, rel=1e-14)


@pytest.mark.parametrize("preset", [GMRES, MUMPS, EX2], ids=lambda p: p.name)
def test_mesh_ratio_mid_range_is_geometric(preset):
    r = preset.rates
    beta = r.chi ** (2 / (r.dgamma * (r.chi - 1)))
    s = free(preset, 1e-3)
    assert mesh_ratio(100, s, 200) == pytest.approx(1 / beta, rel=1e-3)
    assert abs(mesh_ratio(100, s, 200) * beta - 1) < abs(mesh_ratio(5, s, 10) * beta - 1) + 1e-12


def test_chi_one_continuity():
    c = ModelConstants(qw=1.0, qs=0.5, v0=1.0)
    for L in (1, 3, 5):
        ref = optimal_hierarchy_fixed_L(OptimalSetup(ProblemRates(q1=2, q2=2, d=2), c, 1e-3), L)
        for q2 in (2 * (1 - 1e-6), 2 * (1 + 1e-6)):
            near = optimal_hierarchy_fixed_L(OptimalSetup(ProblemRates(q1=2, q2=q2, d=2), c, 1e-3), L)
            assert near.theta == pytest.approx(ref.theta, rel=1e-3)
            assert near.hierarchy.mesh_sizes == pytest.approx(ref.hierarchy.mesh_sizes, rel=1e-3)


def test_h_min_clamps_and_caps():
    s = OptimalSetup(EX2.rates, EX2.constants, 1e-2, h_min=0.05)
    opt = optimal_hierarchy_fixed_L(s, 2)
    assert min(opt.hierarchy.mesh_sizes) >= 0.05
    assert opt.theta <= 1 - EX2.constants.qw * 0.05 / 1e-2 + 1e-15
    assert opt.constraint == "h_min"
    with pytest.raises(InfeasibleToleranceError):
        optimal_L(OptimalSetup(EX2.rates, EX2.constants, 1e-3, h_min=0.1))


def test_h_max_pins_coarsest_mesh():
    s = EX2.setup(1e-3)
    L, best = optimal_L(s)
    assert best.hierarchy.mesh_sizes[0] <= 1.0 + 1e-12
    v = model_variances(best.hierarchy.mesh_sizes, EX2.constants, EX2.rates)
    assert estimator_variance(best.hierarchy, v) == pytest.approx(best.variance_budget, rel=1e-12)


def test_setup_validation():
    with pytest.raises(HierarchyError):
        OptimalSetup(EX2.rates, EX2.constants, 0.0)
    with pytest.raises(HierarchyError):
        OptimalSetup(EX2.rates, EX2.constants, 0.1, h_min=0.5, h_max=0.5)
