"""Optimal (generally non-geometric) MLMC hierarchies.

For a fixed number of levels the optimal sample counts follow from a
Lagrange argument, the finest mesh from the bias constraint, and the
remaining meshes from a second order linear difference equation in
``log h``.  The splitting parameter ``theta`` then has a closed form when
the coarsest mesh is free, and is found by a bracketed 1-D search when it
is pinned by an upper bound ``h_max``.  The number of levels is chosen by
exhaustive search over a window delimited by analytic bounds.

All power products are evaluated in log space.  ``chi**k - 1`` is computed
as ``expm1(k*log(chi))`` so that the ``chi != 1`` formulas stay accurate
close to ``chi = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import HierarchyError, InfeasibleToleranceError, UnsupportedCaseError
from .hierarchy import (
    REAL_VALUED,
    Hierarchy,
    ModelConstants,
    ProblemRates,
    model_variances,
    model_works,
    total_work,
)

CHI_ONE_ATOL = 1e-9
THETA_XATOL = 1e-10
MAX_LEVELS = 200


def is_chi_one(chi: float) -> bool:
    return abs(chi - 1.0) < CHI_ONE_ATOL


def _pm1(chi, k):
    """``chi**k - 1`` without cancellation for chi near 1."""
    return np.expm1(np.asarray(k, dtype=float) * math.log(chi))


@dataclass(frozen=True)
class OptimalSetup:
    rates: ProblemRates
    constants: ModelConstants
    tol: float
    h_min: Optional[float] = None
    h_max: Optional[float] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise HierarchyError(f"tol must be positive, got {self.tol}")
        for name in ("h_min", "h_max"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise HierarchyError(f"{name} must be positive, got {value}")
        if self.h_min is not None and self.h_max is not None and not self.h_min < self.h_max:
            raise HierarchyError("need h_min < h_max")

    def with_tol(self, tol: float) -> "OptimalSetup":
        return OptimalSetup(self.rates, self.constants, tol, self.h_min, self.h_max)

    def with_constants(self, constants: ModelConstants) -> "OptimalSetup":
        return OptimalSetup(self.rates, constants, self.tol, self.h_min, self.h_max)

    @property
    def constrained(self) -> bool:
        return self.h_min is not None or self.h_max is not None


@dataclass(frozen=True)
class OptimizedHierarchy:
    hierarchy: Hierarchy
    theta: float
    predicted_work: float
    bias: float
    variance_budget: float
    # None, "h_min", "h_max" or "h_min+h_max": which mesh bound shaped the result
    constraint: Optional[str] = None

    @property
    def L(self) -> int:
        return self.hierarchy.levels


def optimal_samples(variances: Sequence[float], works: Sequence[float], theta: float, tol: float, c_alpha: float) -> np.ndarray:
    """Real sample counts minimising ``sum M W`` subject to ``sum V/M = (theta tol / c_alpha)**2``."""
    v = np.asarray(variances, dtype=float)
    w = np.asarray(works, dtype=float)
    if v.size == 0 or v.shape != w.shape:
        raise HierarchyError("variances and works must be non-empty and aligned")
    if np.any(v <= 0) or np.any(w <= 0):
        raise HierarchyError("variances and works must be positive")
    if not 0 < theta < 1:
        raise HierarchyError(f"theta must lie in (0, 1), got {theta}")
    scale = (c_alpha / (theta * tol)) ** 2
    return scale * np.sqrt(v / w) * np.sum(np.sqrt(w * v))


def finest_mesh(theta: float, tol: float, constants: ModelConstants, rates: ProblemRates) -> float:
    """Largest ``h_L`` meeting the bias budget ``(1 - theta) * tol``."""
    return ((1 - theta) * tol / constants.qw) ** (1 / rates.q1)


def _theta_cap(h_min: float, tol: float, qw: float, q1: float) -> float:
    cap = 1 - qw * h_min**q1 / tol
    if cap <= 0:
        raise InfeasibleToleranceError(
            f"tol={tol} <= Q_W*h_min^q1={qw * h_min**q1}: out of reach with h_min={h_min}"
        )
    return cap


def unconstrained_theta(rates: ProblemRates, L: float) -> float:
    """Closed-form optimal splitting for a free coarsest mesh (``L`` may be real)."""
    chi, eta = rates.chi, rates.eta
    if is_chi_one(chi):
        return 1 / (1 + 1 / (2 * eta * (L + 1)))
    ratio = float(_pm1(chi, 1) / _pm1(chi, L + 1))
    return 1 / (1 + ratio / (2 * eta))


def _log_one_minus_theta(rates: ProblemRates, L: float) -> float:
    """``log(1 - theta)`` for the closed-form splitting, accurate when theta rounds to 1."""
    chi, eta = rates.chi, rates.eta
    a = 1 / (2 * eta * (L + 1)) if is_chi_one(chi) else float(_pm1(chi, 1) / _pm1(chi, L + 1)) / (2 * eta)
    return math.log(a) - math.log1p(a)


def optimal_theta(rates: ProblemRates, L: int, h_min: Optional[float] = None,
                  tol: Optional[float] = None, qw: Optional[float] = None) -> float:
    if L < 0:
        raise HierarchyError(f"L must be non-negative, got {L}")
    theta = unconstrained_theta(rates, L)
    if h_min is not None:
        if tol is None or qw is None:
            raise HierarchyError("h_min cap needs tol and qw")
        theta = min(theta, _theta_cap(h_min, tol, qw, rates.q1))
    return theta


def theta_limit(rates: ProblemRates) -> float:
    """Limit of the optimal splitting as ``L`` grows without bound."""
    chi, eta = rates.chi, rates.eta
    if chi >= 1 or is_chi_one(chi):
        return 1.0
    return 1 / (1 + (1 - chi) / (2 * eta))


def _optimal_log_meshes(L: int, theta: float, setup: OptimalSetup) -> np.ndarray:
    rates, c = setup.rates, setup.constants
    chi, dg = rates.chi, rates.dgamma
    log_hl = math.log((1 - theta) * setup.tol / c.qw) / rates.q1
    log_v = math.log(c.v0 / c.qs)
    ell = np.arange(L + 1, dtype=float)
    if is_chi_one(chi):
        log_beta = (log_v / rates.q2 - log_hl) / (L + 1)
        return log_hl + (L - ell) * log_beta
    den = float(_pm1(chi, L + 1))  # chi^{L+1} - 1
    pm_l1 = _pm1(chi, ell + 1)
    a = pm_l1 / den
    b = (float(_pm1(chi, L)) - _pm1(chi, ell)) / den
    e = (den - pm_l1 - L * pm_l1 + ell * den) / (-den)
    chi_coef = -2 / dg * math.log(chi) / (1 - chi)
    return a * log_hl + b * log_v / dg + chi_coef * e


def optimal_meshes(setup: OptimalSetup, L: int, theta: float) -> np.ndarray:
    """Unconstrained optimal mesh sizes for given ``L`` and ``theta``."""
    return np.exp(_optimal_log_meshes(L, theta, setup))


def closed_form_samples(setup: OptimalSetup, L: int, theta: float) -> np.ndarray:
    """Optimal real sample counts written out explicitly in the model constants.

    Equivalent to :func:`optimal_samples` on the unconstrained optimal meshes.
    """
    rates, c, tol = setup.rates, setup.constants, setup.tol
    chi, eta = rates.chi, rates.eta
    ell = np.arange(L + 1, dtype=float)
    if is_chi_one(chi):
        log_beta = float(np.diff(-_optimal_log_meshes(L, theta, setup))[0]) if L else 0.0
        return np.exp(-rates.q2 * ell * log_beta) * c.v0 * (L + 1) * (c.c_alpha / (theta * tol)) ** 2
    den = float(_pm1(chi, L + 1))           # chi^{L+1} - 1
    frac = _pm1(chi, ell) / den             # (1 - chi^l) / (1 - chi^{L+1})
    log_chi = math.log(chi)
    log_m = (
        2 * math.log(c.c_alpha / (theta * tol))
        + chi / eta * frac * math.log((1 - theta) * tol)
        + (_pm1(chi, ell) - den) / (-den) * math.log(c.v0)
        + chi * frac * (math.log(c.qs) / chi - math.log(c.qw) / eta)
        + math.log(den / float(_pm1(chi, 1))) - L * log_chi
        + (-2 * chi / (1 - chi) * frac * (L + 1) + (1 + chi) / (1 - chi) * ell) * log_chi
    )
    return np.exp(log_m)


def inner_meshes_given_endpoints(h0: float, hL: float, L: int, rates: ProblemRates) -> np.ndarray:
    """Meshes ``h_0..h_L`` solving the optimality difference equation through both endpoints."""
    if L < 1:
        raise HierarchyError(f"need L >= 1, got {L}")
    if not h0 > hL > 0:
        raise HierarchyError(f"need h0 > hL > 0, got h0={h0}, hL={hL}")
    chi, dg = rates.chi, rates.dgamma
    ell = np.arange(L + 1, dtype=float)
    if is_chi_one(chi):
        return h0 * (hL / h0) ** (ell / L)
    pm_L = float(_pm1(chi, L))
    pm_l = _pm1(chi, ell)
    log_h = (
        (pm_L - pm_l) / pm_L * math.log(h0)
        + pm_l / pm_L * math.log(hL)
        - 2 / dg * (ell * pm_L - L * pm_l) / (float(_pm1(chi, 1)) * pm_L) * math.log(chi)
    )
    log_h[0], log_h[-1] = math.log(h0), math.log(hL)
    return np.exp(log_h)


def difference_residuals(mesh_sizes: Sequence[float], rates: ProblemRates) -> np.ndarray:
    """Residuals of the interior optimality conditions in log space.

    ``-log h_{l+1} + (1 + chi) log h_l - chi log h_{l-1} + (2/(d gamma)) log chi``
    for ``l = 1..L-1``; zero for an optimal interior.
    """
    lh = np.log(np.asarray(mesh_sizes, dtype=float))
    chi = rates.chi
    return -lh[2:] + (1 + chi) * lh[1:-1] - chi * lh[:-2] + 2 / rates.dgamma * math.log(chi)


def _level_sum(mesh_sizes, constants: ModelConstants, rates: ProblemRates) -> float:
    v = model_variances(mesh_sizes, constants, rates)
    w = model_works(mesh_sizes, rates)
    return float(np.sum(np.sqrt(v * w)))


def work_for_meshes(mesh_sizes, theta: float, tol: float, constants: ModelConstants, rates: ProblemRates) -> float:
    """Total work with optimal real samples on the given meshes."""
    return (constants.c_alpha / (theta * tol)) ** 2 * _level_sum(mesh_sizes, constants, rates) ** 2


def _constrained_log_c(setup: OptimalSetup, L: int, h0: float) -> float:
    rates, c = setup.rates, setup.constants
    chi, dg = rates.chi, rates.dgamma
    pm_L, pm_L1, pm_1 = float(_pm1(chi, L)), float(_pm1(chi, L + 1)), float(_pm1(chi, 1))
    delta = pm_1 / pm_L / (2 * rates.eta)
    chi_exp = L * chi**L / (-pm_L) - chi / (-pm_1)
    return (
        0.5 * math.log(c.qs / c.v0)
        + dg / 2 * pm_L1 / pm_L * math.log(h0)
        + chi_exp * math.log(chi)
        + math.log(pm_L / pm_1)
        + delta * math.log(c.qw / setup.tol)
    )


def theta_bounds_h0_constrained(setup: OptimalSetup, L: int, h0: Optional[float] = None) -> tuple:
    """Bracket ``(lo, hi)`` for the optimal splitting when ``h_0`` is fixed."""
    if is_chi_one(setup.rates.chi):
        raise UnsupportedCaseError("theta bounds with fixed h0 are only available for chi != 1")
    if L < 1:
        raise HierarchyError(f"need L >= 1, got {L}")
    h0 = setup.h_max if h0 is None else h0
    if h0 is None:
        raise HierarchyError("no coarsest mesh given")
    chi = setup.rates.chi
    delta = float(_pm1(chi, 1) / _pm1(chi, L)) / (2 * setup.rates.eta)
    big_c = math.exp(_constrained_log_c(setup, L, h0))
    lo = 1 / (1 + delta)
    hi = 1 / (1 + delta * big_c / (1 + big_c))
    return lo, hi


def constrained_work(theta: float, setup: OptimalSetup, L: int, h0: float) -> float:
    """Work of the optimal hierarchy with ``h_0`` pinned, as a function of ``theta``."""
    hl = finest_mesh(theta, setup.tol, setup.constants, setup.rates)
    if not hl < h0:
        return math.inf
    meshes = inner_meshes_given_endpoints(h0, hl, L, setup.rates)
    return work_for_meshes(meshes, theta, setup.tol, setup.constants, setup.rates)


def optimal_theta_h0_constrained(setup: OptimalSetup, L: int, h0: Optional[float] = None) -> float:
    h0 = setup.h_max if h0 is None else h0
    if h0 is None:
        raise HierarchyError("no coarsest mesh given")
    if L < 1:
        raise HierarchyError(f"need L >= 1, got {L}")
    c = setup.constants
    if is_chi_one(setup.rates.chi):
        # no analytic bracket for chi = 1; the work is still unimodal in theta
        lo, hi = 1e-12, 1 - 1e-12
    else:
        lo, hi = theta_bounds_h0_constrained(setup, L, h0)
    feasible_lo = 1 - c.qw * h0**setup.rates.q1 / setup.tol
    lo = max(lo, feasible_lo + 1e-12)
    if setup.h_min is not None:
        hi = min(hi, _theta_cap(setup.h_min, setup.tol, c.qw, setup.rates.q1))
    if not lo < hi:
        if lo - hi < 1e-12 and lo > feasible_lo:
            return hi
        raise InfeasibleToleranceError(f"no feasible theta for L={L} with h0={h0}")
    res = minimize_scalar(
        constrained_work, bounds=(lo, hi), method="bounded",
        args=(setup, L, h0), options={"xatol": THETA_XATOL},
    )
    return float(res.x)


def hierarchy_from_meshes(meshes, theta: float, setup: OptimalSetup, constraint) -> OptimizedHierarchy:
    rates, c = setup.rates, setup.constants
    v = model_variances(meshes, c, rates)
    w = model_works(meshes, rates)
    m = optimal_samples(v, w, theta, setup.tol, c.c_alpha)
    hier = Hierarchy(tuple(meshes), tuple(m), REAL_VALUED)
    return OptimizedHierarchy(
        hierarchy=hier,
        theta=theta,
        predicted_work=total_work(hier, rates),
        bias=c.qw * meshes[-1] ** rates.q1,
        variance_budget=(theta * setup.tol / c.c_alpha) ** 2,
        constraint=constraint,
    )


def optimal_hierarchy_fixed_L(setup: OptimalSetup, L: int, theta: Optional[float] = None) -> OptimizedHierarchy:
    """Optimal real-valued hierarchy with ``L + 1`` levels."""
    if L < 0 or int(L) != L:
        raise HierarchyError(f"L must be a non-negative integer, got {L}")
    L = int(L)
    rates, c, tol = setup.rates, setup.constants, setup.tol
    given_theta = theta is not None
    if theta is None:
        theta = optimal_theta(rates, L, setup.h_min, tol, c.qw)
    elif not 0 < theta < 1:
        raise HierarchyError(f"theta must lie in (0, 1), got {theta}")
    if theta >= 1:
        raise InfeasibleToleranceError(f"splitting for L={L} rounds to 1; the bias budget underflows")
    constraint = None
    if setup.h_min is not None and not given_theta and theta < unconstrained_theta(rates, L):
        constraint = "h_min"
    meshes = optimal_meshes(setup, L, theta)

    if setup.h_max is not None and meshes[0] > setup.h_max * (1 + 1e-12):
        h0 = setup.h_max
        constraint = "h_max" if constraint is None else "h_min+h_max"
        if L == 0:
            if not given_theta:
                theta = 1 - c.qw * h0**rates.q1 / tol
                if theta <= 0:
                    raise InfeasibleToleranceError(f"tol={tol} unreachable with h_max={h0} and L=0")
            meshes = np.array([h0])
        else:
            if not given_theta:
                theta = optimal_theta_h0_constrained(setup, L, h0)
            hl = finest_mesh(theta, tol, c, rates)
            if not hl < h0:
                raise InfeasibleToleranceError(f"theta={theta} needs h_L={hl} >= h_max={h0}")
            meshes = inner_meshes_given_endpoints(h0, hl, L, rates)

    if setup.h_min is not None:
        meshes = np.maximum(meshes, setup.h_min)
    if np.any(np.diff(meshes) >= 0):
        # L is too large for this tolerance: the stationary meshes stop decreasing
        raise InfeasibleToleranceError(f"no decreasing optimal meshes with L={L} at tol={tol}")
    return hierarchy_from_meshes(meshes, theta, setup, constraint)


def predicted_work(setup: OptimalSetup, L: int, theta: Optional[float] = None) -> float:
    return optimal_hierarchy_fixed_L(setup, L, theta).predicted_work


def _log_factored_work(rates: ProblemRates, constants: ModelConstants, tol: float, L: float,
                       log_theta: float, log_one_minus_theta: float) -> float:
    chi, eta = rates.chi, rates.eta
    if is_chi_one(chi):
        raise UnsupportedCaseError("factored work form needs chi != 1")
    c = constants
    log_chi = math.log(chi)
    pm1, pm_L, pm_L1 = float(_pm1(chi, 1)), float(_pm1(chi, L)), float(_pm1(chi, L + 1))
    r = pm1 / pm_L1                 # (1 - chi) / (1 - chi^{L+1})
    s = pm_L / pm_L1                # (1 - chi^L) / (1 - chi^{L+1})
    log_w1 = -(2 + r / eta) * math.log(tol)
    log_w2 = (
        2 * math.log(c.c_alpha) + math.log(c.v0) + s * math.log(c.qs / c.v0)
        + r / eta * math.log(c.qw)
        + (-2 * chi / (1 - chi) * s - 2 * L * (chi ** (L + 1) / pm_L1)) * log_chi
    )
    log_f = -2 * log_theta - r / eta * log_one_minus_theta
    return log_w1 + log_w2 + log_f + 2 * math.log(pm_L1 / pm1)


def _safe_exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def factored_work(rates: ProblemRates, constants: ModelConstants, tol: float, L: float, theta: float) -> float:
    """Total work for ``chi != 1`` as ``w1 * w2 * f * ((1 - chi^{L+1}) / (1 - chi))**2``.

    Valid for real ``L`` and any ``theta``; equals :func:`predicted_work` at
    integer ``L`` for an unconstrained setup.
    """
    if not 0 < theta < 1:
        raise HierarchyError(f"theta must lie in (0, 1), got {theta}")
    return _safe_exp(_log_factored_work(rates, constants, tol, L, math.log(theta), math.log1p(-theta)))


def log_continuous_optimal_work(rates: ProblemRates, constants: ModelConstants, tol: float, L: float) -> float:
    """Log of the work with optimal meshes, samples and splitting, for real ``L > -1``."""
    chi, eta, c = rates.chi, rates.eta, constants
    if is_chi_one(chi):
        e = 1 / (2 * eta * (L + 1))
        return (
            2 * math.log(c.c_alpha) - 2 * (1 + e) * math.log(tol)
            + 2 * e * math.log(c.qw) + 2 * eta * e * math.log(c.v0 / c.qs) + math.log(c.qs)
            - 2 * math.log(2 * eta) + 2 * (1 + e) * math.log1p(1 / e)
        )
    # theta = 1 / (1 + a); writing both logs through a keeps 1 - theta accurate
    a = float(_pm1(chi, 1) / _pm1(chi, L + 1)) / (2 * eta)
    log_theta = -math.log1p(a)
    return _log_factored_work(rates, constants, tol, L, log_theta, math.log(a) + log_theta)


def continuous_optimal_work(rates: ProblemRates, constants: ModelConstants, tol: float, L: float) -> float:
    """Work with optimal meshes, samples and splitting, as a function of real ``L``."""
    return _safe_exp(log_continuous_optimal_work(rates, constants, tol, L))


def l_bounds(setup: OptimalSetup) -> tuple:
    """Real interval ``(L_lo, L_hi)`` containing the optimal number of levels.

    Valid for the unconstrained problem (free ``h_0``, no ``h_min``).
    """
    rates, c, tol = setup.rates, setup.constants, setup.tol
    chi, eta = rates.chi, rates.eta
    if is_chi_one(chi):
        big_c = math.log(c.qw * (c.v0 / c.qs) ** eta / tol)
        if big_c <= 0:
            raise InfeasibleToleranceError(
                f"L bounds need tol < Q_W (V0/Q_S)^eta = {c.qw * (c.v0 / c.qs) ** eta}"
            )
        lo = big_c / (2 * eta) - 1
        hi = (math.e * big_c + 1) / ((math.e - 1) * 2 * eta) - 1
        return lo, hi
    c1, c2 = l_bound_constants(rates, c)
    log_inv_tol = -math.log(tol)
    lo = (log_inv_tol + c1 + math.log(1 + 2 * eta)) / c2 - 1
    if chi < 1:
        hi = (log_inv_tol + c1 + math.log(1 + 2 * eta / (1 - chi))) / c2 - 1
    else:
        hi = chi * (log_inv_tol + c1 + math.log(2 * eta / (chi - 1))) / c2 - 1
    return lo, hi


def l_bound_constants(rates: ProblemRates, constants: ModelConstants) -> tuple:
    chi, eta, c = rates.chi, rates.eta, constants
    c1 = eta / chi * math.log(c.v0 / c.qs) + math.log(c.qw)
    c2 = math.log(chi) * 2 * eta / (chi - 1)
    return c1, c2


def l_asymptotic_slopes(rates: ProblemRates) -> tuple:
    """Limits of ``(L + 1) / log(1/tol)`` bounding the optimal level count as tol -> 0."""
    chi, eta = rates.chi, rates.eta
    if is_chi_one(chi):
        return 1 / (2 * eta), 1 / (2 * eta)
    base = (chi - 1) / (2 * eta * math.log(chi))
    return base, max(1.0, chi) * base


def level_search_range(setup: OptimalSetup, max_levels: Optional[int] = None, min_levels: int = 0) -> range:
    try:
        lo, hi = l_bounds(setup)
        start = max(0, math.floor(lo) - 2)
        stop = max(math.ceil(hi) + 2, 2)
    except InfeasibleToleranceError:
        start, stop = 0, 2
    if setup.constrained:
        # mesh bounds can push the optimum below the analytic lower bound
        start = 0
    cap = MAX_LEVELS if max_levels is None else min(max_levels, MAX_LEVELS)
    stop = min(stop, cap)
    start = min(start, stop)
    if min_levels > 0:
        lo = min(min_levels, cap)
        start, stop = max(start, lo), max(stop, lo)
    return range(start, stop + 1)


def optimal_L(setup: OptimalSetup, max_levels: Optional[int] = None, theta: Optional[float] = None,
              min_levels: int = 0) -> tuple:
    """Exhaustive search for the work-minimising number of levels.

    Returns ``(L, OptimizedHierarchy)``; ties go to the smaller ``L``.
    """
    best = None
    last_error = None
    for L in level_search_range(setup, max_levels, min_levels):
        try:
            cand = optimal_hierarchy_fixed_L(setup, L, theta)
        except InfeasibleToleranceError as exc:
            last_error = exc
            continue
        if best is None or cand.predicted_work < best.predicted_work:
            best = cand
    if best is None:
        raise last_error or InfeasibleToleranceError(f"no feasible hierarchy for tol={setup.tol}")
    return best.L, best


def asymptotic_work_constants(rates: ProblemRates, constants: ModelConstants) -> dict:
    """Leading-order work ``constant * tol**(-rate_exponent) * log(1/tol)**log_power``."""
    chi, eta, c = rates.chi, rates.eta, constants
    if is_chi_one(chi):
        const = c.c_alpha**2 * math.e**2 * c.qs / (2 * eta) ** 2
        return {"case": "chi=1", "rate_exponent": 2.0, "log_power": 2, "constant": const}
    if chi < 1:
        s = 2 * (1 + (1 - chi) / (2 * eta))
        const = (
            c.c_alpha**2 * c.qs * c.qw ** ((1 - chi) / eta) * chi ** (-2 * chi / (1 - chi))
            / (2 * eta) ** 2 * (1 + 2 * eta / (1 - chi)) ** s
        )
        return {"case": "chi<1", "rate_exponent": s, "log_power": 0, "constant": const}
    const = (
        c.c_alpha**2 * c.v0 ** ((chi - 1) / chi) * c.qs ** (1 / chi)
        * chi ** (2 * chi / (chi - 1)) / (chi - 1) ** 2
    )
    return {"case": "chi>1", "rate_exponent": 2.0, "log_power": 0, "constant": const}


def mesh_ratio(level: int, setup: OptimalSetup, L: int, theta: Optional[float] = None) -> float:
    """``h_{l+1} / h_l`` of the unconstrained optimal hierarchy."""
    if not 0 <= level < L:
        raise HierarchyError(f"level must lie in 0..{L - 1}, got {level}")
    rates, c, tol = setup.rates, setup.constants, setup.tol
    log_bias = (_log_one_minus_theta(rates, L) if theta is None else math.log1p(-theta)) + math.log(tol / c.qw)
    chi, dg = rates.chi, rates.dgamma
    if is_chi_one(chi):
        return math.exp(-(math.log(c.v0 / c.qs) / rates.q2 - log_bias / rates.q1) / (L + 1))
    den = float(_pm1(chi, L + 1))
    pm1 = float(_pm1(chi, 1))
    log_r = (
        -pm1 * chi**level / (dg * den) * math.log(c.v0 / c.qs)
        + 2 / dg * (1 / (1 - chi) + (L + 1) * chi ** (level + 1) / den) * math.log(chi)
        + pm1 * chi ** (level + 1) / (rates.q1 * den) * log_bias
    )
    return math.exp(log_r)
