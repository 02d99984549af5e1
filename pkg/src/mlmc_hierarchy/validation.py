"""Self-checks of the closed forms against independent numerical oracles.

Each check returns a :class:`CheckResult`; :func:`run_all` runs the suite.
``perturb`` feeds a relatively perturbed strong rate into the mesh formulas
while the residuals are still evaluated with the true rates, which must make
the residual check fail (a mutation smoke test of the suite itself).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InfeasibleToleranceError
from .geometric import optimal_beta
from .hierarchy import ModelConstants, ProblemRates
from .optimizer import (
    OptimalSetup,
    difference_residuals,
    is_chi_one,
    optimal_L,
    optimal_hierarchy_fixed_L,
    unconstrained_theta,
)
from .presets import PRESETS
from .samplers import GbmSampler, rng_stream

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_beta_table() -> CheckResult:
    got = {name: round(optimal_beta(p.rates), 4) for name, p in PRESETS.items()}
    ok = all(math.isclose(got[name], p.beta, abs_tol=5e-5) for name, p in PRESETS.items())
    return CheckResult("beta_table", ok, " ".join(f"{k}={v:.4f}" for k, v in got.items()))


def check_residuals(perturb: float = 0.0) -> CheckResult:
    worst = 0.0
    for p in PRESETS.values():
        gen_rates = replace(p.rates, q2=p.rates.q2 * (1 - perturb)) if perturb else p.rates
        for tol in (1e-2, 1e-3, 1e-4):
            for L in range(2, 8):
                setup = OptimalSetup(gen_rates, p.constants, tol)
                try:
                    h = optimal_hierarchy_fixed_L(setup, L).hierarchy.mesh_sizes
                except InfeasibleToleranceError:
                    continue
                worst = max(worst, float(np.max(np.abs(difference_residuals(h, p.rates)))))
    return CheckResult("difference_residuals", bool(worst < RESIDUAL_TOL), f"max |residual| = {worst:.2e}")


def _factor_exponent(chi, eta, L):
    return 1 / (eta * (L + 1)) if is_chi_one(chi) else (1 - chi) / (eta * (1 - chi ** (L + 1)))


def _work_factor_log(theta, chi, eta, L):
    """Log of the theta-dependent factor ``theta**-2 (1-theta)**-a`` of the optimal work."""
    return -2 * math.log(theta) - _factor_exponent(chi, eta, L) * math.log1p(-theta)


def golden_theta(chi: float, eta: float, L: int) -> float:
    """Minimiser of the work factor by golden-section search.

    A grid gives the bracket, a first pass locates the minimum to about
    ``sqrt(eps)`` and a second pass minimises the change relative to that
    point, written with ``log1p`` so rounding no longer hides the minimum.
    """
    a = _factor_exponent(chi, eta, L)
    f = lambda t: _work_factor_log(t, chi, eta, L)
    grid = np.concatenate([np.logspace(-9, -1, 200), 1 - np.logspace(-12, -0.05, 2000)[::-1]])
    k = int(np.argmin([f(t) for t in grid]))
    t0 = minimize_scalar(f, bracket=(grid[k - 1], grid[k], grid[k + 1]), method="golden", tol=1e-12).x
    g = lambda d: -2 * math.log1p(d / t0) - a * math.log1p(-d / (1 - t0))
    span = 1e-6 * min(t0, 1 - t0)
    d = minimize_scalar(g, bracket=(-span, 0.0, span), method="golden", tol=1e-12).x
    return t0 + d


def check_theta_brute_force() -> CheckResult:
    worst = 0.0
    for chi, eta in ((2.0, 1.0), (0.5, 0.25), (8 / 9, 4 / 9), (1.0, 1.0), (4 / 3, 2 / 3)):
        rates = ProblemRates(q1=eta, q2=chi, d=1, gamma=1.0)
        for L in range(0, 6):
            worst = max(worst, abs(unconstrained_theta(rates, L) - golden_theta(chi, eta, L)))
    return CheckResult("theta_brute_force", bool(worst < 1e-8), f"max |theta - golden| = {worst:.2e}")


def check_chi_one_continuity(delta: float = 1e-6) -> CheckResult:
    constants = ModelConstants(qw=1.0, qs=0.5, v0=1.0)
    worst = 0.0
    for L in (1, 3, 5):
        ref_rates = ProblemRates(q1=2, q2=2, d=2, gamma=1.0)
        ref = optimal_hierarchy_fixed_L(OptimalSetup(ref_rates, constants, 1e-3), L)
        for sign in (-1, 1):
            rates = ProblemRates(q1=2, q2=2 * (1 + sign * delta), d=2, gamma=1.0)
            near = optimal_hierarchy_fixed_L(OptimalSetup(rates, constants, 1e-3), L)
            rel_h = np.max(np.abs(near.hierarchy.mesh_sizes / np.array(ref.hierarchy.mesh_sizes) - 1))
            worst = max(worst, float(rel_h), abs(near.theta / ref.theta - 1))
    return CheckResult("chi_one_continuity", bool(worst < 1e-3), f"max relative gap = {worst:.2e}")


def fit_milstein_rates(samples: int = 100_000, seed: int = 2024, finest: int = 8) -> tuple:
    """Fitted ``(q1, q2)`` from GBM level differences at ``h = 1/4 .. 2**-finest``."""
    sampler = GbmSampler()
    hs = [2.0**-k for k in range(2, finest + 1)]
    means, variances = [], []
    for i, h in enumerate(hs):
        fine, coarse, _ = sampler.sample(1, h, 2 * h, samples, rng_stream(seed, (i,)))
        d = fine - coarse
        means.append(abs(d.mean()))
        variances.append(d.var(ddof=1))
    x = np.log(hs)
    return float(np.polyfit(x, np.log(means), 1)[0]), float(np.polyfit(x, np.log(variances), 1)[0])


def check_milstein_rates(samples: int = 100_000) -> CheckResult:
    q1, q2 = fit_milstein_rates(samples)
    ok = bool(abs(q1 - 1) <= 0.15 and abs(q2 - 2) <= 0.15)
    return CheckResult("milstein_rates", ok, f"q1 = {q1:.3f}, q2 = {q2:.3f}")


def check_optimal_L_argmin() -> CheckResult:
    bad = []
    for name, p in PRESETS.items():
        for tol in (1e-2, 1e-3):
            setup = OptimalSetup(p.rates, p.constants, tol)
            L, best = optimal_L(setup)
            for other in (L - 1, L + 1):
                if other >= 0 and optimal_hierarchy_fixed_L(setup, other).predicted_work < best.predicted_work:
                    bad.append(f"{name}@{tol}")
    return CheckResult("optimal_L_argmin", not bad, "ok" if not bad else "worse than neighbour: " + ", ".join(bad))


def run_all(perturb: float = 0.0, milstein_samples: int = 100_000) -> list:
    return [
        check_beta_table(),
        check_residuals(perturb),
        check_theta_brute_force(),
        check_chi_one_continuity(),
        check_optimal_L_argmin(),
        check_milstein_rates(milstein_samples),
    ]
