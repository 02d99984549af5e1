"""Geometric hierarchies ``h_l = h0 * beta**(-l)`` with an optimised level separation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import HierarchyError, InfeasibleToleranceError
from .hierarchy import ModelConstants, ProblemRates
from .optimizer import (
    OptimalSetup,
    OptimizedHierarchy,
    hierarchy_from_meshes,
    asymptotic_work_constants,
    is_chi_one,
)

DEFAULT_H0 = 0.5
_EXTRA_LEVELS = 40


@dataclass(frozen=True)
class GeometricSpec:
    h0: float
    beta: float
    L: int

    def __post_init__(self):
        if not self.h0 > 0:
            raise HierarchyError(f"h0 must be positive, got {self.h0}")
        if not self.beta > 1:
            raise HierarchyError(f"beta must exceed 1, got {self.beta}")
        if self.L < 0 or int(self.L) != self.L:
            raise HierarchyError(f"L must be a non-negative integer, got {self.L}")

    @property
    def mesh_sizes(self) -> np.ndarray:
        return self.h0 * self.beta ** -np.arange(self.L + 1, dtype=float)


def optimal_beta(rates: ProblemRates) -> float:
    chi = rates.chi
    if is_chi_one(chi):
        return math.exp(2 / rates.q2)
    return chi ** (2 / (rates.dgamma * (chi - 1)))


def geometric_levels(h0: float, beta: float, theta: float, tol: float,
                     constants: ModelConstants, rates: ProblemRates) -> int:
    """Smallest ``L`` whose finest mesh ``h0 * beta**-L`` meets the bias budget."""
    x = (math.log(h0) - math.log((1 - theta) * tol / constants.qw) / rates.q1) / math.log(beta)
    return max(0, math.ceil(x - 1e-12))


def geometric_hierarchy(spec: GeometricSpec, theta: float, tol: float,
                        constants: ModelConstants, rates: ProblemRates) -> OptimizedHierarchy:
    meshes = spec.mesh_sizes
    bias = constants.qw * meshes[-1] ** rates.q1
    # 1 - theta loses digits when theta is near 1
    if bias > (1 - theta) * tol * (1 + 1e-9) + 1e-15 * tol:
        raise InfeasibleToleranceError(
            f"bias {bias:.3g} exceeds (1-theta)*tol={(1 - theta) * tol:.3g}; L={spec.L} is too small"
        )
    return hierarchy_from_meshes(meshes, theta, OptimalSetup(rates, constants, tol), None)


def geometric_work_closed_form(spec: GeometricSpec, theta: float, tol: float,
                               constants: ModelConstants, rates: ProblemRates) -> float:
    c, h0, beta, L = constants, spec.h0, spec.beta, spec.L
    q2, dg = rates.q2, rates.dgamma
    prefactor = (c.c_alpha / (theta * tol)) ** 2
    if is_chi_one(rates.chi):
        return prefactor * (math.sqrt(c.v0) * h0 ** (-q2 / 2) + L * math.sqrt(c.qs) * beta ** (q2 / 2)) ** 2
    series = (1 - beta ** (L * (dg - q2) / 2)) / (beta ** (-dg / 2) - beta ** (-q2 / 2))
    return prefactor * h0 ** (dg * (rates.chi - 1)) * (
        math.sqrt(c.v0) * h0 ** (-q2 / 2) + math.sqrt(c.qs) * series
    ) ** 2


def geometric_optimal_h0(rates: ProblemRates, constants: ModelConstants) -> float:
    """Coarsest mesh that makes the geometric work constant match the optimal one (chi > 1)."""
    chi = rates.chi
    if is_chi_one(chi):
        raise HierarchyError("no optimal geometric h0 formula for chi = 1")
    return (constants.v0 / constants.qs) ** (1 / rates.q2) * chi ** (2 / (rates.dgamma * (1 - chi)))


def geometric_work_constant(rates: ProblemRates, constants: ModelConstants, h0: float) -> dict:
    """Asymptotic work rate and constant of the optimised geometric hierarchy."""
    chi = rates.chi
    if is_chi_one(chi) or chi < 1:
        return asymptotic_work_constants(rates, constants)
    c = constants
    const = c.c_alpha**2 * h0 ** (rates.dgamma * (chi - 1)) * (
        math.sqrt(c.v0) * h0 ** (-rates.q2 / 2) + math.sqrt(c.qs) * chi ** (chi / (chi - 1)) / (chi - 1)
    ) ** 2
    return {"case": "chi>1", "rate_exponent": 2.0, "log_power": 0, "constant": const}


def force_geometric_theta(L: int, beta: float, tol: float, constants: ModelConstants, rates: ProblemRates) -> float:
    """Splitting for which the optimal hierarchy with ``L`` levels is geometric with ratio ``beta``.

    ``beta`` should be :func:`optimal_beta`; the result is suboptimal in general.
    """
    c = constants
    theta = 1 - c.qw / tol * beta ** (-rates.q1 * (L + 1)) * (c.v0 / c.qs) ** (rates.eta / rates.chi)
    if theta <= 0:
        raise InfeasibleToleranceError(f"L={L} too small: forced theta={theta:.3g} <= 0")
    return theta


def default_h0(setup: OptimalSetup) -> float:
    if setup.rates.chi > 1 and not is_chi_one(setup.rates.chi):
        h0 = geometric_optimal_h0(setup.rates, setup.constants)
        return h0 if setup.h_max is None else min(h0, setup.h_max)
    return DEFAULT_H0 if setup.h_max is None else setup.h_max


def optimal_geometric_hierarchy(setup: OptimalSetup, beta: Optional[float] = None, h0: Optional[float] = None,
                                max_levels: Optional[int] = None, min_levels: int = 0) -> OptimizedHierarchy:
    """Cheapest geometric hierarchy for ``setup.tol``.

    For fixed meshes the work decreases in theta, so for every ``L`` the best
    splitting is the largest one the bias allows, ``1 - Q_W h_L**q1 / tol``.
    The search is then over ``L`` alone.
    """
    rates, c, tol = setup.rates, setup.constants, setup.tol
    beta = optimal_beta(rates) if beta is None else beta
    h0 = default_h0(setup) if h0 is None else h0
    first = max(geometric_levels(h0, beta, 1e-15, tol, c, rates), min_levels)
    last = first + _EXTRA_LEVELS
    if max_levels is not None:
        last = min(last, max(max_levels, first))
    best = None
    for L in range(first, last + 1):
        spec = GeometricSpec(h0, beta, L)
        hl = spec.mesh_sizes[-1]
        if setup.h_min is not None and hl < setup.h_min * (1 - 1e-12):
            break
        theta = float(1 - c.qw * hl**rates.q1 / tol)
        if not 0 < theta < 1:
            continue
        cand = geometric_hierarchy(spec, theta, tol, c, rates)
        if best is None or cand.predicted_work < best.predicted_work:
            best = cand
    if best is None:
        raise InfeasibleToleranceError(f"no feasible geometric hierarchy for tol={tol}")
    return best
