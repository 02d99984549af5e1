"""Named parameter sets for the two reference problems.

``ex1-*`` are an elliptic PDE in 3D solved with an iterative (GMRES) or a
direct (MUMPS) solver; here they are reproduced with the synthetic sampler.
``ex2`` is the discounted GBM call priced with Milstein.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .engine import ContinuationConfig
from .errors import HierarchyError
from .hierarchy import INTEGER_FEASIBLE, Hierarchy, ModelConstants, ProblemRates, UniformMeshRule
from .optimizer import OptimalSetup
from .samplers import GbmParams, GbmSampler, SyntheticParams, SyntheticSampler

EX1_MEAN = 1.6026
EX2_EXACT = 1.04505835721856


@dataclass(frozen=True)
class Preset:
    name: str
    rates: ProblemRates
    constants: ModelConstants
    tol_max: float
    initial_inverse_h: tuple
    calib_levels: int
    h_max: Optional[float]
    mean: Optional[float]
    # seconds per work unit on the reference machine; metadata only
    seconds_per_work: float
    beta: float
    rate: float

    def setup(self, tol: float) -> OptimalSetup:
        return OptimalSetup(self.rates, self.constants, tol, h_max=self.h_max)

    def continuation(self, **overrides) -> ContinuationConfig:
        pilot = Hierarchy(tuple(1 / n for n in self.initial_inverse_h),
                          (10,) * len(self.initial_inverse_h), INTEGER_FEASIBLE)
        opts = dict(tol_max=self.tol_max, initial_hierarchy=pilot, r1=2.0, r2=1.1, L_inc=2,
                    calib_levels=self.calib_levels, c_alpha=self.constants.c_alpha)
        opts.update(overrides)
        return ContinuationConfig(**opts)

    def sampler(self):
        if self.name == "ex2":
            return GbmSampler(GbmParams(), self.rates)
        return SyntheticSampler(SyntheticParams(self.mean, self.constants, self.rates), self.h_max, UniformMeshRule(1.0))

    @property
    def reference_value(self) -> float:
        return EX2_EXACT if self.name == "ex2" else self.mean


_EX1_CONSTANTS = ModelConstants(qw=1.3653, qs=0.1519, v0=0.0565, c_alpha=2.0)

PRESETS = {
    "ex1-gmres": Preset("ex1-gmres", ProblemRates(q1=2, q2=4, d=3, gamma=1.0), _EX1_CONSTANTS,
                        0.5, (4, 6, 8), 3, 0.5, EX1_MEAN, 1e-4, 1.7778, 2.0),
    "ex1-mumps": Preset("ex1-mumps", ProblemRates(q1=2, q2=4, d=3, gamma=1.5), _EX1_CONSTANTS,
                        0.5, (4, 6, 8), 3, 0.5, EX1_MEAN, 3e-6, 1.6018, 2.25),
    "ex2": Preset("ex2", ProblemRates(q1=1, q2=2, d=1, gamma=1.0),
                  ModelConstants(qw=0.0307, qs=0.2630, v0=1.7805, c_alpha=2.0),
                  0.1, (1, 2, 4), 5, 1.0, None, 9e-8, 4.0, 2.0),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise HierarchyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
