"""MLMC estimation on a hierarchy, calibration of the model constants and the continuation loop."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import CalibrationUnavailable, ConvergenceError, HierarchyError, InfeasibleToleranceError
from .geometric import optimal_geometric_hierarchy
from .hierarchy import (
    INTEGER_FEASIBLE,
    Hierarchy,
    ModelConstants,
    ProblemRates,
    model_variances,
    model_works,
    round_hierarchy,
)
from .optimizer import OptimalSetup, optimal_L, optimal_samples
from .samplers import rng_stream

DEFAULT_BLOCK = 4096
CONSTANT_FLOOR = 1e-12


@dataclass
class LevelStats:
    """Running count, mean and sum of squared deviations of ``Y_l = g_fine - g_coarse``."""

    level: int
    h: float
    h_coarse: Optional[float] = None
    count: int = 0
    mean_diff: float = 0.0
    m2: float = 0.0
    work_done: float = 0.0

    @property
    def var_diff(self) -> float:
        if self.count < 2:
            return math.nan
        return self.m2 / (self.count - 1)

    @classmethod
    def from_samples(cls, level: int, h: float, h_coarse: Optional[float], diffs: np.ndarray, work: float):
        diffs = np.asarray(diffs, dtype=float)
        n = diffs.size
        mean = float(diffs.mean()) if n else 0.0
        m2 = float(np.sum((diffs - mean) ** 2)) if n else 0.0
        return cls(level, h, h_coarse, n, mean, m2, n * float(work))

    def merge(self, other: "LevelStats") -> "LevelStats":
        """Pairwise combination of two disjoint sample sets (Chan et al. update)."""
        if other.count == 0:
            return LevelStats(self.level, self.h, self.h_coarse, self.count, self.mean_diff, self.m2,
                              self.work_done + other.work_done)
        if self.count == 0:
            return LevelStats(self.level, self.h, self.h_coarse, other.count, other.mean_diff, other.m2,
                              self.work_done + other.work_done)
        n = self.count + other.count
        delta = other.mean_diff - self.mean_diff
        mean = self.mean_diff + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return LevelStats(self.level, self.h, self.h_coarse, n, mean, m2, self.work_done + other.work_done)

    def to_dict(self) -> dict:
        return {"level": self.level, "h": self.h, "count": self.count, "mean_diff": self.mean_diff,
                "var_diff": self.var_diff, "work_done": self.work_done}


def _draw_block(sampler, level, h, h_coarse, n, seed, key):
    fine, coarse, work = sampler.sample(level, h, h_coarse, n, rng_stream(seed, key))
    return LevelStats.from_samples(level, h, h_coarse, np.asarray(fine) - np.asarray(coarse), work)


def sample_level(sampler, level: int, h: float, h_coarse: Optional[float], n: int, seed: int,
                 epoch: int = 0, offset: int = 0, workers: int = 1, block_size: int = DEFAULT_BLOCK) -> LevelStats:
    """Draw samples ``offset .. offset+n-1`` of one level.

    Samples are drawn in blocks with stream id ``(level, epoch, first index)``
    and merged in block order, so the result does not depend on ``workers``.
    """
    starts = list(range(offset, offset + n, block_size))
    jobs = [(s, min(block_size, offset + n - s)) for s in starts]

    def run(job):
        start, size = job
        try:
            return _draw_block(sampler, level, h, h_coarse, size, seed, (level, epoch, start))
        except Exception as exc:
            raise RuntimeError(f"sampler failed on level {level} (h={h}, h_coarse={h_coarse}): {exc}") from exc

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(job) for job in jobs]
    total = LevelStats(level, h, h_coarse)
    for part in parts:
        total = total.merge(part)
    return total


def run_fixed_hierarchy(hierarchy: Hierarchy, sampler, seed: int, workers: int = 1,
                        block_size: int = DEFAULT_BLOCK) -> tuple:
    """Plain MLMC estimate on a fixed integer hierarchy; returns ``(estimate, [LevelStats])``."""
    if hierarchy.kind != INTEGER_FEASIBLE:
        raise HierarchyError("run_fixed_hierarchy needs an integer_feasible hierarchy")
    if min(hierarchy.samples) < 2:
        raise HierarchyError("every level needs at least 2 samples")
    h = hierarchy.mesh_sizes
    stats = [
        sample_level(sampler, lvl, h[lvl], h[lvl - 1] if lvl else None, m, seed,
                     workers=workers, block_size=block_size)
        for lvl, m in enumerate(hierarchy.samples)
    ]
    return sum(s.mean_diff for s in stats), stats


def computational_theta(tol: float, hL: float, qw_hat: float, rates: ProblemRates) -> float:
    """Splitting that gives the whole remaining tolerance to the statistical error."""
    bias = qw_hat * hL**rates.q1
    if bias >= tol:
        raise InfeasibleToleranceError(f"estimated bias {bias:.3g} >= tol {tol:.3g}; refine the finest mesh first")
    return 1 - bias / tol


def _wls_slope(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    """Least-squares ``c`` for ``y ~ c x`` with weights ``w``."""
    w = w / np.max(w)
    return float(np.sum(w * x * y) / np.sum(w * x * x))


def calibrate_constants(stats: Sequence[LevelStats], rates: ProblemRates, calib_levels: int,
                        c_alpha: float = 2.0) -> ModelConstants:
    """Fit ``Qw``, ``Qs`` and ``V0`` to level statistics.

    ``Qw`` fits ``|mean_l| ~ Qw |h_{l-1}**q1 - h_l**q1|`` with weights
    ``count/var``; ``Qs`` fits ``var_l ~ Qs h_{l-1}**q2`` with weights
    ``(count-1)/h_{l-1}**(2 q2)``, the inverse variance of a sample variance
    under the model.  Only the deepest ``calib_levels`` levels are used.
    """
    usable = [s for s in stats[1:] if s.count >= 2 and s.h_coarse is not None]
    if len(stats) == 0 or stats[0].count < 2 or len(usable) < 2:
        raise CalibrationUnavailable("need level 0 and at least 2 finer levels with 2+ samples each")
    usable = usable[-max(calib_levels, 2):]
    hf = np.array([s.h for s in usable])
    hc = np.array([s.h_coarse for s in usable])
    count = np.array([s.count for s in usable], dtype=float)
    mean = np.abs([s.mean_diff for s in usable])
    var = np.array([s.var_diff for s in usable])
    all_var = np.array([s.var_diff for s in stats if s.count >= 2])
    var_floor = max(1e-6 * float(np.max(all_var)), 1e-300)

    x_w = np.abs(hc**rates.q1 - hf**rates.q1)
    qw = _wls_slope(x_w, mean, count / np.maximum(var, var_floor))
    x_s = hc**rates.q2
    qs = _wls_slope(x_s, var, (count - 1) / x_s**2)
    v0 = max(stats[0].var_diff, 1e-6 * float(np.max(all_var)))
    return ModelConstants(
        qw=max(qw, CONSTANT_FLOOR), qs=max(qs, CONSTANT_FLOOR), v0=max(v0, CONSTANT_FLOOR), c_alpha=c_alpha
    )


def error_report(stats: Sequence[LevelStats], constants: ModelConstants, theta: float, tol: float,
                 rates: ProblemRates) -> tuple:
    """``(bias_estimate, stat_error_estimate, satisfied)`` for the current samples."""
    if not stats:
        raise HierarchyError("error_report needs at least one level")
    bias = constants.qw * stats[-1].h ** rates.q1
    stat = constants.c_alpha * math.sqrt(sum(s.var_diff / s.count for s in stats if s.count >= 2))
    satisfied = bias <= (1 - theta) * tol and stat <= theta * tol
    return bias, stat, satisfied


@dataclass(frozen=True)
class HierarchyMode:
    """``optimal``, ``geometric`` (optionally with a fixed ``beta``) or ``fixed_theta``."""

    kind: str = "optimal"
    value: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("optimal", "geometric", "fixed_theta"):
            raise HierarchyError(f"unknown hierarchy mode {self.kind!r}")
        if self.kind == "fixed_theta" and not (self.value is not None and 0 < self.value < 1):
            raise HierarchyError("fixed_theta needs a theta in (0, 1)")

    @classmethod
    def parse(cls, text: str) -> "HierarchyMode":
        """``"optimal"``, ``"geometric"``, ``"geometric:4"`` or ``"fixed_theta:0.5"``."""
        kind, _, value = text.partition(":")
        return cls(kind.strip(), float(value) if value else None)

    def __str__(self):
        return self.kind if self.value is None else f"{self.kind}:{self.value:g}"


@dataclass(frozen=True)
class ContinuationConfig:
    tol_max: float
    initial_hierarchy: Hierarchy
    r1: float = 2.0
    r2: float = 1.1
    L_inc: int = 2
    calib_levels: int = 3
    c_alpha: float = 2.0
    # confidence parameters of a Bayesian calibration; kept for config compatibility, unused
    kappa0: float = 0.1
    kappa1: float = 0.1
    max_iterations: int = 100
    final_steps: int = 2

    def __post_init__(self):
        if not self.tol_max > 0:
            raise HierarchyError(f"tol_max must be positive, got {self.tol_max}")
        if not self.r1 > self.r2 > 1:
            raise HierarchyError(f"need r1 > r2 > 1, got r1={self.r1}, r2={self.r2}")
        if self.L_inc < 1 or self.calib_levels < 1 or self.max_iterations < 1:
            raise HierarchyError("L_inc, calib_levels and max_iterations must be at least 1")

    def schedule(self, tol: float) -> list:
        """Tolerances ``tol_max / r1**i`` while above ``r1*tol``, then ``tol*r2**k, ..., tol``."""
        tols = []
        t = self.tol_max
        while t > self.r1 * tol:
            tols.append(t)
            t /= self.r1
        tols.extend(tol * self.r2**k for k in range(self.final_steps, 0, -1))
        tols.append(tol)
        return tols


@dataclass
class IterationRecord:
    iteration: int
    tol: float
    L: int
    theta: float
    bias: float
    stat: float
    work: float
    estimate: float
    hierarchy: Hierarchy
    constants: ModelConstants

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration, "tol": self.tol, "L": self.L, "theta": self.theta,
            "bias": self.bias, "stat": self.stat, "work": self.work, "estimate": self.estimate,
            "hierarchy": self.hierarchy.to_dict(),
            "constants": {"qw": self.constants.qw, "qs": self.constants.qs, "v0": self.constants.v0,
                          "c_alpha": self.constants.c_alpha},
        }


TRACE_COLUMNS = ["iteration", "tol", "L", "theta", "bias", "stat", "work"]


@dataclass
class RunReport:
    estimate: float
    tol: float
    theta_used: float
    bias_estimate: float
    stat_error_estimate: float
    total_work: float
    iterations: List[IterationRecord]
    seed: int
    stats: List[LevelStats] = field(default_factory=list)

    @property
    def hierarchy(self) -> Hierarchy:
        return self.iterations[-1].hierarchy

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate, "tol": self.tol, "theta_used": self.theta_used,
            "bias_estimate": self.bias_estimate, "stat_error_estimate": self.stat_error_estimate,
            "total_work": self.total_work, "seed": self.seed,
            "iterations": [it.to_dict() for it in self.iterations],
            "stats": [s.to_dict() for s in self.stats],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def trace_csv(self) -> str:
        return trace_to_csv(self.iterations)


def trace_to_csv(iterations: Sequence[IterationRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for it in iterations:
        writer.writerow([it.iteration, repr(it.tol), it.L, repr(it.theta), repr(it.bias), repr(it.stat), repr(it.work)])
    return buf.getvalue()


def _build_hierarchy(setup: OptimalSetup, mode: HierarchyMode, min_levels: int, max_levels: int):
    """Best hierarchy with ``min_levels <= L <= max_levels``, or any ``L <= max_levels`` if none is feasible."""
    for lo in (min_levels, 0):
        try:
            if mode.kind == "geometric":
                return optimal_geometric_hierarchy(setup, beta=mode.value, max_levels=max_levels, min_levels=lo)
            theta = mode.value if mode.kind == "fixed_theta" else None
            return optimal_L(setup, max_levels=max_levels, theta=theta, min_levels=lo)[1]
        except InfeasibleToleranceError:
            if lo == 0:
                raise


class _LevelStore:
    """Per-level statistics that survive across iterations while their meshes do."""

    def __init__(self, sampler, seed, workers, block_size):
        self.sampler, self.seed, self.workers, self.block_size = sampler, seed, workers, block_size
        self.stats: List[LevelStats] = []
        self.epochs: List[int] = []

    def variances_for(self, mesh_sizes: Sequence[float], model: np.ndarray) -> np.ndarray:
        """Model variances, raised to the sample variance on levels whose samples will be kept.

        Without this the stopping test, which uses sample variances, can stall
        at the final tolerance because the model keeps asking for the same M.
        """
        v = np.array(model, dtype=float)
        for lvl, h in enumerate(mesh_sizes):
            hc = mesh_sizes[lvl - 1] if lvl else None
            if lvl < len(self.stats):
                old = self.stats[lvl]
                if old.h == h and old.h_coarse == hc and old.count >= 2 and old.var_diff > v[lvl]:
                    v[lvl] = old.var_diff
        return v

    def ensure(self, mesh_sizes: Sequence[float], samples: Sequence[int]) -> float:
        """Bring every level up to its target count; returns the work spent."""
        spent = 0.0
        new_stats = []
        for lvl, (h, m) in enumerate(zip(mesh_sizes, samples)):
            hc = mesh_sizes[lvl - 1] if lvl else None
            if lvl >= len(self.epochs):
                self.epochs.append(0)
            old = self.stats[lvl] if lvl < len(self.stats) else None
            if old is None or old.h != h or old.h_coarse != hc:
                if old is not None:
                    self.epochs[lvl] += 1
                old = LevelStats(lvl, h, hc)
            deficit = max(0, int(m) - old.count)
            if deficit:
                part = sample_level(self.sampler, lvl, h, hc, deficit, self.seed, self.epochs[lvl],
                                    old.count, self.workers, self.block_size)
                spent += part.work_done
                old = old.merge(part)
            new_stats.append(old)
        self.stats = new_stats
        return spent


def cmlmc(config: ContinuationConfig, setup: OptimalSetup, sampler, seed: int,
          hierarchy_mode: HierarchyMode = HierarchyMode(), workers: int = 1,
          block_size: int = DEFAULT_BLOCK) -> RunReport:
    """Continuation MLMC for ``setup.tol``.

    Each iteration recalibrates the constants from all samples so far, builds
    the hierarchy for the current tolerance, rounds it to feasible meshes,
    sets the splitting from the estimated bias and tops up the samples.
    """
    rates, tol = setup.rates, setup.tol
    h_max = setup.h_max if setup.h_max is not None else getattr(sampler, "h_max", None)
    base = OptimalSetup(rates, setup.constants, tol, setup.h_min, h_max)
    store = _LevelStore(sampler, seed, workers, block_size)

    pilot = config.initial_hierarchy
    total_work = store.ensure(pilot.mesh_sizes, pilot.samples)
    constants = ModelConstants(setup.constants.qw, setup.constants.qs, setup.constants.v0, config.c_alpha)
    prev_L = pilot.levels
    schedule = config.schedule(tol)
    trace: List[IterationRecord] = []

    for it in range(config.max_iterations):
        tol_i = schedule[min(it, len(schedule) - 1)]
        if it > 0:
            # the pilot alone is too small to fit anything reliably; iteration 0 runs on the priors
            try:
                constants = calibrate_constants(store.stats, rates, config.calib_levels, config.c_alpha)
            except CalibrationUnavailable:
                pass
        step = base.with_constants(constants).with_tol(tol_i)
        # L may grow by at most L_inc per iteration and does not shrink unless it has to
        real = _build_hierarchy(step, hierarchy_mode, prev_L, prev_L + config.L_inc).hierarchy
        meshes = round_hierarchy(real, sampler.mesh_rule).mesh_sizes
        if hierarchy_mode.kind == "fixed_theta":
            theta = hierarchy_mode.value
        else:
            theta = computational_theta(tol_i, meshes[-1], constants.qw, rates)
        variances = store.variances_for(meshes, model_variances(meshes, constants, rates))
        m = optimal_samples(variances, model_works(meshes, rates), theta, tol_i, constants.c_alpha)
        samples = [max(2, math.ceil(x * (1 - 1e-12))) for x in m]
        hier = Hierarchy(meshes, tuple(samples), INTEGER_FEASIBLE)
        spent = store.ensure(meshes, samples)
        total_work += spent
        prev_L = hier.levels

        estimate = sum(s.mean_diff for s in store.stats)
        try:
            fitted = calibrate_constants(store.stats, rates, config.calib_levels, config.c_alpha)
        except CalibrationUnavailable:
            fitted = constants
        bias, stat, _ = error_report(store.stats, fitted, theta, tol_i, rates)
        trace.append(IterationRecord(it, tol_i, hier.levels, theta, bias, stat, spent, estimate, hier, constants))
        if tol_i == tol and bias + stat <= tol:
            return RunReport(estimate, tol, theta, bias, stat, total_work, trace, seed, list(store.stats))
    raise ConvergenceError(
        f"no convergence to tol={tol} within {config.max_iterations} iterations", trace
    )
