"""Experiment configuration: a JSON file or command-line flags, defaulted from the named presets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .engine import ContinuationConfig, HierarchyMode
from .errors import HierarchyError
from .hierarchy import INTEGER_FEASIBLE, Hierarchy, ModelConstants, ProblemRates, UniformMeshRule
from .optimizer import OptimalSetup
from .presets import EX2_EXACT, Preset, get_preset
from .samplers import GbmParams, GbmSampler, SyntheticParams, SyntheticSampler


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    preset: Preset
    problem: str = "synthetic"
    mode: HierarchyMode = field(default_factory=HierarchyMode)
    tolerances: tuple = (0.01,)
    seeds: tuple = (0,)
    continuation: Optional[ContinuationConfig] = None
    output_dir: Optional[Path] = None
    workers: int = 1

    def __post_init__(self):
        if not self.tolerances or any(not t > 0 for t in self.tolerances):
            raise ConfigError(f"tolerances must be positive, got {self.tolerances}")
        self.tolerances = tuple(sorted((float(t) for t in self.tolerances), reverse=True))
        if len(self.seeds) < 1:
            raise ConfigError("need at least one seed")
        if self.problem not in ("ex2_gbm", "synthetic"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.continuation is None:
            self.continuation = self.preset.continuation()

    @property
    def rates(self) -> ProblemRates:
        return self.preset.rates

    @property
    def reference_value(self) -> float:
        if self.problem == "ex2_gbm" or self.preset.mean is None:
            return EX2_EXACT
        return self.preset.mean

    def setup(self, tol: float) -> OptimalSetup:
        return self.preset.setup(tol)

    def sampler(self):
        p = self.preset
        if self.problem == "ex2_gbm":
            return GbmSampler(GbmParams(), p.rates)
        params = SyntheticParams(self.reference_value, p.constants, p.rates)
        return SyntheticSampler(params, p.h_max, UniformMeshRule(1.0))


def _seeds(value, base: int) -> tuple:
    if isinstance(value, int):
        if value < 1:
            raise ConfigError(f"seeds must be at least 1, got {value}")
        return tuple(range(base, base + value))
    return tuple(int(s) for s in value)


def _custom_preset(base: Preset, spec: dict) -> Preset:
    """Override rates, constants or the reference mean of a preset from a ``problem`` block."""
    rates = ProblemRates(**spec["rates"]) if "rates" in spec else base.rates
    constants = ModelConstants(**spec["constants"]) if "constants" in spec else base.constants
    mean = float(spec.get("mean", base.mean if base.mean is not None else 0.0))
    return Preset(base.name, rates, constants, base.tol_max, base.initial_inverse_h, base.calib_levels,
                  base.h_max, mean, base.seconds_per_work, base.beta, base.rate)


def build_config(data: dict) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a plain dict (parsed JSON or CLI flags)."""
    try:
        preset = get_preset(data.get("preset", "ex2"))
        problem_spec = data.get("problem")
        if isinstance(problem_spec, dict):
            problem = problem_spec.get("type", "synthetic")
            preset = _custom_preset(preset, problem_spec)
        else:
            problem = problem_spec or ("ex2_gbm" if preset.name == "ex2" else "synthetic")
        mode = data.get("mode", "optimal")
        mode = mode if isinstance(mode, HierarchyMode) else HierarchyMode.parse(str(mode))
        tols = data.get("tolerances", [0.01])
        tols = [tols] if isinstance(tols, (int, float)) else list(tols)
        seeds = _seeds(data.get("seeds", 1), int(data.get("seed", 0)))
        cont = dict(data.get("continuation", {}))
        if "initial_inverse_h" in cont:
            inv = cont.pop("initial_inverse_h")
            m = int(cont.pop("initial_samples", 10))
            cont["initial_hierarchy"] = Hierarchy(tuple(1 / n for n in inv), (m,) * len(inv), INTEGER_FEASIBLE)
        continuation = preset.continuation(**cont)
        out = data.get("output_dir")
        return ExperimentConfig(preset, problem, mode, tuple(tols), seeds, continuation,
                                Path(out) if out else None, int(data.get("workers", 1)))
    except ConfigError:
        raise
    except (HierarchyError, TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
