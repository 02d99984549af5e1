"""Domain types and the work/variance models of an MLMC hierarchy.

A hierarchy is the triplet ``(L, h, M)``: number of levels beyond the
coarsest, mesh sizes ``h_0 > h_1 > ... > h_L`` and samples per level.
Work per sample on level ``l`` is modelled as ``h_l**(-d*gamma)``; the
variance of the level difference as ``V0`` on level 0 and
``Q_S * h_{l-1}**q2`` above it.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import HierarchyError

REAL_VALUED = "real_valued"
INTEGER_FEASIBLE = "integer_feasible"
_KINDS = (REAL_VALUED, INTEGER_FEASIBLE)


@dataclass(frozen=True)
class ProblemRates:
    """Weak order ``q1``, strong order ``q2``, dimension ``d`` and work exponent ``gamma``."""

    q1: float
    q2: float
    d: int = 1
    gamma: float = 1.0

    def __post_init__(self):
        if self.q1 <= 0 or self.q2 <= 0 or self.gamma <= 0:
            raise HierarchyError(f"rates must be positive, got {self}")
        if int(self.d) != self.d or self.d < 1:
            raise HierarchyError(f"d must be a positive integer, got {self.d}")
        if self.q2 > 2 * self.q1 * (1 + 1e-12):
            raise HierarchyError(f"need q2 <= 2*q1, got q1={self.q1}, q2={self.q2}")

    @property
    def dgamma(self) -> float:
        return self.d * self.gamma

    @property
    def chi(self) -> float:
        return self.q2 / self.dgamma

    @property
    def eta(self) -> float:
        return self.q1 / self.dgamma


@dataclass(frozen=True)
class ModelConstants:
    """Bias constant ``qw``, variance-decay constant ``qs``, coarse variance ``v0``, confidence ``c_alpha``."""

    qw: float
    qs: float
    v0: float
    c_alpha: float = 2.0

    def __post_init__(self):
        for name in ("qw", "qs", "v0", "c_alpha"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise HierarchyError(f"{name} must be positive and finite, got {value}")


@dataclass(frozen=True)
class Tolerance:
    tol: float
    theta: float

    def __post_init__(self):
        if not self.tol > 0:
            raise HierarchyError(f"tol must be positive, got {self.tol}")
        if not 0 < self.theta < 1:
            raise HierarchyError(f"theta must lie in (0, 1), got {self.theta}")

    @property
    def bias_budget(self) -> float:
        return (1 - self.theta) * self.tol

    def variance_budget(self, c_alpha: float) -> float:
        return (self.theta * self.tol / c_alpha) ** 2


@dataclass(frozen=True)
class Hierarchy:
    """An MLMC hierarchy ``(L, h, M)``."""

    mesh_sizes: tuple
    samples: tuple
    kind: str = REAL_VALUED

    def __post_init__(self):
        h = tuple(float(x) for x in self.mesh_sizes)
        raw = tuple(self.samples)
        if self.kind == INTEGER_FEASIBLE:
            m = tuple(int(x) for x in self.samples)
        else:
            m = tuple(float(x) for x in self.samples)
        object.__setattr__(self, "mesh_sizes", h)
        object.__setattr__(self, "samples", m)
        if self.kind not in _KINDS:
            raise HierarchyError(f"unknown hierarchy kind {self.kind!r}")
        if len(h) == 0 or len(h) != len(m):
            raise HierarchyError("mesh_sizes and samples must be non-empty and aligned")
        if h[-1] <= 0 or any(a <= b for a, b in zip(h, h[1:])):
            raise HierarchyError(f"mesh sizes must be positive and strictly decreasing: {h}")
        if self.kind == INTEGER_FEASIBLE:
            if any(x < 1 for x in m) or any(int(x) != x for x in raw):
                raise HierarchyError(f"integer hierarchies need integer samples >= 1: {m}")
        elif any(not x > 0 for x in m):
            raise HierarchyError(f"samples must be positive: {m}")

    @property
    def levels(self) -> int:
        """``L``, the index of the finest level."""
        return len(self.mesh_sizes) - 1

    def to_dict(self) -> dict:
        return {"L": self.levels, "h": list(self.mesh_sizes), "M": list(self.samples), "kind": self.kind}

    @classmethod
    def from_dict(cls, data: dict) -> "Hierarchy":
        hier = cls(tuple(data["h"]), tuple(data["M"]), data.get("kind", REAL_VALUED))
        if "L" in data and int(data["L"]) != hier.levels:
            raise HierarchyError(f"L={data['L']} does not match {len(hier.mesh_sizes)} mesh sizes")
        return hier

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Hierarchy":
        return cls.from_dict(json.loads(text))


def level_work(h: float, rates: ProblemRates) -> float:
    """Modelled cost of one sample on a mesh of size ``h``."""
    if not h > 0:
        raise ValueError(f"mesh size must be positive, got {h}")
    return h ** (-rates.dgamma)


def model_works(mesh_sizes: Sequence[float], rates: ProblemRates) -> np.ndarray:
    return np.array([level_work(h, rates) for h in mesh_sizes])


def model_variances(mesh_sizes: Sequence[float], constants: ModelConstants, rates: ProblemRates) -> np.ndarray:
    h = np.asarray(mesh_sizes, dtype=float)
    v = np.empty_like(h)
    v[0] = constants.v0
    v[1:] = constants.qs * h[:-1] ** rates.q2
    return v


def level_variance_model(level: int, hierarchy: Hierarchy, constants: ModelConstants, rates: ProblemRates) -> float:
    if not 0 <= level <= hierarchy.levels:
        raise IndexError(f"level {level} outside 0..{hierarchy.levels}")
    if level == 0:
        return constants.v0
    return constants.qs * hierarchy.mesh_sizes[level - 1] ** rates.q2


def total_work(hierarchy: Hierarchy, rates: ProblemRates) -> float:
    return float(np.dot(hierarchy.samples, model_works(hierarchy.mesh_sizes, rates)))


def estimator_variance(hierarchy: Hierarchy, variances: Sequence[float]) -> float:
    if len(variances) != len(hierarchy.samples):
        raise HierarchyError(f"{len(variances)} variances for {len(hierarchy.samples)} levels")
    return float(np.sum(np.asarray(variances, dtype=float) / np.asarray(hierarchy.samples, dtype=float)))


def model_bias(hierarchy: Hierarchy, constants: ModelConstants, rates: ProblemRates) -> float:
    return constants.qw * hierarchy.mesh_sizes[-1] ** rates.q1


@dataclass(frozen=True)
class UniformMeshRule:
    """Feasible meshes ``h = length / N`` with ``N`` a positive integer.

    With ``length=1`` this is the reciprocal-integer rule of a uniform mesh
    on the unit cube; with ``length=T`` it is a uniform time grid on ``[0, T]``.
    """

    length: float = 1.0

    def subdivisions(self, h: float) -> int:
        ratio = self.length / h
        # guard against 1/(1/3) style round-off pushing an exact integer up
        return max(1, math.ceil(ratio * (1 - 1e-12)))

    def __call__(self, h: float) -> float:
        return self.length / self.subdivisions(h)


MeshRule = Callable[[float], float]


def round_hierarchy(real: Hierarchy, mesh_rule: MeshRule = UniformMeshRule()) -> Hierarchy:
    """Round a real-valued hierarchy to a feasible one.

    Each mesh is refined to the nearest feasible mesh not larger than it and
    each sample count is ceiled, ignoring a relative excess below 1e-12 so
    that rounding noise in the closed forms does not buy an extra sample.
    Levels that collapse onto the same mesh are merged by summing their
    sample counts.
    """
    meshes: list = []
    samples: list = []
    for h, m in zip(real.mesh_sizes, real.samples):
        hr = mesh_rule(h)
        mr = max(1, math.ceil(m * (1 - 1e-12)))
        if meshes and math.isclose(hr, meshes[-1], rel_tol=1e-12):
            samples[-1] += mr
            continue
        meshes.append(hr)
        samples.append(mr)
    return Hierarchy(tuple(meshes), tuple(samples), INTEGER_FEASIBLE)


def hierarchy_table(hierarchy: Hierarchy, rates: ProblemRates, constants: ModelConstants | None = None) -> list:
    works = model_works(hierarchy.mesh_sizes, rates)
    variances = (
        model_variances(hierarchy.mesh_sizes, constants, rates)
        if constants is not None
        else [float("nan")] * len(works)
    )
    return [
        {"level": i, "h": h, "M": m, "W": float(w), "V": float(v)}
        for i, (h, m, w, v) in enumerate(zip(hierarchy.mesh_sizes, hierarchy.samples, works, variances))
    ]


def hierarchy_to_csv(hierarchy: Hierarchy, rates: ProblemRates, constants: ModelConstants | None = None) -> str:
    """CSV text with columns ``level,h,M,W,V``."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["level", "h", "M", "W", "V"], lineterminator="\n")
    writer.writeheader()
    for row in hierarchy_table(hierarchy, rates, constants):
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()
