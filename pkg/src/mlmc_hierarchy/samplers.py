"""Coupled level samplers and reproducible random streams.

A sampler draws ``n`` coupled pairs for one level of a hierarchy::

    fine, coarse, work = sampler.sample(level, h_fine, h_coarse, n, rng)

``coarse`` is zero on level 0 (pass ``h_coarse=None``) and ``work`` is the
modelled cost of one pair.  Samplers keep no state beyond their parameters,
so identical generators give identical draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence, Union

import numpy as np

from .errors import HierarchyError
from .hierarchy import ModelConstants, ProblemRates, UniformMeshRule


def rng_stream(seed: int, stream_id: Union[int, Sequence[int]] = ()) -> np.random.Generator:
    """Independent generator for ``(seed, stream_id)``.

    The id is used as a ``SeedSequence`` spawn key, so streams with distinct
    ids are statistically independent and never depend on scheduling.
    """
    key = (stream_id,) if isinstance(stream_id, (int, np.integer)) else tuple(stream_id)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


class Sampler(Protocol):
    rates: ProblemRates
    h_max: Optional[float]

    def mesh_rule(self, h: float) -> float: ...

    def sample(self, level: int, h_fine: float, h_coarse: Optional[float], n: int,
               rng: np.random.Generator) -> tuple: ...


def sample_pair(sampler, level: int, h_fine: float, h_coarse: Optional[float], rng: np.random.Generator) -> tuple:
    """One coupled pair ``(g_fine, g_coarse, work)`` as plain floats."""
    fine, coarse, work = sampler.sample(level, h_fine, h_coarse, 1, rng)
    return float(fine[0]), float(coarse[0]), float(work)


def _steps(T: float, h: float) -> int:
    n = T / h
    k = round(n)
    if k < 1 or abs(n - k) > 1e-9 * max(1.0, n):
        raise HierarchyError(f"T/h must be a positive integer, got T={T}, h={h}")
    return int(k)


@dataclass(frozen=True)
class GbmParams:
    """``du = drift_coef*u dt + vol_coef*u dW`` on ``[0, T]``, payoff on ``u(T)``.

    The payoff is the discounted call ``payoff_scale * exp(-rate*T) * max(u(T) - strike, 0)``
    with ``rate`` equal to ``drift_coef`` unless given.
    """

    T: float = 1.0
    drift_coef: float = 0.05
    vol_coef: float = 0.2
    payoff_scale: float = 10.0
    strike: float = 1.0
    u0: float = 1.0
    discount_rate: Optional[float] = None

    @property
    def discount(self) -> float:
        rate = self.drift_coef if self.discount_rate is None else self.discount_rate
        return math.exp(-rate * self.T)

    def payoff(self, u: np.ndarray) -> np.ndarray:
        return self.payoff_scale * self.discount * np.maximum(u - self.strike, 0.0)

    def exact_value(self) -> float:
        """Black-Scholes value of the payoff (only meaningful with the default discount)."""
        from scipy.stats import norm

        s, k, r, v, T = self.u0, self.strike, self.drift_coef, self.vol_coef, self.T
        if v == 0:
            return self.payoff_scale * self.discount * max(s * math.exp(r * T) - k, 0.0)
        d1 = (math.log(s / k) + (r + v * v / 2) * T) / (v * math.sqrt(T))
        d2 = d1 - v * math.sqrt(T)
        fwd = s * math.exp(r * T) * norm.cdf(d1) - k * norm.cdf(d2)
        return self.payoff_scale * self.discount * fwd


def _milstein(params: GbmParams, n: int, dts: np.ndarray, dws: np.ndarray) -> np.ndarray:
    """Integrate ``n`` GBM paths over steps ``dts`` with increments ``dws`` (shape steps x n)."""
    a, b = params.drift_coef, params.vol_coef
    u = np.full(n, params.u0, dtype=float)
    for dt, dw in zip(dts, dws):
        u = u + a * u * dt + b * u * dw + 0.5 * b * b * u * (dw * dw - dt)
    return u


def gbm_milstein_paths(h: float, n: int, rng: np.random.Generator, params: GbmParams = GbmParams()) -> np.ndarray:
    """``u(T)`` for ``n`` independent Milstein paths with uniform step ``h``."""
    steps = _steps(params.T, h)
    dt = params.T / steps
    dws = rng.standard_normal((steps, n)) * math.sqrt(dt)
    return _milstein(params, n, np.full(steps, dt), dws)


def gbm_milstein_path(h: float, rng: np.random.Generator, params: GbmParams = GbmParams()) -> float:
    return float(gbm_milstein_paths(h, 1, rng, params)[0])


def _merged_grid(n_fine: int, n_coarse: int) -> tuple:
    """Union of the two uniform grids on an integer scale, plus each grid's breakpoints in it."""
    scale = math.lcm(n_fine, n_coarse)
    pts = np.union1d(np.arange(n_fine + 1) * (scale // n_fine), np.arange(n_coarse + 1) * (scale // n_coarse))
    fine_idx = np.searchsorted(pts, np.arange(n_fine) * (scale // n_fine))
    coarse_idx = np.searchsorted(pts, np.arange(n_coarse) * (scale // n_coarse))
    return pts, scale, fine_idx, coarse_idx


@dataclass(frozen=True)
class GbmSampler:
    """Discounted GBM call payoff with Milstein on uniform time grids ``h = T/N``.

    Fine and coarse members share one Brownian path.  When the step ratio is
    not an integer the path is drawn on the union of both grids and each
    member sums the increments over its own steps.
    """

    params: GbmParams = GbmParams()
    rates: ProblemRates = ProblemRates(q1=1, q2=2, d=1, gamma=1.0)

    @property
    def h_max(self) -> float:
        return self.params.T

    def mesh_rule(self, h: float) -> float:
        return UniformMeshRule(self.params.T)(h)

    def work(self, h_fine: float) -> float:
        return h_fine ** -self.rates.dgamma

    def sample(self, level: int, h_fine: float, h_coarse: Optional[float], n: int,
               rng: np.random.Generator) -> tuple:
        p = self.params
        if level == 0 or h_coarse is None:
            u = gbm_milstein_paths(h_fine, n, rng, p)
            return p.payoff(u), np.zeros(n), self.work(h_fine)
        nf, nc = _steps(p.T, h_fine), _steps(p.T, h_coarse)
        if nc >= nf:
            raise HierarchyError(f"coarse mesh {h_coarse} must be larger than fine mesh {h_fine}")
        pts, scale, fine_idx, coarse_idx = _merged_grid(nf, nc)
        dts = np.diff(pts) * (p.T / scale)
        dws = rng.standard_normal((len(dts), n)) * np.sqrt(dts)[:, None]
        fine_dw = np.add.reduceat(dws, fine_idx, axis=0)
        coarse_dw = np.add.reduceat(dws, coarse_idx, axis=0)
        uf = _milstein(p, n, np.full(nf, p.T / nf), fine_dw)
        uc = _milstein(p, n, np.full(nc, p.T / nc), coarse_dw)
        return p.payoff(uf), p.payoff(uc), self.work(h_fine)


@dataclass(frozen=True)
class SyntheticParams:
    mean: float
    constants: ModelConstants
    rates: ProblemRates


@dataclass(frozen=True)
class SyntheticSampler:
    """Normal level differences that follow the bias and variance models exactly.

    Level 0 draws ``N(mean - Qw*h0**q1, V0)``; level ``l`` draws the difference
    ``N(Qw*(h_{l-1}**q1 - h_l**q1), Qs*h_{l-1}**q2)`` and returns it as the fine
    member with a zero coarse member.  Work is accounted, not spent.
    """

    params: SyntheticParams
    h_max: Optional[float] = None
    rule: UniformMeshRule = field(default_factory=UniformMeshRule)

    @property
    def rates(self) -> ProblemRates:
        return self.params.rates

    def mesh_rule(self, h: float) -> float:
        return self.rule(h)

    def work(self, h_fine: float) -> float:
        return h_fine ** -self.rates.dgamma

    def sample(self, level: int, h_fine: float, h_coarse: Optional[float], n: int,
               rng: np.random.Generator) -> tuple:
        c, r = self.params.constants, self.params.rates
        if level == 0 or h_coarse is None:
            mu, var = self.params.mean - c.qw * h_fine**r.q1, c.v0
        else:
            mu, var = c.qw * (h_coarse**r.q1 - h_fine**r.q1), c.qs * h_coarse**r.q2
        return mu + math.sqrt(var) * rng.standard_normal(n), np.zeros(n), self.work(h_fine)
