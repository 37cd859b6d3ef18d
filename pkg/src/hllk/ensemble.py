"""Monte-Carlo realisation of phase-space ensembles.

An ensemble is a cloud of i.i.d. start points drawn from a built-in density
(Gaussian, uniform box, or a product of those over blocks of coordinates).
Pushing the cloud through a flow gives the Lagrangian picture (observables
evaluated on moving labels); averaging over the pushed cloud gives the
Eulerian picture.  On identical samples the two coincide exactly.

Sampling is reproducible: the seed feeds a ``numpy.random.SeedSequence`` whose
children seed fixed-size chunks, so any chunked or parallel evaluation draws
the same numbers.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DimensionError
from .expr import ObservableExpr
from .flow import DEFAULT_CONFIG, IntegratorConfig, integrate

CHUNK = 65536


@dataclass(frozen=True)
class Gaussian:
    """Independent normal coordinates with the given means and variances."""

    mean: tuple
    var: tuple

    def __post_init__(self):
        mean = tuple(float(x) for x in np.atleast_1d(self.mean))
        var = tuple(float(x) for x in np.atleast_1d(self.var))
        if len(var) == 1 and len(mean) > 1:
            var = var * len(mean)
        if len(mean) == 1 and len(var) > 1:
            mean = mean * len(var)
        if len(mean) != len(var):
            raise DimensionError("mean and var lengths differ")
        if any(v <= 0 for v in var):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def size(self):
        return len(self.mean)

    @property
    def tag(self):
        return f"gaussian(mean={list(self.mean)}, var={list(self.var)})"

    def draw(self, rng, count):
        return np.asarray(self.mean) + np.sqrt(self.var) * rng.standard_normal((count, self.size))

    def pdf(self, points):
        points = np.atleast_2d(points)
        m, v = np.asarray(self.mean), np.asarray(self.var)
        z = (points - m) ** 2 / v
        return np.exp(-0.5 * z.sum(axis=1)) / np.sqrt(np.prod(2 * np.pi * v))


@dataclass(frozen=True)
class UniformBox:
    low: tuple
    high: tuple

    def __post_init__(self):
        low = tuple(float(x) for x in np.atleast_1d(self.low))
        high = tuple(float(x) for x in np.atleast_1d(self.high))
        if len(low) != len(high):
            raise DimensionError("low and high lengths differ")
        if any(h <= l for l, h in zip(low, high)):
            raise ValueError("box must have positive extent in every coordinate")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def size(self):
        return len(self.low)

    @property
    def tag(self):
        return f"uniform(low={list(self.low)}, high={list(self.high)})"

    def draw(self, rng, count):
        return rng.uniform(self.low, self.high, size=(count, self.size))

    def pdf(self, points):
        points = np.atleast_2d(points)
        lo, hi = np.asarray(self.low), np.asarray(self.high)
        inside = np.all((points >= lo) & (points <= hi), axis=1)
        return inside / np.prod(hi - lo)


@dataclass(frozen=True)
class Product:
    """Concatenation of independent densities over consecutive coordinates."""

    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("product of zero densities")

    @property
    def size(self):
        return sum(p.size for p in self.parts)

    @property
    def tag(self):
        return " x ".join(p.tag for p in self.parts)

    def draw(self, rng, count):
        return np.concatenate([p.draw(rng, count) for p in self.parts], axis=1)

    def pdf(self, points):
        points = np.atleast_2d(points)
        out = np.ones(points.shape[0])
        i = 0
        for part in self.parts:
            out *= part.pdf(points[:, i:i + part.size])
            i += part.size
        return out


@dataclass
class SampleCloud:
    """N equally weighted phase points, rows of an ``(N, 2n)`` array."""

    points: np.ndarray
    seed: int | None = None
    source: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] % 2:
            raise DimensionError("points must have shape (N, 2n)")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("sample cloud contains non-finite points")

    def __len__(self):
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1] // 2

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self), 1.0 / len(self))

    @property
    def q(self):
        return self.points[:, :self.n].T

    @property
    def p(self):
        return self.points[:, self.n:].T

    def to_csv(self, path):
        header = [f"q{k}" for k in range(1, self.n + 1)] + [f"p{k}" for k in range(1, self.n + 1)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in self.points:
                w.writerow([repr(float(x)) for x in row])


def sample(density, count: int, seed: int = 0) -> SampleCloud:
    """Draw ``count`` i.i.d. phase points from ``density``."""
    if count <= 0:
        raise ValueError("ensemble size must be positive")
    if density.size % 2:
        raise DimensionError("density must cover an even number (2n) of coordinates")
    nchunks = -(-count // CHUNK)
    children = np.random.SeedSequence(seed).spawn(nchunks)
    blocks = []
    for i, ss in enumerate(children):
        m = min(CHUNK, count - i * CHUNK)
        blocks.append(density.draw(np.random.default_rng(ss), m))
    return SampleCloud(np.concatenate(blocks, axis=0), seed=seed, source=density.tag)


def _values(observable, cloud: SampleCloud, params=None) -> np.ndarray:
    """Evaluate an observable or a predicate ``f(q, p)`` on every point."""
    q, p = list(cloud.q), list(cloud.p)
    if isinstance(observable, ObservableExpr):
        if observable.dim != cloud.n:
            raise DimensionError(f"observable dim {observable.dim} != ensemble dim {cloud.n}")
        return np.asarray(observable.compile(params)(q, p), dtype=float)
    return np.asarray(observable(cloud.q, cloud.p), dtype=float)


def push_forward(cloud: SampleCloud, gen: ObservableExpr, alpha: float,
                 cfg: IntegratorConfig = DEFAULT_CONFIG, params=None) -> SampleCloud:
    """Move every member along the flow of ``gen``."""
    if gen.dim != cloud.n:
        raise DimensionError(f"generator dim {gen.dim} != ensemble dim {cloud.n}")
    moved = integrate(gen, cloud.points.T, alpha, cfg, params).T
    return SampleCloud(moved, seed=cloud.seed, source=cloud.source,
                       meta={"generator": str(gen), "alpha": alpha})


def expectation_lagrangian(cloud: SampleCloud, observable, gen: ObservableExpr, alpha: float,
                           cfg: IntegratorConfig = DEFAULT_CONFIG,
                           params: Mapping[str, float] | None = None) -> float:
    """Mean of A over the labels, A evaluated where each label has moved to.

    The weights stay attached to the start points; only the observable is
    transported.
    """
    moved = push_forward(cloud, gen, alpha, cfg, params)
    return float(np.mean(_values(observable, moved, params)))


def expectation_eulerian(cloud_flowed: SampleCloud, observable,
                         params: Mapping[str, float] | None = None) -> float:
    """Mean of A over an already transported cloud."""
    return float(np.mean(_values(observable, cloud_flowed, params)))


def indicator(predicate: Callable) -> Callable:
    """Characteristic function of the set ``{(q, p): predicate(q, p)}``."""
    def ind(q, p):
        return np.asarray(predicate(q, p), dtype=float)
    return ind


def measure_invariance_check(density, event: Callable, gen: ObservableExpr, alpha: float,
                             count: int, seed: int = 0, cfg: IntegratorConfig = DEFAULT_CONFIG,
                             params=None, independent: bool = False):
    """Estimate P(E_0, 0) and P(E_alpha, alpha) with E_alpha = Phi_alpha(E_0).

    Membership in the transported set is decided by pulling the transported
    samples back through the inverse flow.  With ``independent=True`` the
    transported probability is estimated on a fresh cloud (seed + 1), so the
    two numbers differ by Monte-Carlo noise only.
    """
    cloud = sample(density, count, seed)
    p_initial = float(np.mean(np.asarray(event(cloud.q, cloud.p), dtype=float)))
    source = sample(density, count, seed + 1) if independent else cloud
    moved = push_forward(source, gen, alpha, cfg, params)
    pulled = integrate(gen, moved.points.T, -alpha, cfg, params)
    n = cloud.n
    p_flowed = float(np.mean(np.asarray(event(pulled[:n], pulled[n:]), dtype=float)))
    return p_initial, p_flowed


def mc_standard_error(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    return float(np.std(values, ddof=1) / np.sqrt(values.size)) if values.size > 1 else float("inf")
