"""Eulerian fields on rectangular phase-space grids.

A :class:`PhaseGrid` samples the box ``q1..qn, p1..pn`` uniformly.  Periodic
grids exclude the upper endpoint (``x_i = lower + i*dx``, ``dx = L/N``) and
integrate with the rectangle rule, which is spectrally accurate for smooth
periodic data.  Truncated grids include both endpoints and integrate with
the trapezoid rule.

Transport is semi-Lagrangian: every grid node is traced backwards along the
flow of the generator and the initial field is read off at the foot point
with cubic B-spline interpolation.  The action field picks up the line
integral of the associated Lagrangian on the way.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .errors import DimensionError, GridError, InvariantError, TransportError, \
    UnsupportedGeneratorError
from .expr import ObservableExpr, associated_lagrangian, gradient, is_zero, parse, poisson
from .flow import IntegratorConfig, integrate

DEFAULT_CAP = 2 ** 20
TRANSPORT_CONFIG = IntegratorConfig(h=0.02)

KINDS = ("density", "action", "classical-state", "wavefunction", "wigner")


@dataclass(frozen=True)
class PhaseGrid:
    """Uniform rectangular grid over ``q1..qn, p1..pn``.

    ``lower``, ``upper`` and ``counts`` have ``2n`` entries (or ``n`` entries
    for a configuration-space grid built with ``phase=False``).
    """

    lower: tuple
    upper: tuple
    counts: tuple
    boundary: str = "periodic"
    cap: int = DEFAULT_CAP
    phase: bool = True

    def __post_init__(self):
        lower = tuple(float(x) for x in self.lower)
        upper = tuple(float(x) for x in self.upper)
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)
        if not (len(lower) == len(upper) == len(counts)) or not counts:
            raise GridError("lower, upper and counts must have equal non-zero length")
        if self.phase and len(counts) % 2:
            raise GridError("a phase-space grid needs an even number (2n) of axes")
        if self.boundary not in ("periodic", "truncated"):
            raise GridError(f"unknown boundary mode {self.boundary!r}")
        if any(c < 4 for c in counts):
            raise GridError("every axis needs at least 4 points")
        if not all(map(math.isfinite, lower + upper)):
            raise GridError("grid bounds must be finite")
        if any(u <= l for l, u in zip(lower, upper)):
            raise GridError("upper bound must exceed lower bound on every axis")
        if self.size > self.cap:
            raise GridError(f"grid has {self.size} points, cap is {self.cap}")

    @classmethod
    def uniform(cls, n: int, q_range, p_range, q_count: int, p_count: int | None = None,
                boundary: str = "periodic", cap: int = DEFAULT_CAP) -> "PhaseGrid":
        """Same bounds and count for all q axes, likewise for all p axes."""
        p_count = q_count if p_count is None else p_count
        return cls((q_range[0],) * n + (p_range[0],) * n,
                   (q_range[1],) * n + (p_range[1],) * n,
                   (q_count,) * n + (p_count,) * n, boundary, cap)

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def n(self) -> int:
        return self.ndim // 2 if self.phase else self.ndim

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def shape(self) -> tuple:
        return self.counts

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def spacing(self) -> tuple:
        if self.periodic:
            return tuple((u - l) / c for l, u, c in zip(self.lower, self.upper, self.counts))
        return tuple((u - l) / (c - 1) for l, u, c in zip(self.lower, self.upper, self.counts))

    @property
    def lengths(self) -> tuple:
        return tuple(u - l for l, u in zip(self.lower, self.upper))

    def axis(self, i: int) -> np.ndarray:
        return self.lower[i] + self.spacing[i] * np.arange(self.counts[i])

    def axes(self) -> list:
        return [self.axis(i) for i in range(self.ndim)]

    def mesh(self, sparse: bool = False) -> list:
        return np.meshgrid(*self.axes(), indexing="ij", sparse=sparse)

    def qp(self, sparse: bool = True):
        """Coordinate arrays split into ``(q list, p list)``."""
        m = self.mesh(sparse=sparse)
        return m[:self.n], m[self.n:]

    def points(self) -> np.ndarray:
        """All nodes as a ``(ndim, size)`` array in row-major order."""
        return np.stack([m.ravel() for m in self.mesh()])

    def weights(self) -> np.ndarray:
        """Quadrature weights (rectangle rule if periodic, trapezoid otherwise)."""
        ws = []
        for i in range(self.ndim):
            w = np.full(self.counts[i], self.spacing[i])
            if not self.periodic:
                w[0] *= 0.5
                w[-1] *= 0.5
            ws.append(w)
        out = ws[0]
        for w in ws[1:]:
            out = np.multiply.outer(out, w)
        return out

    def integrate(self, values) -> complex | float:
        values = np.asarray(values)
        if self.periodic:
            return np.sum(values) * float(np.prod(self.spacing))
        return np.sum(values * self.weights())

    def sample(self, a: ObservableExpr, params: Mapping[str, float] | None = None) -> np.ndarray:
        """Values of an observable at every node."""
        if a.dim != self.n:
            raise DimensionError(f"observable dim {a.dim} != grid dim {self.n}")
        q, p = self.qp()
        return np.broadcast_to(a.compile(params)(q, p), self.shape).astype(float)

    def fractional_index(self, coords) -> np.ndarray:
        """Map physical coordinates, shape (ndim, ...), to fractional node indices."""
        coords = np.asarray(coords, dtype=float)
        lo = np.asarray(self.lower).reshape((-1,) + (1,) * (coords.ndim - 1))
        dx = np.asarray(self.spacing).reshape(lo.shape)
        return (coords - lo) / dx


@dataclass
class GridField:
    """Real or complex values on a :class:`PhaseGrid`, tagged with a kind.

    ``source`` optionally records the observable a field was sampled from;
    action transport then evaluates it exactly at foot points instead of
    interpolating.
    """

    grid: PhaseGrid
    values: np.ndarray
    kind: str = "density"
    meta: dict = field(default_factory=dict)
    source: ObservableExpr | None = None
    check: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.grid.shape:
            raise GridError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if self.kind not in KINDS:
            raise GridError(f"unknown field kind {self.kind!r}")
        if self.check:
            self.validate()

    def validate(self, tol: float = 1e-6):
        if not np.all(np.isfinite(self.values)):
            raise GridError("field contains non-finite values")
        if self.kind == "density":
            if np.iscomplexobj(self.values):
                raise GridError("density field must be real")
            if np.min(self.values) < 0:
                raise GridError(f"density has negative values (min {np.min(self.values):.3e})")
            total = self.grid.integrate(self.values)
            if abs(total - 1.0) > tol:
                raise GridError(f"density integrates to {total:.9g}, not 1")
        elif self.kind == "classical-state":
            total = self.grid.integrate(np.abs(self.values) ** 2)
            if abs(total - 1.0) > tol:
                raise GridError(f"|phi|^2 integrates to {total:.9g}, not 1")
        elif self.kind == "wavefunction":
            total = float(np.real(self.grid.integrate(np.abs(self.values) ** 2)))
            if abs(total - 1.0) > 1e-10:
                raise GridError(f"|psi|^2 integrates to {total:.12g}, not 1")
        elif self.kind == "action" and np.iscomplexobj(self.values):
            raise GridError("action field must be real")

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def integral(self):
        return self.grid.integrate(self.values)

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def copy(self) -> "GridField":
        return GridField(self.grid, self.values.copy(), self.kind, dict(self.meta), self.source,
                         check=False)


def density_from(grid: PhaseGrid, f, params=None, normalize: bool = True) -> GridField:
    """Sample a nonnegative function (observable or ``f(q, p)``) as a density."""
    if isinstance(f, str):
        f = parse(f, grid.n)
    if isinstance(f, ObservableExpr):
        vals = grid.sample(f, params)
    else:
        q, p = grid.qp()
        vals = np.broadcast_to(np.asarray(f(q, p), dtype=float), grid.shape).copy()
    if np.min(vals) < 0:
        raise GridError("density function takes negative values on the grid")
    if normalize:
        total = grid.integrate(vals)
        if not total > 0:
            raise GridError("density function has zero integral on the grid")
        vals = vals / total
    return GridField(grid, vals, "density")


def gaussian_density(grid: PhaseGrid, mean=0.0, var=1.0) -> GridField:
    """Product Gaussian over all phase axes, normalized on the grid."""
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (grid.ndim,))
    var = np.broadcast_to(np.asarray(var, dtype=float), (grid.ndim,))
    mesh = grid.mesh(sparse=True)
    logv = sum(-0.5 * (x - m) ** 2 / v for x, m, v in zip(mesh, mean, var))
    vals = np.broadcast_to(np.exp(logv), grid.shape)
    return GridField(grid, vals / grid.integrate(vals), "density")


def action_from(grid: PhaseGrid, s, params=None) -> GridField:
    """Sample an action field from an observable (kept as ``source``)."""
    if isinstance(s, str):
        s = parse(s, grid.n)
    return GridField(grid, grid.sample(s, params), "action", source=s)


def _interpolate(fld: GridField, foot: np.ndarray, mode: str, cval: float = 0.0) -> np.ndarray:
    idx = fld.grid.fractional_index(foot)
    if fld.is_complex:
        re = ndimage.map_coordinates(fld.values.real, idx, order=3, mode=mode, cval=cval)
        im = ndimage.map_coordinates(fld.values.imag, idx, order=3, mode=mode, cval=0.0)
        return re + 1j * im
    return ndimage.map_coordinates(fld.values, idx, order=3, mode=mode, cval=cval)


def _foot_points(grid: PhaseGrid, gen: ObservableExpr, alpha: float, cfg, params,
                 integrand=None):
    if gen.dim != grid.n:
        raise DimensionError(f"generator dim {gen.dim} != grid dim {grid.n}")
    return integrate(gen, grid.points(), -alpha, cfg, params, integrand=integrand)


def transport_density(rho0: GridField, gen: ObservableExpr, alpha: float,
                      cfg: IntegratorConfig = TRANSPORT_CONFIG,
                      params: Mapping[str, float] | None = None,
                      leak_tol: float = 1e-3, limiter: bool = True,
                      renormalize: bool = True, drift_tol: float = 1e-3) -> GridField:
    """Solve the Liouville equation of ``gen`` for parameter ``alpha``.

    Parameters
    ----------
    rho0 : GridField
        Initial field (``density`` or ``wigner`` kind).
    gen : ObservableExpr
        Generator of the flow.
    alpha : float
        Flow parameter.
    cfg : IntegratorConfig
        Settings for the backward characteristic integration.
    leak_tol : float
        Truncated grids only: maximum tolerated probability whose foot points
        fall outside the box.
    drift_tol : float
        Periodic grids only: maximum tolerated change of the total integral.
        A larger drift means characteristics left the box and wrapped around,
        which is meaningless unless the flow itself is periodic.
    limiter : bool
        Clip interpolated densities to ``[0, max rho0]`` (density kind only).
    renormalize : bool
        Rescale to unit integral; the drift before rescaling is reported.

    Returns
    -------
    GridField
        Same kind as ``rho0``.  ``meta`` holds ``normalization_drift``,
        ``leak``, ``undershoot`` and ``overshoot``.
    """
    if rho0.kind not in ("density", "wigner"):
        raise GridError(f"transport_density needs a density field, got {rho0.kind!r}")
    grid = rho0.grid
    if alpha == 0:
        out = rho0.copy()
        out.meta.update(normalization_drift=0.0, leak=0.0, undershoot=0.0, overshoot=0.0)
        return out
    foot = _foot_points(grid, gen, alpha, cfg, params)
    leak = 0.0
    if grid.periodic:
        vals = _interpolate(rho0, foot, "grid-wrap")
    else:
        vals = _interpolate(rho0, foot, "constant", 0.0)
    vals = vals.reshape(grid.shape)
    undershoot = float(max(0.0, -np.min(vals)))
    overshoot = float(max(0.0, np.max(vals) - np.max(rho0.values)))
    if limiter and rho0.kind == "density":
        vals = np.clip(vals, 0.0, np.max(rho0.values))
    total = float(grid.integrate(vals))
    if not grid.periodic:
        # probability carried out of the box: nodes whose forward image leaves it
        ahead = integrate(gen, grid.points(), alpha, cfg, params)
        lo = np.asarray(grid.lower)[:, None]
        hi = np.asarray(grid.upper)[:, None]
        gone = np.any((ahead < lo) | (ahead > hi), axis=0).reshape(grid.shape)
        leak = float(abs(grid.integrate(np.where(gone, rho0.values, 0.0))))
        if leak > leak_tol:
            raise TransportError(f"probability leaked through the grid boundary: {leak:.3e} "
                                 f"exceeds {leak_tol:.1e}")
    drift = total - float(rho0.integral())
    if grid.periodic and abs(drift) > drift_tol:
        raise TransportError(f"normalization drifted by {drift:.3e} on a periodic grid; "
                             "characteristics wrap around the box (use a truncated grid "
                             "or a larger box)")
    if renormalize and total != 0:
        vals = vals * (float(rho0.integral()) / total)
    meta = dict(normalization_drift=drift, leak=leak, undershoot=undershoot,
                overshoot=overshoot, alpha=alpha, generator=str(gen))
    return GridField(grid, vals, rho0.kind, meta, check=rho0.kind == "density")


def transport_action(s0: GridField, gen: ObservableExpr, alpha: float,
                     cfg: IntegratorConfig = TRANSPORT_CONFIG,
                     params: Mapping[str, float] | None = None) -> GridField:
    """Evolve an action field: ``S(w, alpha) = S0(foot) + int L_A`` along the path.

    The line integral uses composite Simpson quadrature on the integrator
    nodes.  If ``s0.source`` is set the initial action is evaluated exactly at
    the foot points; otherwise it is interpolated (wrapping on periodic
    grids, clamping to the edge value on truncated ones).
    """
    if s0.kind != "action":
        raise GridError(f"transport_action needs an action field, got {s0.kind!r}")
    grid = s0.grid
    if alpha == 0:
        return s0.copy()
    foot, back = _foot_points(grid, gen, alpha, cfg, params,
                              integrand=associated_lagrangian(gen))
    if s0.source is not None:
        start = s0.source.compile(params)(list(foot[:grid.n]), list(foot[grid.n:]))
        start = np.broadcast_to(start, back.shape)
    else:
        start = _interpolate(s0, foot, "grid-wrap" if grid.periodic else "nearest")
    # back = integral over the reversed path, i.e. minus the forward integral
    vals = (start - back).reshape(grid.shape)
    return GridField(grid, vals, "action", dict(alpha=alpha, generator=str(gen)))


def assemble_classical_state(rho: GridField, s: GridField, hbar: float = 1.0) -> GridField:
    """Combine density and action into ``sqrt(rho) * exp(i S / hbar)``."""
    if rho.grid != s.grid:
        raise GridError("density and action live on different grids")
    if rho.kind != "density":
        raise GridError("first argument must be a density field")
    if s.kind != "action":
        raise GridError("second argument must be an action field")
    if not hbar > 0:
        raise ValueError("hbar must be positive")
    phase = np.mod(s.values / hbar, 2.0 * np.pi)
    vals = np.sqrt(rho.values) * np.exp(1j * phase)
    return GridField(rho.grid, vals, "classical-state", dict(hbar=hbar))


def split_classical_state(phi: GridField, hbar: float = 1.0):
    """Inverse of :func:`assemble_classical_state`: ``(rho, S mod 2 pi hbar)``."""
    rho = np.abs(phi.values) ** 2
    s = np.mod(np.angle(phi.values), 2.0 * np.pi) * hbar
    return (GridField(phi.grid, rho, "density", check=False),
            GridField(phi.grid, s, "action", check=False))


def _central_gradient(values: np.ndarray, grid: PhaseGrid) -> list:
    """Second-order central differences; periodic wrap or one-sided at edges."""
    out = []
    for ax, dx in enumerate(grid.spacing):
        if grid.periodic:
            out.append((np.roll(values, -1, axis=ax) - np.roll(values, 1, axis=ax)) / (2 * dx))
        else:
            out.append(np.gradient(values, dx, axis=ax, edge_order=2))
    return out


def bracket_residual(values: np.ndarray, gen: ObservableExpr, grid: PhaseGrid,
                     params=None) -> np.ndarray:
    """Pointwise ``{f, A}`` for a sampled field f, by central differences."""
    n = grid.n
    grads = _central_gradient(values, grid)
    dq, dp = gradient(gen)
    out = np.zeros(grid.shape)
    for k in range(n):
        out = out + grads[k] * grid.sample(dp[k], params) - grads[n + k] * grid.sample(dq[k], params)
    return out


def stationary_density(gen: ObservableExpr, grid: PhaseGrid, f: Callable,
                       invariants: Sequence, params: Mapping[str, float] | None = None) -> GridField:
    """Density that is a function of invariants of ``gen``.

    Each invariant must Poisson-commute with the generator; this is checked
    symbolically (numerically for non-polynomial expressions).  ``f`` receives
    the sampled invariants as positional arrays.  The max-norm of
    ``{sqrt(rho), A}`` on the grid is stored in ``meta["residual"]``.
    """
    invs = [parse(i, grid.n) if isinstance(i, str) else i for i in invariants]
    for inv in invs:
        if not is_zero(poisson(inv, gen)):
            raise InvariantError(f"{inv} is not an invariant of {gen}: "
                                 f"{{inv, A}} = {poisson(inv, gen)}")
    args = [grid.sample(inv, params) for inv in invs]
    vals = np.broadcast_to(np.asarray(f(*args), dtype=float), grid.shape)
    if np.min(vals) < 0:
        raise GridError("stationary density function takes negative values")
    vals = vals / grid.integrate(vals)
    res = bracket_residual(np.sqrt(vals), gen, grid, params)
    if not grid.periodic:
        res = res[(slice(1, -1),) * grid.ndim]
    meta = dict(residual=float(np.max(np.abs(res))), invariants=[str(i) for i in invs])
    return GridField(grid, vals, "density", meta)


# section time tau(w) with d tau / d alpha = 1 along the flow, per generator family
def _family_clock(gen: ObservableExpr, n: int):
    def is_(text):
        return gen.structurally_equal(parse(text, n))

    for k in range(1, n + 1):
        if is_(f"p{k}"):
            return "translation", k, lambda q, p: q[k - 1]
        if is_(f"q{k}"):
            return "boost", k, lambda q, p: -p[k - 1]
        if is_(f"(p{k}^2 + q{k}^2)/2"):
            return "harmonic", k, lambda q, p: np.arctan2(-p[k - 1], q[k - 1])
    if n >= 2 and is_("q1*p2 - q2*p1"):
        return "rotation", 1, lambda q, p: np.arctan2(q[1], q[0])
    return None, 0, None


def stationary_action(gen: ObservableExpr, grid: PhaseGrid, a: float,
                      cfg: IntegratorConfig = IntegratorConfig(h=0.01),
                      params: Mapping[str, float] | None = None) -> GridField:
    """Stationary action for eigen-parameter ``a``: ``-a + {S, A} = L_A``.

    Along the flow the equation reads ``dS/dalpha = a + L_A``.  Each node is
    traced back to the section ``tau = 0`` of a clock function with unit rate
    along the flow, where ``S = 0``, and ``a + L_A`` is integrated forward.
    Supported generators: ``p_k``, ``q_k``, ``(p_k^2 + q_k^2)/2`` and
    ``q1*p2 - q2*p1``.  For the angular clocks the solution jumps across the
    branch cut of ``atan2``; those nodes are excluded from the residual
    stored in ``meta["residual"]``.
    """
    family, k, clock = _family_clock(gen, grid.n)
    if family is None:
        raise UnsupportedGeneratorError(
            f"no characteristic section known for generator {gen}; supported: "
            "p_k, q_k, (p_k^2+q_k^2)/2, q1*p2 - q2*p1")
    q, p = grid.qp(sparse=False)
    tau = np.asarray(clock(q, p), dtype=float)
    lbar = associated_lagrangian(gen)
    if is_zero(lbar):
        back = np.zeros(grid.size)
    else:
        _, back = integrate(gen, grid.points(), -tau.ravel(), cfg, params, integrand=lbar)
    vals = a * tau - back.reshape(grid.shape)

    residual_field = bracket_residual(vals, gen, grid, params) - a - grid.sample(lbar, params)
    # S is not periodic, so drop the outer layer of nodes
    mask = np.zeros(grid.shape, bool)
    mask[tuple(slice(1, -1) for _ in range(grid.ndim))] = True
    if family in ("harmonic", "rotation"):
        # drop stencils crossing the atan2 branch cut and the singular centre
        for ax in range(grid.ndim):
            for shift in (-1, 1):
                mask &= np.abs(np.roll(tau, shift, axis=ax) - tau) < np.pi / 2
        if family == "harmonic":
            r2 = q[k - 1] ** 2 + p[k - 1] ** 2
        else:
            r2 = q[0] ** 2 + q[1] ** 2
        mask &= r2 > (4 * max(grid.spacing)) ** 2
    res = float(np.max(np.abs(residual_field[mask]))) if mask.any() else float("nan")
    meta = dict(residual=res, a=a, family=family, interior_points=int(mask.sum()))
    return GridField(grid, vals, "action", meta, check=True)
