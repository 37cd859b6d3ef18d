"""Configuration-space projection: quantum operators, Schrodinger dynamics,
Born probabilities and the Wigner function.

Observables of the form

    A(q, p) = f(q) + sum_k g_k(q) p_k + sum_kl c_kl p_k p_l,   c_kl constant,

are mapped to Hermitian matrices by ``p_k -> -i hbar d/dq_k`` with the
symmetric ordering ``g p -> (g p + p g) / 2``.  Anything of higher order in
``p``, or with ``q``-dependent quadratic coefficients, is rejected because the
ordering is ambiguous.  Time evolution follows ``i hbar dpsi/dt = H psi``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.special import eval_hermite, factorial

from .errors import DimensionError, GridError, QuantizationError
from .expr import ObservableExpr, differentiate, is_zero, parse, substitute
from .field import GridField, PhaseGrid, transport_density
from .flow import IntegratorConfig
from .stencils import axis_derivative

EXACT_CAP = 512


@dataclass(frozen=True)
class ConfigGrid(PhaseGrid):
    """Periodic grid over ``q1..qn`` only."""

    phase: bool = False

    @classmethod
    def box(cls, n: int, q_range, count: int) -> "ConfigGrid":
        return cls((q_range[0],) * n, (q_range[1],) * n, (count,) * n)

    def sample(self, a: ObservableExpr, params: Mapping[str, float] | None = None) -> np.ndarray:
        if a.dim != self.n:
            raise DimensionError(f"observable dim {a.dim} != grid dim {self.n}")
        if any(v.kind == "p" for v in a.variables):
            raise QuantizationError(f"{a} depends on momenta; only f(q) can be sampled "
                                    "on configuration space")
        q = self.mesh(sparse=True)
        return np.broadcast_to(a.compile(params)(q, [0.0] * self.n), self.shape).astype(float)


def wavefunction(grid: ConfigGrid, values, hbar: float = 1.0, normalize: bool = True) -> GridField:
    """Wrap complex samples as a unit-norm ``wavefunction`` field."""
    values = np.asarray(values, dtype=complex)
    if normalize:
        values = values / np.sqrt(grid.integrate(np.abs(values) ** 2).real)
    return GridField(grid, values, "wavefunction", {"hbar": hbar})


def norm(psi: GridField) -> float:
    return float(np.sqrt(np.real(psi.grid.integrate(np.abs(psi.values) ** 2))))


def coherent_state(grid: ConfigGrid, q0, p0, hbar: float = 1.0, omega: float = 1.0,
                   mass: float = 1.0) -> GridField:
    """Minimum-uncertainty packet centred at ``(q0, p0)``."""
    q = grid.mesh(sparse=True)
    q0 = np.broadcast_to(np.asarray(q0, float), (grid.n,))
    p0 = np.broadcast_to(np.asarray(p0, float), (grid.n,))
    s = mass * omega / hbar
    expo = sum(-0.5 * s * (x - a) ** 2 + 1j * b * x / hbar for x, a, b in zip(q, q0, p0))
    return wavefunction(grid, np.broadcast_to(np.exp(expo), grid.shape), hbar)


def oscillator_eigenstate(grid: ConfigGrid, k: int, hbar: float = 1.0, omega: float = 1.0,
                          mass: float = 1.0) -> GridField:
    """k-th eigenfunction of ``p^2/(2m) + m omega^2 q^2 / 2`` (n = 1), Hermite form."""
    if grid.n != 1:
        raise DimensionError("oscillator eigenstates are provided for n = 1")
    x = np.sqrt(mass * omega / hbar) * grid.axis(0)
    vals = eval_hermite(k, x) * np.exp(-0.5 * x ** 2) / np.sqrt(2.0 ** k * factorial(k))
    return wavefunction(grid, vals, hbar)


# --------------------------------------------------------------------------
# operators

@dataclass
class QuantumOperator:
    matrix: sparse.spmatrix
    grid: ConfigGrid
    source: ObservableExpr
    hbar: float
    ordering: str = "symmetric"
    parts: dict = field(default_factory=dict)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def apply(self, psi) -> np.ndarray:
        vals = psi.values if isinstance(psi, GridField) else np.asarray(psi)
        return (self.matrix @ vals.ravel()).reshape(self.grid.shape)

    def hermiticity_error(self) -> float:
        diff = self.matrix - self.matrix.conj().T
        return float(abs(diff).max()) if diff.nnz else 0.0


def decompose(a: ObservableExpr):
    """Split A into ``(f, [g_k], [[c_kl]])`` or raise for non-quantizable input."""
    n = a.dim
    pvars = [f"p{k}" for k in range(1, n + 1)]
    zero_p = {v: 0 for v in pvars}
    for k in pvars:
        for l in pvars:
            second = differentiate(differentiate(a, k), l)
            for m in pvars:
                if not is_zero(differentiate(second, m)):
                    raise QuantizationError(
                        f"{a} is beyond quadratic order in the momenta: operator ordering "
                        "is ambiguous and the observable cannot be quantized")
    f = substitute(a, zero_p)
    g = [substitute(differentiate(a, k), zero_p) for k in pvars]
    c = []
    for k in pvars:
        row = []
        for l in pvars:
            ckl = differentiate(differentiate(a, k), l) * 0.5
            if ckl.variables:
                raise QuantizationError(
                    f"coefficient of {k}*{l} in {a} depends on the coordinates: operator "
                    "ordering is ambiguous and the observable cannot be quantized")
            row.append(ckl)
        c.append(row)
    return f, g, c


def momentum_matrix(grid: ConfigGrid, k: int, hbar: float, stencil: str = "spectral"):
    """``-i hbar d/dq_k`` (k is 0-based)."""
    return (-1j * hbar) * axis_derivative(grid, k, stencil)


def project_operator(a, grid: ConfigGrid, hbar: float = 1.0, stencil: str = "spectral",
                     params: Mapping[str, float] | None = None) -> QuantumOperator:
    """Quantize an observable on a periodic configuration grid.

    Parameters
    ----------
    a : ObservableExpr or str
        Observable in the quantizable family (at most quadratic in the
        momenta, constant quadratic coefficients).
    grid : ConfigGrid
    hbar : float
    stencil : {"spectral", "central"}
        Derivative matrices; ``p_k^2`` uses the matching second derivative.

    Returns
    -------
    QuantumOperator
        Hermitian matrix ``f + sum (g p + p g)/2 + sum c p p``.

    Raises
    ------
    QuantizationError
        Observable outside the quantizable family.
    """
    if not isinstance(grid, ConfigGrid):
        raise GridError("project_operator needs a ConfigGrid")
    if isinstance(a, str):
        a = parse(a, grid.n)
    if a.dim != grid.n:
        raise DimensionError(f"observable dim {a.dim} != grid dim {grid.n}")
    params = dict(params or {})
    f, g, c = decompose(a)
    size = grid.size
    mat = sparse.diags(grid.sample(f, params).ravel().astype(complex))
    mom = [momentum_matrix(grid, k, hbar, stencil) for k in range(grid.n)]
    for k, gk in enumerate(g):
        if is_zero(gk):
            continue
        gd = sparse.diags(grid.sample(gk, params).ravel().astype(complex))
        mat = mat + 0.5 * (gd @ mom[k] + mom[k] @ gd)
    for k in range(grid.n):
        for l in range(grid.n):
            if is_zero(c[k][l]):
                continue
            ckl = float(c[k][l].compile(params)([0.0] * grid.n, [0.0] * grid.n))
            if k == l:
                mat = mat + ckl * (-hbar ** 2) * axis_derivative(grid, k, stencil, order=2)
            else:
                mat = mat + ckl * (mom[k] @ mom[l])
    mat = sparse.csr_matrix(mat, shape=(size, size))
    mat = (0.5 * (mat + mat.conj().T)).tocsr()
    return QuantumOperator(mat, grid, a, hbar, "symmetric", {"f": f, "g": g, "c": c})



def projected_remainder(a, grid: ConfigGrid, hbar: float = 1.0, stencil: str = "spectral",
                        params: Mapping[str, float] | None = None) -> QuantumOperator:
    """Configuration-space image of the remainder ``-i hbar D_A + p dA/dp``.

    With ``dphi/dp = 0`` the derivative term turns into ``-sum_k (dA/dp_k) p_k``
    (momentum operator acting first); the multiplier ``p dA/dp`` is quantized
    with the symmetric ordering.  The quadratic parts cancel, leaving
    ``sum_k [p_k, g_k] / 2 = (hbar / 2i) div g``.  That is anti-Hermitian, so
    the remainder never contributes to the real part of an expectation.
    """
    if isinstance(a, str):
        a = parse(a, grid.n)
    params = dict(params or {})
    _, g, c = decompose(a)
    mom = [momentum_matrix(grid, k, hbar, stencil) for k in range(grid.n)]
    lie = sparse.csr_matrix((grid.size, grid.size), dtype=complex)
    for k in range(grid.n):
        if not is_zero(g[k]):
            lie = lie - sparse.diags(grid.sample(g[k], params).ravel().astype(complex)) @ mom[k]
        for l in range(grid.n):
            if is_zero(c[k][l]):
                continue
            ckl = float(c[k][l].compile(params)([0.0] * grid.n, [0.0] * grid.n))
            if k == l:
                lie = lie - 2 * ckl * (-hbar ** 2) * axis_derivative(grid, k, stencil, order=2)
            else:
                lie = lie - 2 * ckl * (mom[l] @ mom[k])
    pdp = sum(parse(f"p{k + 1}", grid.n) * differentiate(a, f"p{k + 1}") for k in range(grid.n))
    mult = project_operator(pdp, grid, hbar, stencil, params).matrix
    return QuantumOperator(sparse.csr_matrix(lie + mult), grid, a, hbar, "remainder")

def _weighted_vectors(op: QuantumOperator):
    dense = op.dense()
    vals, vecs = scipy.linalg.eigh(0.5 * (dense + dense.conj().T))
    dv = float(np.prod(op.grid.spacing))
    return vals, vecs / np.sqrt(dv)


def spectrum(op: QuantumOperator, k: int | None = None):
    """Lowest ``k`` eigenvalues and grid-normalized eigenvectors (columns)."""
    vals, vecs = _weighted_vectors(op)
    if k is not None:
        vals, vecs = vals[:k], vecs[:, :k]
    return vals, vecs


# --------------------------------------------------------------------------
# dynamics

def _is_split(op: QuantumOperator) -> bool:
    return all(is_zero(gk) for gk in op.parts["g"])


def schrodinger_evolve(psi0: GridField, h, t: float, steps: int = 1000, hbar: float | None = None,
                       method: str = "auto", stencil: str = "spectral",
                       params: Mapping[str, float] | None = None) -> GridField:
    """Advance ``psi0`` to time ``t`` under ``i hbar dpsi/dt = H psi``.

    ``method="split"`` uses Strang splitting with the kinetic factor applied
    in Fourier space (needs ``H = sum c_kl p_k p_l + V(q)``); ``"exact"``
    exponentiates the dense matrix through its eigen-decomposition (grids up
    to 512 points); ``"auto"`` prefers splitting.
    """
    grid = psi0.grid
    hbar = psi0.meta.get("hbar", 1.0) if hbar is None else hbar
    if isinstance(h, str):
        h = parse(h, grid.n)
    op = project_operator(h, grid, hbar, stencil, params)
    if method == "auto":
        method = "split" if _is_split(op) else "exact"
    if method == "exact" and grid.size > EXACT_CAP:
        raise QuantizationError(f"exact evolution is limited to {EXACT_CAP} grid points")
    psi = psi0.values.astype(complex)
    if method == "exact":
        dense = op.dense()
        vals, vecs = scipy.linalg.eigh(0.5 * (dense + dense.conj().T))
        coeff = vecs.conj().T @ psi.ravel()
        psi = (vecs @ (np.exp(-1j * vals * t / hbar) * coeff)).reshape(grid.shape)
    elif method == "split":
        if not _is_split(op):
            raise QuantizationError("split-step evolution needs H = kinetic(p) + V(q)")
        if steps < 1:
            raise ValueError("steps must be positive")
        v = grid.sample(op.parts["f"], params)
        if not np.all(np.isfinite(v)):
            raise QuantizationError("potential is not finite on the grid")
        dt = t / steps
        ks = np.meshgrid(*[2 * np.pi * np.fft.fftfreq(c, d=dx)
                           for c, dx in zip(grid.counts, grid.spacing)], indexing="ij")
        kinetic = np.zeros(grid.shape)
        for a in range(grid.n):
            for b in range(grid.n):
                ckl = op.parts["c"][a][b]
                if not is_zero(ckl):
                    kinetic = kinetic + float(ckl.compile(params)([0.0] * grid.n, [0.0] * grid.n)) \
                        * hbar ** 2 * ks[a] * ks[b]
        half_v = np.exp(-0.5j * v * dt / hbar)
        kin = np.exp(-1j * kinetic * dt / hbar)
        for _ in range(steps):
            psi = half_v * psi
            psi = np.fft.ifftn(kin * np.fft.fftn(psi))
            psi = half_v * psi
    else:
        raise ValueError(f"unknown method {method!r}")
    meta = dict(psi0.meta, hbar=hbar, t=t, method=method)
    return GridField(grid, psi, "wavefunction", meta, check=False)


def qm_expectation(psi: GridField, a, hbar: float | None = None, stencil: str = "spectral",
                   params: Mapping[str, float] | None = None):
    """``<psi, A psi>``; returns ``(value, imaginary residue)``."""
    hbar = psi.meta.get("hbar", 1.0) if hbar is None else hbar
    op = a if isinstance(a, QuantumOperator) else project_operator(a, psi.grid, hbar, stencil, params)
    f = psi.values.ravel()
    val = np.vdot(f, op.matrix @ f) * float(np.prod(psi.grid.spacing))
    return float(val.real), float(abs(val.imag))


@dataclass
class BornRule:
    eigenvalues: np.ndarray
    probabilities: np.ndarray
    vectors: np.ndarray

    def pairs(self) -> list:
        return [(float(a), float(p)) for a, p in zip(self.eigenvalues, self.probabilities)]

    def total(self) -> float:
        return float(np.sum(self.probabilities))

    def mean(self) -> float:
        return float(np.sum(self.eigenvalues * self.probabilities))


def born_rule(psi: GridField, a, hbar: float | None = None, k: int | None = None,
              stencil: str = "spectral", params=None, tol: float = 1e-8) -> BornRule:
    """Probabilities ``|<phi_k, psi>|^2`` of the eigenvalues of the quantized A.

    With ``k`` only the lowest ``k`` eigenpairs are kept; if they miss more
    than ``tol`` of the probability a :class:`QuantizationError` is raised.
    """
    hbar = psi.meta.get("hbar", 1.0) if hbar is None else hbar
    op = a if isinstance(a, QuantumOperator) else project_operator(a, psi.grid, hbar, stencil, params)
    vals, vecs = spectrum(op, k)
    dv = float(np.prod(psi.grid.spacing))
    amp = (vecs.conj().T @ psi.values.ravel()) * dv
    probs = np.abs(amp) ** 2
    captured = float(np.sum(probs))
    total = norm(psi) ** 2
    if total - captured > tol:
        raise QuantizationError(f"eigenbasis captures {captured:.12g} of {total:.12g}; "
                                "increase k or use the full spectrum")
    return BornRule(vals, probs, vecs)


# --------------------------------------------------------------------------
# Wigner function

def wigner_grid(grid: ConfigGrid, hbar: float) -> PhaseGrid:
    """Phase grid whose momentum nodes are ``pi hbar l / L``, l = -N/2..N/2-1."""
    n_pts, length = grid.counts[0], grid.lengths[0]
    dp = np.pi * hbar / length
    return PhaseGrid((grid.lower[0], -dp * (n_pts // 2)),
                     (grid.upper[0], dp * (n_pts - n_pts // 2)),
                     (n_pts, n_pts), "periodic")


def _correlation(psi: np.ndarray) -> np.ndarray:
    """``C[j, m] = conj(psi[j-m]) psi[j+m]`` for m in circular order; zero out of range."""
    n_pts = psi.size
    m = np.fft.fftfreq(n_pts, d=1.0 / n_pts).astype(int)
    j = np.arange(n_pts)[:, None]
    lo, hi = j - m[None, :], j + m[None, :]
    ok = (lo >= 0) & (lo < n_pts) & (hi >= 0) & (hi < n_pts)
    out = np.zeros((n_pts, n_pts), dtype=complex)
    out[ok] = np.conj(psi[lo[ok]]) * psi[hi[ok]]
    return out, m


def wigner_transform(psi: GridField, phase_grid: PhaseGrid | None = None,
                     hbar: float | None = None) -> GridField:
    """Wigner function of a one-dimensional wave function.

    Uses ``W(Q, P) = dq/(pi hbar) sum_m conj(psi(Q - m dq)) psi(Q + m dq)
    exp(-2 i P m dq / hbar)``, with samples outside the box taken as zero.
    On the natural momentum grid (see :func:`wigner_grid`) the sum over m is
    an FFT and the momentum marginal equals ``|psi|^2`` exactly.  A custom
    ``phase_grid`` must share the position nodes; its momenta are evaluated
    by direct summation.  The imaginary residue is stored in
    ``meta["imag_residue"]``.
    """
    grid = psi.grid
    hbar = psi.meta.get("hbar", 1.0) if hbar is None else hbar
    if grid.n != 1:
        raise DimensionError("Wigner transform is implemented for one degree of freedom")
    n_pts, dq = grid.counts[0], grid.spacing[0]
    corr, m = _correlation(psi.values)
    if phase_grid is None:
        phase_grid = wigner_grid(grid, hbar)
        # sum_m C[j,m] exp(-2 pi i l m / N) for l = -N/2..N/2-1
        w = np.fft.fftshift(np.fft.fft(corr, axis=1), axes=1)
    else:
        if phase_grid.n != 1 or phase_grid.counts[0] != n_pts or \
                not np.allclose(phase_grid.axis(0), grid.axis(0), atol=1e-12 * max(1.0, dq)):
            raise GridError("phase grid position nodes must coincide with the wave-function grid")
        pvals = phase_grid.axis(1)
        w = corr @ np.exp(-2j * np.outer(m * dq, pvals) / hbar)
    w = w * dq / (np.pi * hbar)
    imag = float(np.max(np.abs(w.imag)))
    return GridField(phase_grid, w.real.copy(), "wigner", {"hbar": hbar, "imag_residue": imag},
                     check=False)


def wigner_marginal_error(psi: GridField, wig: GridField) -> float:
    """max |sum_P W dP - |psi|^2| over the position nodes."""
    marg = np.sum(wig.values, axis=1) * wig.grid.spacing[1]
    return float(np.max(np.abs(marg - np.abs(psi.values) ** 2)))


# --------------------------------------------------------------------------
# classical limit

@dataclass
class LimitComparison:
    times: np.ndarray
    distances: np.ndarray
    meta: dict = field(default_factory=dict)


def classical_limit_compare(h, psi0: GridField, times: Sequence[float], hbar: float | None = None,
                            rho0: GridField | None = None,
                            cfg: IntegratorConfig = IntegratorConfig(h=0.01),
                            method: str = "exact", params=None) -> LimitComparison:
    """L1 distance between the quantum Wigner function and Liouville transport.

    ``rho0`` defaults to the Wigner function of ``psi0``.  The quantum state
    is propagated sequentially through the sample times; the classical field
    is transported from ``rho0`` to each time in one semi-Lagrangian remap
    (zero inflow at the box edges, no positivity limiting since Wigner
    functions may be negative).
    """
    grid = psi0.grid
    hbar = psi0.meta.get("hbar", 1.0) if hbar is None else hbar
    if grid.n != 1:
        raise DimensionError("classical-limit comparison is implemented for n = 1")
    if isinstance(h, str):
        h = parse(h, 1)
    w0 = wigner_transform(psi0, hbar=hbar)
    if rho0 is None:
        rho0 = w0
    pg = rho0.grid
    # same nodes, but characteristics entering from outside carry nothing
    trunc = PhaseGrid(pg.lower, tuple(l + (c - 1) * d for l, c, d in
                                      zip(pg.lower, pg.counts, pg.spacing)),
                      pg.counts, "truncated")
    start = GridField(trunc, rho0.values, "wigner", check=False)
    cell = float(np.prod(pg.spacing))
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or np.any(times < 0):
        raise ValueError("sample times must be nonnegative and increasing")
    dists = []
    psi, t_prev = psi0, 0.0
    for t in times:
        if t > t_prev:
            psi = schrodinger_evolve(psi, h, t - t_prev, hbar=hbar, method=method, params=params,
                                     steps=max(1, int(np.ceil((t - t_prev) / 1e-3))))
            t_prev = t
        wq = wigner_transform(psi, hbar=hbar).values if t > 0 else w0.values
        rc = transport_density(start, h, t, cfg, params, limiter=False,
                               renormalize=False).values if t > 0 else rho0.values
        dists.append(float(np.sum(np.abs(wq - rc)) * cell))
    return LimitComparison(times, np.asarray(dists), {"hbar": hbar, "generator": str(h)})
