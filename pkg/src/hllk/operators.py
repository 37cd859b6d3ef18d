"""Phase-space operators generated by observables.

On a periodic :class:`~hllk.field.PhaseGrid` the Lie derivative
``D_A f = {A, f}`` is discretised in split form

    D = sum_axes (C G + G C) / 2,

where ``G`` is an antisymmetric derivative matrix and ``C`` the diagonal of
the Hamiltonian vector field component on that axis.  ``D`` is then exactly
antisymmetric, so

    L_A = i hbar D - diag(Lbar_A)

is Hermitian to round-off.  Fields are flattened in row-major order and the
inner product carries the cell volume, ``<f, g> = sum conj(f) g dV``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import DimensionError, GridError, SpectralError
from .expr import ObservableExpr, associated_lagrangian, gradient, parse, poisson
from .field import GridField, PhaseGrid
from .stencils import axis_derivative

DENSE_CAP = 4096
CLUSTER_GAP = 1e-9


@dataclass
class PhaseOperator:
    """A matrix acting on flattened grid fields."""

    grid: PhaseGrid
    matrix: sparse.spmatrix
    generator: ObservableExpr
    hbar: float
    kind: str = "L"
    stencil: str = "central"

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def apply(self, f):
        """Apply to a GridField or array of grid shape; returns an array of grid shape."""
        vals = f.values if isinstance(f, GridField) else np.asarray(f)
        return (self.matrix @ vals.ravel()).reshape(self.grid.shape)

    def hermiticity_error(self) -> float:
        diff = self.matrix - self.matrix.conj().T
        return float(abs(diff).max()) if diff.nnz else 0.0

    def __matmul__(self, other):
        return self.matrix @ other


def _require_periodic(grid: PhaseGrid):
    if not grid.periodic:
        raise GridError("operator algebra needs a periodic grid (Hermiticity fails at a "
                        "truncated boundary)")


def _lie_matrix(gen: ObservableExpr, grid: PhaseGrid, stencil: str, params) -> sparse.csr_matrix:
    if gen.dim != grid.n:
        raise DimensionError(f"generator dim {gen.dim} != grid dim {grid.n}")
    n = grid.n
    dq, dp = gradient(gen)
    # {A, f} = sum_k dA/dq_k df/dp_k - dA/dp_k df/dq_k
    coeffs = [-d for d in dp] + list(dq)
    total = sparse.csr_matrix((grid.size, grid.size))
    for axis, c in enumerate(coeffs):
        if c.is_constant and float(grid.sample(c, params).flat[0]) == 0.0:
            continue
        cdiag = sparse.diags(grid.sample(c, params).ravel())
        g = axis_derivative(grid, axis, stencil)
        total = total + 0.5 * (cdiag @ g + g @ cdiag)
    return total.tocsr()


def build_lie_derivative(gen: ObservableExpr, grid: PhaseGrid, hbar: float = 1.0,
                         stencil: str = "central",
                         params: Mapping[str, float] | None = None) -> PhaseOperator:
    """Real antisymmetric matrix of ``f -> {A, f}``."""
    _require_periodic(grid)
    return PhaseOperator(grid, _lie_matrix(gen, grid, stencil, params), gen, hbar, "lie", stencil)


def build_L_operator(gen: ObservableExpr, grid: PhaseGrid, hbar: float = 1.0,
                     stencil: str = "central",
                     params: Mapping[str, float] | None = None) -> PhaseOperator:
    """Hermitian matrix ``i hbar D_A - diag(Lbar_A)``.

    Parameters
    ----------
    gen : ObservableExpr
        Generating observable A.
    grid : PhaseGrid
        Periodic phase-space grid.
    hbar : float
        Positive constant multiplying the derivative part.
    stencil : {"central", "spectral"}
        Derivative matrix used along each axis.

    Returns
    -------
    PhaseOperator
    """
    _require_periodic(grid)
    if not hbar > 0:
        raise ValueError("hbar must be positive")
    d = _lie_matrix(gen, grid, stencil, params)
    lbar = grid.sample(associated_lagrangian(gen), params).ravel()
    mat = (1j * hbar) * d - sparse.diags(lbar.astype(complex))
    return PhaseOperator(grid, mat.tocsr(), gen, hbar, "L", stencil)


def delta_operator(gen: ObservableExpr, grid: PhaseGrid, hbar: float = 1.0,
                   stencil: str = "central", params=None) -> sparse.csr_matrix:
    """Matrix of the remainder ``A - L_A = -i hbar D_A + diag(sum_k p_k dA/dp_k)``.

    Built from the same stencil as :func:`build_L_operator`, so the two add up
    to ``diag(A)`` exactly.
    """
    d = _lie_matrix(gen, grid, stencil, params)
    _, dp = gradient(gen)
    n = grid.n
    q, p = grid.qp()
    pdp = np.zeros(grid.shape)
    for k in range(n):
        pdp = pdp + p[k] * grid.sample(dp[k], params)
    return ((-1j * hbar) * d + sparse.diags(pdp.ravel().astype(complex))).tocsr()


# --------------------------------------------------------------------------
# spectra

@dataclass
class Spectrum:
    """Eigenpairs of a Hermitian phase operator.

    ``vectors`` has one column per eigenvalue and is orthonormal under the
    grid inner product (cell volume included).
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    grid: PhaseGrid
    report: dict = field(default_factory=dict)

    def __len__(self):
        return self.eigenvalues.size

    def field(self, k: int) -> GridField:
        return GridField(self.grid, self.vectors[:, k].reshape(self.grid.shape),
                         "classical-state", {"eigenvalue": float(self.eigenvalues[k])})

    @property
    def complete(self) -> bool:
        return len(self) == self.grid.size


def _orthonormalize_clusters(vals, vecs, gap=CLUSTER_GAP):
    start = 0
    for i in range(1, vals.size + 1):
        if i == vals.size or vals[i] - vals[i - 1] > gap:
            if i - start > 1:
                qmat, _ = np.linalg.qr(vecs[:, start:i])
                vecs[:, start:i] = qmat
            start = i
    return vecs


def eigensolve(op: PhaseOperator, k: int | None = None, check_general: bool = False) -> Spectrum:
    """Eigenpairs of ``op`` with the ``k`` smallest |eigenvalue|.

    Dense Hermitian solver up to 4096 unknowns, shift-invert Lanczos above.
    The report holds the largest imaginary part of the Rayleigh quotients
    (and of a non-symmetric solve when ``check_general``), the Gram and
    eigen-residuals, and the fraction of the space captured.
    """
    m = op.size
    k = m if k is None else int(k)
    if not 1 <= k <= m:
        raise ValueError(f"k must be between 1 and {m}")
    dv = float(np.prod(op.grid.spacing))
    herm = op.hermiticity_error()
    report = {"hermiticity": herm, "solver": "dense" if m <= DENSE_CAP else "iterative"}
    if m <= DENSE_CAP:
        dense = op.dense()
        vals, vecs = scipy.linalg.eigh(0.5 * (dense + dense.conj().T))
        if check_general:
            report["general_imag"] = float(np.max(np.abs(np.linalg.eigvals(dense).imag)))
    else:
        if k >= m - 1:
            raise SpectralError("the iterative solver cannot return the full spectrum")
        shift = -1e-6 * max(1.0, float(abs(op.matrix).max()))
        try:
            vals, vecs = splinalg.eigsh(op.matrix, k=k, sigma=shift, which="LM")
        except (splinalg.ArpackNoConvergence, RuntimeError) as exc:
            raise SpectralError(f"iterative eigensolver failed: {exc}") from exc
    order = np.argsort(np.abs(vals), kind="stable")[:k]
    order = order[np.argsort(vals[order], kind="stable")]
    vals = np.real(vals[order])
    vecs = _orthonormalize_clusters(vals, np.array(vecs[:, order]))
    av = op.matrix @ vecs
    rayleigh = np.einsum("ij,ij->j", vecs.conj(), av)
    report["imag_residue"] = float(np.max(np.abs(rayleigh.imag)))
    if "general_imag" in report:
        report["imag_residue"] = max(report["imag_residue"], report["general_imag"])
    report["residual"] = float(np.max(np.linalg.norm(av - vecs * vals, axis=0)))
    gram = vecs.conj().T @ vecs
    report["gram_residual"] = float(np.max(np.abs(gram - np.eye(k))))
    report["completeness"] = k / m
    # rescale to unit norm under the grid inner product
    return Spectrum(vals, vecs / np.sqrt(dv), op.grid, report)


# --------------------------------------------------------------------------
# commutators

def _test_fields(grid: PhaseGrid, count: int = 3, seed: int = 0) -> np.ndarray:
    """Smooth complex fields localised well inside the box (negligible at the seam)."""
    rng = np.random.default_rng(seed)
    mesh = grid.mesh(sparse=True)
    out = []
    for _ in range(count):
        env = 0.0
        phase = 0.0
        for x, lo, length in zip(mesh, grid.lower, grid.lengths):
            centre = lo + length * (0.5 + rng.uniform(-0.05, 0.05))
            env = env + (x - centre) ** 2 / (2 * (length / 16) ** 2)
            phase = phase + 2 * np.pi * rng.integers(-2, 3) * x / length
        out.append(np.broadcast_to(np.exp(-env + 1j * phase), grid.shape).ravel())
    return np.stack(out, axis=1)


def commutator_residual(gen_a: ObservableExpr, gen_b: ObservableExpr, grid: PhaseGrid,
                        hbar: float = 1.0, stencil: str = "central", mode: str = "domain",
                        params: Mapping[str, float] | None = None) -> float:
    """Defect of ``[L_A, L_B] = -(hbar/i) L_{A,B}``.

    ``mode="matrix"`` returns the max-norm of the defect matrix.  A commutator
    has zero trace while ``L_{A,B}`` generally does not (for q and p it is
    a multiple of the identity), so the matrix defect cannot vanish on a
    finite grid.  ``mode="domain"`` instead applies the defect to smooth
    fields localised away from the periodic seam and returns
    ``max |R f| / max |f|``, which measures the identity on the functions
    the grid resolves.
    """
    if mode not in ("matrix", "domain"):
        raise ValueError("mode must be 'matrix' or 'domain'")
    la = build_L_operator(gen_a, grid, hbar, stencil, params).matrix
    lb = build_L_operator(gen_b, grid, hbar, stencil, params).matrix
    lab = build_L_operator(poisson(gen_a, gen_b), grid, hbar, stencil, params).matrix
    if mode == "matrix":
        defect = la @ lb - lb @ la + (-1j * hbar) * lab
        return float(abs(defect).max()) if defect.nnz else 0.0
    f = _test_fields(grid)
    rf = la @ (lb @ f) - lb @ (la @ f) + (-1j * hbar) * (lab @ f)
    return float(np.max(np.abs(rf)) / np.max(np.abs(f)))


def _weighted_inner(u, v, dv):
    return (u.conj().T @ v) * dv


@dataclass
class JointReport:
    commuting: bool
    commutator: float
    a: np.ndarray = None
    b: np.ndarray = None
    vectors: np.ndarray = None
    residual_a: float = float("nan")
    residual_b: float = float("nan")


def simultaneous_eigenstate_check(gen_a: ObservableExpr, gen_b: ObservableExpr, grid: PhaseGrid,
                                  hbar: float = 1.0, k: int | None = None,
                                  stencil: str = "central", tol: float = 1e-8,
                                  params=None) -> JointReport:
    """Joint eigenvectors of ``L_A`` and ``L_B`` if the two matrices commute.

    ``L_B`` is diagonalised inside every eigenvalue cluster of ``L_A``.  A
    non-commuting pair yields ``commuting=False`` and no eigenpairs.
    """
    op_a = build_L_operator(gen_a, grid, hbar, stencil, params)
    op_b = build_L_operator(gen_b, grid, hbar, stencil, params)
    comm = op_a.matrix @ op_b.matrix - op_b.matrix @ op_a.matrix
    size = float(abs(comm).max()) if comm.nnz else 0.0
    if size > tol:
        return JointReport(False, size)
    spec = eigensolve(op_a)
    dv = float(np.prod(grid.spacing))
    vals, vecs = spec.eigenvalues, spec.vectors.copy()
    bmat = op_b.matrix
    start = 0
    for i in range(1, vals.size + 1):
        if i == vals.size or vals[i] - vals[i - 1] > 1e-8:
            block = vecs[:, start:i]
            sub = _weighted_inner(block, bmat @ block, dv)
            _, w = scipy.linalg.eigh(0.5 * (sub + sub.conj().T))
            vecs[:, start:i] = block @ w
            start = i
    bvals = np.real(np.einsum("ij,ij->j", vecs.conj(), bmat @ vecs) * dv)
    ra = np.linalg.norm(op_a.matrix @ vecs - vecs * vals, axis=0) * np.sqrt(dv)
    rb = np.linalg.norm(bmat @ vecs - vecs * bvals, axis=0) * np.sqrt(dv)
    if k is not None:
        order = np.argsort(np.abs(vals) + np.abs(bvals), kind="stable")[:k]
        vals, bvals, vecs, ra, rb = vals[order], bvals[order], vecs[:, order], ra[order], rb[order]
    return JointReport(True, size, vals, bvals, vecs, float(np.max(ra)), float(np.max(rb)))


# --------------------------------------------------------------------------
# expectation values

def _as_expr(a, n):
    return parse(a, n) if isinstance(a, str) else a


def expectation_direct(rho: GridField, a, params: Mapping[str, float] | None = None) -> float:
    """Quadrature of ``A * rho`` over the grid."""
    a = _as_expr(a, rho.grid.n)
    return float(np.real(rho.grid.integrate(rho.grid.sample(a, params) * rho.values)))


@dataclass(frozen=True)
class OperatorExpectation:
    total: float
    main: float
    delta: float
    imag_residue: float


def expectation_operator(phi: GridField, a, hbar: float = 1.0, stencil: str = "central",
                         params: Mapping[str, float] | None = None) -> OperatorExpectation:
    """Split the expectation of A into ``<phi, L_A phi>`` plus a remainder.

    The remainder uses the same discrete derivatives as ``L_A``; the two
    terms add up to ``sum A |phi|^2 dV`` to round-off, whatever the phase.
    """
    grid = phi.grid
    a = _as_expr(a, grid.n)
    f = phi.values.ravel()
    dv = float(np.prod(grid.spacing))
    lop = build_L_operator(a, grid, hbar, stencil, params).matrix
    main = np.vdot(f, lop @ f) * dv
    delta = np.vdot(f, delta_operator(a, grid, hbar, stencil, params) @ f) * dv
    imag = max(abs(main.imag), abs((main + delta).imag))
    return OperatorExpectation(float((main + delta).real), float(main.real), float(delta.real), imag)


@dataclass(frozen=True)
class SpectralExpectation:
    sum_term: float
    delta: float
    total: float
    captured: float


def expectation_spectral(phi: GridField, spectrum: Spectrum, a, hbar: float = 1.0,
                         stencil: str = "central", params=None,
                         tol: float = 1e-6) -> SpectralExpectation:
    """``sum_k a_k |<phi_k, phi>|^2`` plus the same remainder as the operator form."""
    grid = phi.grid
    a = _as_expr(a, grid.n)
    f = phi.values.ravel()
    dv = float(np.prod(grid.spacing))
    coeff = (spectrum.vectors.conj().T @ f) * dv
    weights = np.abs(coeff) ** 2
    norm = float(np.real(np.vdot(f, f)) * dv)
    captured = float(np.sum(weights))
    if norm - captured > tol * max(norm, 1.0):
        raise SpectralError(f"spectrum captures {captured:.9g} of norm {norm:.9g}")
    sum_term = float(np.sum(spectrum.eigenvalues * weights))
    delta = float(np.real(np.vdot(f, delta_operator(a, grid, hbar, stencil, params) @ f) * dv))
    return SpectralExpectation(sum_term, delta, sum_term + delta, captured)


@dataclass
class BornHistogram:
    """Density ``W(a)`` of the values of A under rho, on bins of width ``edges[1]-edges[0]``."""

    edges: np.ndarray
    density: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def total(self) -> float:
        return float(np.sum(self.density * self.widths))

    def mean(self) -> float:
        return float(np.sum(self.centers * self.density * self.widths))


def born_histogram(rho: GridField, a, bins=64, value_range=None,
                   params: Mapping[str, float] | None = None) -> BornHistogram:
    """Histogram of the level sets of A weighted by rho.

    Each grid cell contributes its probability ``rho dV`` to the bin holding
    ``A`` at the node.  A constant observable yields one occupied bin
    centred on the constant.
    """
    grid = rho.grid
    a = _as_expr(a, grid.n)
    vals = grid.sample(a, params).ravel()
    w = (rho.values * (grid.weights() if not grid.periodic else np.prod(grid.spacing))).ravel()
    if np.ndim(bins) == 0:
        bins = int(bins)
        if bins < 1:
            raise ValueError("need at least one bin")
        lo, hi = value_range if value_range is not None else (float(vals.min()), float(vals.max()))
        if hi < lo:
            raise ValueError("empty value range")
        if hi == lo:
            # a single level set: one bin centred on the value
            half = 0.5 if lo == 0 else 0.5e-3 * abs(lo)
            edges = np.array([lo - half, lo + half])
        else:
            pad = 1e-9 * (hi - lo)
            edges = np.linspace(lo - pad, hi + pad, bins + 1)
    else:
        edges = np.asarray(bins, dtype=float)
    widths = np.diff(edges)
    if edges.ndim != 1 or edges.size < 2 or np.any(widths <= 0):
        raise ValueError("degenerate bin width")
    mass, _ = np.histogram(vals, edges, weights=w)
    return BornHistogram(edges, mass / widths)


def spectrum_to_csv(spectrum: Spectrum, path):
    with open(path, "w") as fh:
        fh.write("k,eigenvalue\n")
        for k, v in enumerate(spectrum.eigenvalues):
            fh.write(f"{k},{float(v)!r}\n")
