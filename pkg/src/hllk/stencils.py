"""Periodic derivative matrices shared by the phase-space and quantum operators."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import sparse

STENCILS = ("central", "spectral")


def _check(stencil):
    if stencil not in STENCILS:
        raise ValueError(f"unknown stencil {stencil!r}; expected one of {STENCILS}")


@lru_cache(maxsize=64)
def first_derivative(count: int, length: float, stencil: str = "central") -> sparse.csr_matrix:
    """Exactly antisymmetric d/dx on a periodic grid of ``count`` points.

    ``central`` is the two-point centred difference.  ``spectral`` is the
    Fourier differentiation matrix with the unpaired Nyquist mode dropped,
    which is exact on every other grid mode.
    """
    _check(stencil)
    dx = length / count
    if stencil == "central":
        e = np.ones(count)
        g = sparse.diags([e[:-1], -e[:-1]], [1, -1], shape=(count, count), format="lil")
        g[0, count - 1] = -1.0
        g[count - 1, 0] = 1.0
        g = g.tocsr() / (2.0 * dx)
    else:
        k = 2.0 * np.pi * np.fft.fftfreq(count, d=dx)
        if count % 2 == 0:
            k[count // 2] = 0.0
        dense = np.fft.ifft(1j * k[:, None] * np.fft.fft(np.eye(count), axis=0), axis=0).real
        dense = 0.5 * (dense - dense.T)
        g = sparse.csr_matrix(dense)
    return g


@lru_cache(maxsize=64)
def second_derivative(count: int, length: float, stencil: str = "central") -> sparse.csr_matrix:
    """Symmetric d^2/dx^2 on a periodic grid (Nyquist mode kept for ``spectral``)."""
    _check(stencil)
    dx = length / count
    if stencil == "central":
        e = np.ones(count)
        g = sparse.diags([e[:-1], -2.0 * e, e[:-1]], [1, 0, -1], shape=(count, count),
                         format="lil")
        g[0, count - 1] = 1.0
        g[count - 1, 0] = 1.0
        return g.tocsr() / dx ** 2
    k = 2.0 * np.pi * np.fft.fftfreq(count, d=dx)
    dense = np.fft.ifft(-(k ** 2)[:, None] * np.fft.fft(np.eye(count), axis=0), axis=0).real
    return sparse.csr_matrix(0.5 * (dense + dense.T))


def _embed(mat, counts, axis):
    out = None
    for i, c in enumerate(counts):
        factor = mat if i == axis else sparse.identity(c, format="csr")
        out = factor if out is None else sparse.kron(out, factor, format="csr")
    return out


def axis_derivative(grid, axis: int, stencil: str = "central", order: int = 1):
    """Derivative along one axis of a periodic grid, acting on row-major flattened fields."""
    c, length = grid.counts[axis], grid.lengths[axis]
    mat = first_derivative(c, length, stencil) if order == 1 else second_derivative(c, length, stencil)
    return _embed(mat, grid.counts, axis)
