"""Binary and CSV serialization of grid fields.

Binary layout (all little-endian)::

    8s   magic  b"HLLKGF01"
    H    format version (1)
    H    number of axes d
    B    kind code (index into KINDS)
    B    1 if complex
    B    1 if periodic
    B    1 if phase-space grid (axes q1..qn, p1..pn), 0 for configuration space
    per axis: lower (d), upper (d), count (q)
    payload: row-major float64 (real) or complex128 values
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import GridError
from .field import KINDS, GridField, PhaseGrid

MAGIC = b"HLLKGF01"
VERSION = 1
_HEAD = struct.Struct("<8sHHBBBB")
_AXIS = struct.Struct("<ddq")


def to_bytes(fld: GridField) -> bytes:
    g = fld.grid
    parts = [_HEAD.pack(MAGIC, VERSION, g.ndim, KINDS.index(fld.kind), int(fld.is_complex),
                        int(g.periodic), int(g.phase))]
    parts += [_AXIS.pack(l, u, c) for l, u, c in zip(g.lower, g.upper, g.counts)]
    dtype = "<c16" if fld.is_complex else "<f8"
    parts.append(np.ascontiguousarray(fld.values, dtype=dtype).tobytes())
    return b"".join(parts)


def from_bytes(data: bytes) -> GridField:
    if len(data) < _HEAD.size:
        raise GridError("truncated grid-field header")
    magic, version, ndim, kind, cplx, periodic, phase = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise GridError("not a grid-field file (bad magic)")
    if version != VERSION:
        raise GridError(f"unsupported grid-field version {version}")
    off = _HEAD.size
    axes = [_AXIS.unpack_from(data, off + i * _AXIS.size) for i in range(ndim)]
    off += ndim * _AXIS.size
    lower, upper, counts = zip(*axes)
    if phase:
        grid = PhaseGrid(lower, upper, counts, "periodic" if periodic else "truncated")
    else:
        from .quantize import ConfigGrid
        grid = ConfigGrid(lower, upper, counts, "periodic" if periodic else "truncated")
    dtype = "<c16" if cplx else "<f8"
    vals = np.frombuffer(data, dtype=dtype, offset=off)
    if vals.size != grid.size:
        raise GridError(f"payload holds {vals.size} values, grid needs {grid.size}")
    return GridField(grid, vals.reshape(grid.shape).copy(), KINDS[kind], check=False)


def save(fld: GridField, path):
    with open(path, "wb") as fh:
        fh.write(to_bytes(fld))


def load(path) -> GridField:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def to_csv(fld: GridField, path):
    """Columns: coordinates then value (real, or real and imag), shortest round-trip floats.

    Only one degree of freedom (two phase axes, or one configuration axis).
    """
    g = fld.grid
    if g.n != 1:
        raise GridError("CSV export is limited to one degree of freedom")
    names = ["q1", "p1"][:g.ndim]
    cols = [m.ravel() for m in g.mesh()]
    vals = fld.values.ravel()
    with open(path, "w") as fh:
        if fld.is_complex:
            fh.write(",".join(names + ["re", "im"]) + "\n")
            for row in zip(*cols, vals.real, vals.imag):
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
        else:
            fh.write(",".join(names + ["value"]) + "\n")
            for row in zip(*cols, vals):
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
