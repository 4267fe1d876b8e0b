"""File formats: the RSTF1 tensor container, CSV tables and particle lists.

RSTF1 layout (little endian)::

    b"RSTF1"  u32 d  u32 R  u32 n[d]  f64 weights[R]  f64 modes...

Mode ``l`` is stored as its ``n_l x R`` factor in column-major order, so
each term's vector is contiguous.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .grid_kernels import GridSpec
from .tensor_core import CanonicalTensor

MAGIC = b"RSTF1"


class FormatError(ValueError):
    """Malformed input file."""


# ------------------------------------------------------------------ RSTF1


def write_rstf(path, tensor: CanonicalTensor) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", tensor.ndim, tensor.rank))
        fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        fh.write(np.ascontiguousarray(tensor.weights, dtype="<f8").tobytes())
        for f in tensor.factors:
            fh.write(np.asarray(f, dtype="<f8").tobytes(order="F"))


def read_rstf(path) -> CanonicalTensor:
    data = Path(path).read_bytes()
    if data[:5] != MAGIC:
        raise FormatError(f"{path}: not an RSTF1 file")
    try:
        d, R = struct.unpack_from("<II", data, 5)
        if d < 1 or d > 64:
            raise FormatError(f"{path}: implausible order {d}")
        shape = struct.unpack_from(f"<{d}I", data, 13)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    off = 13 + 4 * d
    expected = off + 8 * (R + R * sum(shape))
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    weights = np.frombuffer(data, "<f8", R, off).astype(float)
    off += 8 * R
    factors = []
    for n in shape:
        block = np.frombuffer(data, "<f8", n * R, off).astype(float)
        factors.append(block.reshape((n, R), order="F"))
        off += 8 * n * R
    return CanonicalTensor(weights, tuple(factors))


# ------------------------------------------------------------------ CSV


def _fmt(x) -> str:
    return repr(float(x))


def write_mode_profiles(path, tensor: CanonicalTensor, grid: GridSpec, mode: int = 0, terms=None):
    """Columns: index, coordinate, one value column per term."""
    F = tensor.factors[mode]
    terms = range(tensor.rank) if terms is None else list(terms)
    x = grid.centers()
    if x.shape[0] != F.shape[0]:
        raise ValueError("grid does not match the tensor mode length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "coordinate"] + [f"term_{k}" for k in terms])
        for i in range(F.shape[0]):
            w.writerow([i, _fmt(x[i])] + [_fmt(F[i, k]) for k in terms])


def write_singular_values(path, spectra) -> None:
    """Columns: mode, index, value."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "index", "value"])
        for mode, s in enumerate(spectra):
            for i, v in enumerate(s):
                w.writerow([mode, i, _fmt(v)])


def write_cross_section(path, plane: np.ndarray, grid: GridSpec) -> None:
    """Columns: x, y, value for a dense plane on ``grid``."""
    x = grid.centers()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for i in range(plane.shape[0]):
            for j in range(plane.shape[1]):
                w.writerow([_fmt(x[i]), _fmt(x[j]), _fmt(plane[i, j])])


def write_forces(path, forces: np.ndarray) -> None:
    """Columns: index, Fx, Fy, Fz."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "Fx", "Fy", "Fz"])
        for k, f in enumerate(forces):
            w.writerow([k] + [_fmt(v) for v in f])


# ------------------------------------------------------------- particles


def read_particles(path) -> tuple:
    """Parse ``x y z q`` lines; ``#`` starts a comment.

    Returns
    -------
    positions : (N, 3) ndarray
    charges : (N,) ndarray
    """
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.replace(",", " ").split()
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected 'x y z q', got {line.strip()!r}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if not np.all(np.isfinite(vals)):
                raise FormatError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    return arr[:, :3].copy(), arr[:, 3].copy()


def write_particles(path, positions, charges) -> None:
    with open(path, "w") as fh:
        fh.write("# x y z q\n")
        for x, q in zip(np.asarray(positions), np.asarray(charges)):
            fh.write(" ".join(_fmt(v) for v in (*x, q)) + "\n")
