"""Hot loops with an optional numba backend.

Every kernel exists twice: a ``*_nb`` version compiled with numba and a
``*_np`` version in plain numpy.  The public names bind to one of them at
import time.  Set ``RSTENSOR_NUMBA=0`` to force the numpy path.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:  # pragma: no cover - import guard
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


def _numba_requested() -> bool:
    flag = os.environ.get("RSTENSOR_NUMBA", "1").strip().lower()
    return flag not in {"0", "false", "no", "off"}


USE_NUMBA = HAVE_NUMBA and _numba_requested()
BACKEND = "numba" if USE_NUMBA else "numpy"

# kernel family codes shared with grid_kernels
NEWTON, YUKAWA, SLATER = 0, 1, 2


# ---------------------------------------------------------------- windows


def window_sum_np(ref, starts, coef, n):
    """Sum of shifted length-``n`` windows of the columns of ``ref``."""
    out = np.zeros((n, ref.shape[1]))
    for s, c in zip(starts, coef):
        if c != 0.0:
            out += c * ref[s : s + n]
    return out


@njit(cache=True, fastmath=False)
def window_sum_nb(ref, starts, coef, n):
    R = ref.shape[1]
    out = np.zeros((n, R))
    for k in range(starts.shape[0]):
        c = coef[k]
        if c == 0.0:
            continue
        s = starts[k]
        for i in range(n):
            for q in range(R):
                out[i, q] += c * ref[s + i, q]
    return out


# ----------------------------------------------------------- point reads


def eval_points_np(weights, factors, idx, chunk=4096):
    """Values of a canonical tensor at integer multi-indices ``idx`` (P, d)."""
    P = idx.shape[0]
    out = np.empty(P)
    for s in range(0, P, chunk):
        sl = slice(s, min(P, s + chunk))
        prod = np.ones((sl.stop - sl.start, weights.shape[0]))
        for ax, F in enumerate(factors):
            prod *= F[idx[sl, ax]]
        out[sl] = prod @ weights
    return out


@njit(cache=True)
def _eval3_nb(weights, F0, F1, F2, idx):
    P = idx.shape[0]
    R = weights.shape[0]
    out = np.zeros(P)
    for p in range(P):
        i, j, k = idx[p, 0], idx[p, 1], idx[p, 2]
        acc = 0.0
        for q in range(R):
            acc += weights[q] * F0[i, q] * F1[j, q] * F2[k, q]
        out[p] = acc
    return out


def eval_points_nb(weights, factors, idx):
    if len(factors) == 3 and weights.shape[0] > 0:
        return _eval3_nb(
            weights,
            np.ascontiguousarray(factors[0]),
            np.ascontiguousarray(factors[1]),
            np.ascontiguousarray(factors[2]),
            np.ascontiguousarray(idx, dtype=np.int64),
        )
    return eval_points_np(weights, factors, idx)


# ------------------------------------------------------ pairwise oracles


def pair_energy_np(x, q, chunk=512):
    """Sum over i<j of q_i q_j / |x_i - x_j|."""
    N = x.shape[0]
    total = 0.0
    for s in range(0, N, chunk):
        e = min(N, s + chunk)
        diff = x[s:e, None, :] - x[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        mask = np.arange(N)[None, :] > np.arange(s, e)[:, None]
        total += np.sum((q[s:e, None] * q[None, :])[mask] / r[mask])
    return total


@njit(cache=True)
def pair_energy_nb(x, q):
    N = x.shape[0]
    total = 0.0
    for i in range(N):
        for j in range(i + 1, N):
            dx = x[i, 0] - x[j, 0]
            dy = x[i, 1] - x[j, 1]
            dz = x[i, 2] - x[j, 2]
            total += q[i] * q[j] / math.sqrt(dx * dx + dy * dy + dz * dz)
    return total


def pair_forces_np(x, q, chunk=512):
    """Coulomb force on each particle, q_j sum_k q_k (x_j - x_k) / r^3."""
    N = x.shape[0]
    F = np.zeros_like(x)
    for s in range(0, N, chunk):
        e = min(N, s + chunk)
        diff = x[s:e, None, :] - x[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", diff, diff)
        with np.errstate(divide="ignore"):
            inv3 = np.where(r2 > 0, r2 ** -1.5, 0.0)
        F[s:e] = q[s:e, None] * np.einsum("ij,ijk->ik", inv3 * q[None, :], diff)
    return F


@njit(cache=True)
def pair_forces_nb(x, q):
    N = x.shape[0]
    F = np.zeros_like(x)
    for i in range(N):
        for j in range(i + 1, N):
            dx = x[i, 0] - x[j, 0]
            dy = x[i, 1] - x[j, 1]
            dz = x[i, 2] - x[j, 2]
            r2 = dx * dx + dy * dy + dz * dz
            s = q[i] * q[j] / (r2 * math.sqrt(r2))
            F[i, 0] += s * dx
            F[i, 1] += s * dy
            F[i, 2] += s * dz
            F[j, 0] -= s * dx
            F[j, 1] -= s * dy
            F[j, 2] -= s * dz
    return F


def pair_table_energy_np(vidx, q, tables, weights, center, chunk=64):
    """Pairwise energy with a separable discrete kernel.

    ``tables[l, r, center + o]`` holds the mode-``l`` factor of term ``r`` at
    vertex offset ``o``.  Returns sum over i<j of q_i q_j K(v_j - v_i).
    """
    N, d = vidx.shape
    total = 0.0
    for s in range(0, N, chunk):
        e = min(N, s + chunk)
        prod = np.ones((e - s, N, weights.shape[0]))
        for ax in range(d):
            off = vidx[None, :, ax] - vidx[s:e, None, ax] + center
            prod *= np.moveaxis(tables[ax][:, off], 0, -1)
        K = prod @ weights
        mask = np.arange(N)[None, :] > np.arange(s, e)[:, None]
        total += np.sum((q[s:e, None] * q[None, :] * K)[mask])
    return total


@njit(cache=True)
def pair_table_energy_nb(vidx, q, tables, weights, center):
    N, d = vidx.shape
    R = weights.shape[0]
    total = 0.0
    for i in range(N):
        for j in range(i + 1, N):
            acc = 0.0
            for r in range(R):
                p = weights[r]
                for ax in range(d):
                    p *= tables[ax, r, vidx[j, ax] - vidx[i, ax] + center]
                acc += p
            total += q[i] * q[j] * acc
    return total


# ----------------------------------------------------- kernel accuracy


@njit(cache=True)
def _kernel_value(r, family, param):
    if family == NEWTON:
        return 1.0 / r
    if family == YUKAWA:
        return math.exp(-param * r) / r
    return math.exp(-param * r)


def kernel_value_np(r, family, param):
    if family == NEWTON:
        return 1.0 / r
    if family == YUKAWA:
        return np.exp(-param * r) / r
    return np.exp(-param * r)


@njit(cache=True)
def wedge_error_nb(V, weights, coords, scale, family, param, rmin, use_max):
    """Largest error over the wedge i >= j >= k of the positive octant.

    ``V`` holds the positive-octant rows of the (shared) mode matrix and
    ``coords`` the matching cell-centre coordinates.  Values are divided by
    ``scale`` before comparison.  With ``use_max`` the error is absolute,
    otherwise relative to the kernel value at each point.
    """
    m, R = V.shape
    worst = 0.0
    wi = np.empty(R)
    wij = np.empty(R)
    for i in range(m):
        for q in range(R):
            wi[q] = weights[q] * V[i, q]
        xi = coords[i]
        for j in range(i + 1):
            for q in range(R):
                wij[q] = wi[q] * V[j, q]
            xj = coords[j]
            for k in range(j + 1):
                xk = coords[k]
                r = math.sqrt(xi * xi + xj * xj + xk * xk)
                if r < rmin:
                    continue
                acc = 0.0
                for q in range(R):
                    acc += wij[q] * V[k, q]
                p = _kernel_value(r, family, param)
                err = abs(acc / scale - p)
                if not use_max:
                    err /= p
                if err > worst:
                    worst = err
    return worst


def wedge_error_np(V, weights, coords, scale, family, param, rmin, use_max):
    m = V.shape[0]
    worst = 0.0
    jj, kk = np.meshgrid(coords, coords, indexing="ij")
    for i in range(m):
        plane = (V * (weights * V[i])) @ V.T / scale
        r = np.sqrt(coords[i] ** 2 + jj**2 + kk**2)
        keep = r >= rmin
        if not keep.any():
            continue
        p = kernel_value_np(r[keep], family, param)
        err = np.abs(plane[keep] - p)
        if not use_max:
            err = err / p
        worst = max(worst, float(err.max()))
    return worst


if USE_NUMBA:
    window_sum = window_sum_nb
    eval_points = eval_points_nb
    pair_energy = pair_energy_nb
    pair_forces = pair_forces_nb
    pair_table_energy = pair_table_energy_nb
    wedge_error = wedge_error_nb
else:
    window_sum = window_sum_np
    eval_points = eval_points_np
    pair_energy = pair_energy_np
    pair_forces = pair_forces_np
    pair_table_energy = pair_table_energy_np
    wedge_error = wedge_error_np
