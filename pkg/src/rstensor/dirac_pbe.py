"""Discrete Dirac delta and regularised right-hand sides.

Applying the seven-point Laplacian to a canonical kernel tensor gives a
canonical tensor of three times the rank.  For the Newton kernel,
``-(1/4 pi) Lap_h P`` is a discrete delta whose range-separated parts come
from the long and short Gaussian terms.  The long part is smooth, so the
right-hand side ``-eps_m Lap_h u_long`` of a Poisson-type problem can be
stored in low-rank form while the singular short part is kept aside.

Second differences are taken with true neighbours: mode vectors are read
on a window one cell wider than the grid on each side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.fft import dstn, idstn

from .grid_kernels import GridSpec, KernelTensor, vertex_factor
from .rs_sum import (
    ParticleSystem,
    RSTensor,
    SplitSpec,
    collective_potential,
    compress_long_range,
    split_reference,
)
from .tensor_core import CanonicalTensor, SizeGuardError, canonical_sum

MAX_SOLVE_N = 128


# ---------------------------------------------------------------- Laplacian


@dataclass(frozen=True)
class LaplacianOp:
    """Seven-point Laplacian ``D x I x I + I x D x I + I x I x D`` on ``n^d`` cells."""

    n: int
    h: float
    d: int = 3

    def matrix_1d(self):
        """Second-difference matrix with zero Dirichlet data."""
        main = -2.0 * np.ones(self.n)
        off = np.ones(self.n - 1)
        return sparse.diags([off, main, off], [-1, 0, 1], format="csr") / self.h**2

    def apply(self, A: CanonicalTensor) -> CanonicalTensor:
        return apply_laplacian(A, self.h)

    def eigenvalues_1d(self) -> np.ndarray:
        k = np.arange(1, self.n + 1)
        return -(2.0 - 2.0 * np.cos(np.pi * k / (self.n + 1))) / self.h**2


def _second_difference(F: np.ndarray, h: float) -> np.ndarray:
    """Rows of ``D F`` with zero data outside."""
    z = np.zeros((1, F.shape[1]))
    P = np.vstack([z, F, z])
    return (P[:-2] - 2.0 * P[1:-1] + P[2:]) / h**2


def apply_laplacian(A: CanonicalTensor, h: float) -> CanonicalTensor:
    """Laplacian of a canonical tensor with zero Dirichlet data; rank ``d R``."""
    if A.rank == 0:
        return CanonicalTensor.zeros(A.shape)
    parts = []
    for ax in range(A.ndim):
        fs = list(A.factors)
        fs[ax] = _second_difference(A.factors[ax], h)
        parts.append(CanonicalTensor(A.weights, tuple(fs)))
    return canonical_sum(parts)


def laplacian_with_halo(A_ext: CanonicalTensor, h: float) -> CanonicalTensor:
    """Laplacian on the interior of a tensor with one ghost cell per side.

    ``A_ext`` has ``n + 2`` rows per mode; the result has ``n`` rows.
    """
    if any(s < 3 for s in A_ext.shape):
        raise ValueError("halo tensor needs at least three rows per mode")
    if A_ext.rank == 0:
        return CanonicalTensor.zeros(tuple(s - 2 for s in A_ext.shape))
    inner = [f[1:-1] for f in A_ext.factors]
    diff = [(f[:-2] - 2.0 * f[1:-1] + f[2:]) / h**2 for f in A_ext.factors]
    parts = []
    for ax in range(A_ext.ndim):
        fs = list(inner)
        fs[ax] = diff[ax]
        parts.append(CanonicalTensor(A_ext.weights, tuple(fs)))
    return canonical_sum(parts)


def dense_laplacian(U: np.ndarray, h: float, ghost: np.ndarray | None = None) -> np.ndarray:
    """Seven-point stencil on a dense array.

    ``ghost`` is an array two cells larger per axis whose outer shell gives
    the boundary values; zero data when omitted.
    """
    if ghost is None:
        P = np.pad(U, 1)
    else:
        P = np.array(ghost, dtype=float, copy=True)
        P[(slice(1, -1),) * U.ndim] = U
    out = -2.0 * U.ndim * U
    for ax in range(U.ndim):
        lo = [slice(1, -1)] * U.ndim
        hi = [slice(1, -1)] * U.ndim
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        out = out + P[tuple(lo)] + P[tuple(hi)]
    return out / h**2


# ---------------------------------------------------------------- windows


def _ext_windows(ref: KernelTensor, vertices: np.ndarray, weights: np.ndarray) -> CanonicalTensor:
    """Reference windows of ``n + 2`` rows around each vertex, summed in canonical form."""
    n = ref.grid.n
    vertices = np.atleast_2d(vertices)
    if vertices.size and (vertices.min() < 1 or vertices.max() > n - 1):
        raise ValueError("halo windows need vertices in 1..n-1")
    rows = (n - vertices - 1)[:, :, None] + np.arange(n + 2)[None, None, :]
    factors = []
    for ax in range(ref.ndim):
        F = ref.factors[ax][rows[:, ax]]  # (N, n + 2, R)
        factors.append(np.transpose(F, (1, 0, 2)).reshape(n + 2, -1))
    w = np.outer(weights, ref.weights).ravel()
    return CanonicalTensor(w, tuple(factors))


# ---------------------------------------------------------------- delta


@dataclass(frozen=True, eq=False)
class DiracDelta:
    """Discrete delta at one vertex with its range-separated parts."""

    full: CanonicalTensor
    short: CanonicalTensor
    long: CanonicalTensor
    grid: GridSpec
    vertex: tuple


def _delta_of(ref: KernelTensor, vertex) -> CanonicalTensor:
    ext = _ext_windows(ref, np.asarray(vertex)[None, :], np.ones(1))
    return laplacian_with_halo(ext, ref.grid.h).scaled(-1.0 / (4.0 * math.pi))


def dirac_delta(ref: KernelTensor, split: SplitSpec | None = None, vertex=None) -> DiracDelta:
    """Discrete delta ``-(1/4 pi) Lap_h P`` of a Newton reference kernel.

    Parameters
    ----------
    ref : KernelTensor
        Newton kernel on the doubled grid.
    split : SplitSpec, optional
        Range separation for the short and long parts.
    vertex : sequence of int, optional
        Base-grid vertex; the box centre by default.
    """
    if not (isinstance(ref, KernelTensor) and ref.grid.doubled):
        raise ValueError("the reference kernel must be built on the doubled grid")
    if ref.kernel.family != "newton":
        raise ValueError("the discrete delta is defined for the Newton kernel")
    grid = ref.grid.base()
    vertex = (grid.n // 2,) * ref.ndim if vertex is None else tuple(int(v) for v in vertex)
    long_ref, short_ref = split_reference(ref, split or SplitSpec())
    return DiracDelta(
        full=_delta_of(ref, vertex),
        short=_delta_of(short_ref, vertex),
        long=_delta_of(long_ref, vertex),
        grid=grid,
        vertex=vertex,
    )


def delta_long_sum(
    system: ParticleSystem, ref: KernelTensor, split: SplitSpec | None = None, eps=None
) -> CanonicalTensor:
    """Charge-weighted sum of the long-range deltas of all particles."""
    long_ref, _ = split_reference(ref, split or SplitSpec())
    ext = _ext_windows(long_ref, system.vertices, system.charges)
    out = laplacian_with_halo(ext, system.grid.h).scaled(-1.0 / (4.0 * math.pi))
    if eps is not None and out.rank:
        out = compress_long_range(out, eps).tensor
    return out


# ------------------------------------------------------- regularised RHS


@dataclass(frozen=True, eq=False)
class RegularizedRHS:
    """Smooth right-hand side ``-eps_m Lap_h u_long`` and its companions.

    Attributes
    ----------
    rho_long : CanonicalTensor
        Right-hand side on the base grid.
    u_long_ext : CanonicalTensor
        Long-range potential with one ghost cell per side.
    eps_m : float
        Dielectric constant of the medium.
    rs : RSTensor
        Range-separated potential holding the short-range data.
    """

    rho_long: CanonicalTensor
    u_long_ext: CanonicalTensor
    eps_m: float
    rs: RSTensor

    @property
    def u_long(self) -> CanonicalTensor:
        return CanonicalTensor(
            self.u_long_ext.weights, tuple(f[1:-1] for f in self.u_long_ext.factors)
        )


def regularized_rhs(
    system: ParticleSystem,
    ref: KernelTensor,
    split: SplitSpec | None = None,
    eps_m: float = 1.0,
    eps: float | None = None,
) -> RegularizedRHS:
    """Low-rank right-hand side built from the long-range potential."""
    if not eps_m > 0:
        raise ValueError("eps_m must be positive")
    split = split or SplitSpec()
    long_ref, _ = split_reference(ref, split)
    u_ext = _ext_windows(long_ref, system.vertices, system.charges)
    if eps is not None and u_ext.rank:
        u_ext = compress_long_range(u_ext, eps, group=max(1, long_ref.rank)).tensor
    rho = laplacian_with_halo(u_ext, system.grid.h).scaled(-eps_m)
    rs = collective_potential(system, ref, split)
    return RegularizedRHS(rho, u_ext, float(eps_m), rs)


# ---------------------------------------------------------------- solver


def free_space_solve(
    f: np.ndarray, h: float, eps_m: float = 1.0, ghost: np.ndarray | None = None
) -> np.ndarray:
    """Solve ``-eps_m Lap_h u = f`` on a cube with Dirichlet ghost values.

    Uses the discrete sine transform, which diagonalises the seven-point
    Laplacian with zero boundary data; the ghost shell is moved to the
    right-hand side.

    Raises
    ------
    SizeGuardError
        Grid larger than ``MAX_SOLVE_N`` per axis.
    """
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    if any(s != n for s in f.shape):
        raise ValueError("the solver needs a cubic grid")
    if n > MAX_SOLVE_N:
        raise SizeGuardError(f"dense solve limited to n <= {MAX_SOLVE_N}, got {n}")
    rhs = f / eps_m
    if ghost is not None:
        shell = np.array(ghost, dtype=float, copy=True)
        shell[(slice(1, -1),) * f.ndim] = 0.0
        rhs = rhs + dense_laplacian(np.zeros_like(f), h, shell)
    lam = np.zeros(f.shape)
    k = np.arange(1, n + 1)
    mu = (2.0 - 2.0 * np.cos(np.pi * k / (n + 1))) / h**2
    for ax in range(f.ndim):
        shape = [1] * f.ndim
        shape[ax] = n
        lam = lam + mu.reshape(shape)
    return idstn(dstn(rhs, type=1, norm="ortho") / lam, type=1, norm="ortho")


def dense_vertex_reads(U: np.ndarray, vidx: np.ndarray, h: float) -> np.ndarray:
    """Mean of the ``2^d`` cells around each vertex, divided by ``h^d``."""
    vidx = np.atleast_2d(vidx)
    d = U.ndim
    out = np.zeros(vidx.shape[0])
    for corner in np.ndindex(*(2,) * d):
        idx = tuple(vidx[:, ax] - 1 + corner[ax] for ax in range(d))
        out += U[idx]
    return out / (2**d * h**d)


@dataclass(frozen=True)
class SolveReport:
    residual: float
    potential_error: float
    energy: float
    energy_from_solution: float


def solve_and_check(rhs: RegularizedRHS) -> tuple:
    """Solve with the long-range right-hand side and compare with ``u_long``.

    Returns
    -------
    u : ndarray
        Dense solution on the base grid.
    report : SolveReport
    """
    grid = rhs.rs.grid
    h = grid.h
    if grid.n > MAX_SOLVE_N:
        raise SizeGuardError(f"dense solve limited to n <= {MAX_SOLVE_N}, got {grid.n}")
    f = rhs.rho_long.full()
    ghost = rhs.u_long_ext.full()
    u = free_space_solve(f, h, rhs.eps_m, ghost)
    Lu = -rhs.eps_m * dense_laplacian(u, h, ghost)
    fn = np.abs(f).max()
    residual = float(np.abs(Lu - f).max() / fn) if fn > 0 else float(np.abs(Lu).max())
    target = ghost[(slice(1, -1),) * u.ndim]
    scale = np.abs(target).max()
    perr = float(np.abs(u - target).max() / scale) if scale > 0 else 0.0
    e_ref = _energy_from_values(dense_vertex_reads(target, rhs.rs.vertices, h), rhs.rs)
    e_sol = _energy_from_values(dense_vertex_reads(u, rhs.rs.vertices, h), rhs.rs)
    return u, SolveReport(residual, perr, e_ref, e_sol)


def _energy_from_values(p: np.ndarray, rs: RSTensor) -> float:
    z = rs.charges
    return 0.5 * float(z @ p) - 0.5 * rs.long_self * float(z @ z)
