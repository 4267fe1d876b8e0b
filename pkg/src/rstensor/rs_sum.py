"""Range-separated tensor format for many-particle potentials.

The reference kernel is split into a long-range part (small Gaussian
exponents, smooth everywhere) and a short-range part (large exponents,
negligible beyond a few cells).  For ``N`` particles the long-range sums
are added in canonical format and compressed, while the short-range parts
are kept as one small reference window plus the particle list.

Energies and forces only need the long-range part when all particles are
farther apart than the short-range support.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _accel
from .grid_kernels import GridSpec, KernelTensor, vertex_factor
from .tensor_core import (
    CanonicalTensor,
    SizeGuardError,
    TuckerTensor,
    MAX_DENSE_ENTRIES,
    add_and_compress,
    canonical_sum,
    rhosvd,
    tucker_to_canonical,
)

MAX_PAIRWISE_PARTICLES = 40000


# ---------------------------------------------------------------- particles


@dataclass(frozen=True, eq=False)
class ParticleSystem:
    """Point charges snapped to vertices of a base grid.

    Parameters
    ----------
    positions : (N, 3) array
        Requested coordinates; must lie in ``[-b/2, b/2]^3``.
    charges : (N,) array
    grid : GridSpec
        Base grid (not doubled).
    """

    positions: np.ndarray
    charges: np.ndarray
    grid: GridSpec
    vertices: np.ndarray = field(init=False)

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.positions, dtype=float))
        q = np.asarray(self.charges, dtype=float).reshape(-1)
        if x.shape[1] != 3 or x.shape[0] != q.shape[0]:
            raise ValueError(f"positions {x.shape} and charges {q.shape} do not match")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(q))):
            raise ValueError("non-finite particle data")
        if self.grid.doubled:
            raise ValueError("particles live on the base grid")
        half = 0.5 * self.grid.b
        bad = np.any(np.abs(x) > half * (1 + 1e-12), axis=1)
        if bad.any():
            k = int(np.argmax(bad))
            raise ValueError(
                f"particle {k} at {x[k].tolist()} lies outside [-{half:g}, {half:g}]^3"
            )
        v = self.grid.nearest_vertex(x)
        if len(v) > 1:
            order = np.lexsort(v.T[::-1])
            sv = v[order]
            dup = np.all(sv[1:] == sv[:-1], axis=1)
            if dup.any():
                i = int(np.argmax(dup))
                raise ValueError(
                    f"particles {order[i]} and {order[i + 1]} snap to the same vertex"
                )
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "charges", q)
        object.__setattr__(self, "vertices", v)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def snapped(self) -> np.ndarray:
        return self.grid.vertex_coord(self.vertices)

    @property
    def snap_shift(self) -> float:
        if self.N == 0:
            return 0.0
        return float(np.abs(self.positions - self.snapped).max())

    def min_separation(self) -> float:
        if self.N < 2:
            return math.inf
        from scipy.spatial import cKDTree

        dist, _ = cKDTree(self.snapped).query(self.snapped, k=2)
        return float(dist[:, 1].min())

    def moved(self, j: int, vertex) -> "ParticleSystem":
        """Copy with particle ``j`` placed at a base-grid vertex."""
        x = self.snapped.copy()
        x[j] = self.grid.vertex_coord(np.asarray(vertex))
        return ParticleSystem(x, self.charges, self.grid)


def random_particles(
    N: int,
    grid: GridSpec,
    min_separation: float = 0.0,
    rng=None,
    charges: str = "pm1",
    max_tries: int = 200000,
) -> ParticleSystem:
    """Random vertex positions in the central half of the box.

    ``charges`` is ``pm1`` (random signs), ``unit`` or ``uniform`` (in [-1, 1]).
    """
    rng = np.random.default_rng(rng)
    lo = grid.n // 4
    hi = grid.n - grid.n // 4
    chosen = []
    tries = 0
    while len(chosen) < N:
        tries += 1
        if tries > max_tries:
            raise ValueError(f"could not place {N} particles {min_separation} apart")
        v = rng.integers(lo, hi + 1, size=3)
        x = grid.vertex_coord(v)
        if chosen:
            d = np.sqrt(((np.asarray(chosen) - x) ** 2).sum(axis=1)).min()
            if d < max(min_separation, 0.5 * grid.h):
                continue
        chosen.append(x)
    if charges == "pm1":
        q = rng.choice([-1.0, 1.0], size=N)
    elif charges == "unit":
        q = np.ones(N)
    elif charges == "uniform":
        q = rng.uniform(-1.0, 1.0, size=N)
    else:
        raise ValueError(f"unknown charge mode {charges!r}")
    return ParticleSystem(np.array(chosen).reshape(N, 3), q, grid)


def coulomb_energy(system: ParticleSystem) -> float:
    """Exact pair energy of the snapped charges."""
    if system.N > MAX_PAIRWISE_PARTICLES:
        raise SizeGuardError(f"{system.N} particles exceed the pairwise limit")
    if system.N < 2:
        return 0.0
    return float(_accel.pair_energy(np.ascontiguousarray(system.snapped), system.charges))


def coulomb_forces(system: ParticleSystem, half: bool = False) -> np.ndarray:
    """Exact Coulomb forces on the snapped charges.

    ``half=True`` multiplies by one half, a convention some texts use.
    """
    if system.N > MAX_PAIRWISE_PARTICLES:
        raise SizeGuardError(f"{system.N} particles exceed the pairwise limit")
    F = _accel.pair_forces(np.ascontiguousarray(system.snapped), system.charges)
    return 0.5 * F if half else F


# ---------------------------------------------------------------- splitting


@dataclass(frozen=True)
class SplitSpec:
    """How Gaussian terms are divided into long- and short-range parts.

    Modes
    -----
    ``interval``
        Terms with ``t_k <= threshold`` are long range.
    ``support``
        A term is short range when its mode vector has decayed to at most
        ``delta`` of its peak beyond distance ``sigma``.
    ``count``
        The ``n_long`` smallest exponents are long range.

    ``delta`` also sets the short-range window: cells where every short
    mode vector is below ``delta`` times its peak are dropped.  ``delta=0``
    keeps the whole grid.
    """

    mode: str = "interval"
    threshold: float = 1.0
    sigma: float | None = None
    n_long: int | None = None
    delta: float = 1e-8

    def __post_init__(self):
        if self.mode not in ("interval", "support", "count"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if self.mode == "support" and not (self.sigma and self.sigma > 0):
            raise ValueError("support split needs a positive sigma")
        if self.mode == "count" and (self.n_long is None or self.n_long < 0):
            raise ValueError("count split needs a non-negative n_long")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")

    @classmethod
    def parse(cls, text: str) -> "SplitSpec":
        """``interval[:t]``, ``support:<sigma>[:<delta>]`` or ``count:<R_l>``."""
        parts = text.strip().split(":")
        mode = parts[0].lower()
        if mode == "interval":
            return cls("interval", threshold=float(parts[1]) if len(parts) > 1 else 1.0)
        if mode == "support":
            if len(parts) < 2:
                raise ValueError("support split needs sigma, e.g. support:1.0")
            delta = float(parts[2]) if len(parts) > 2 else 1e-8
            return cls("support", sigma=float(parts[1]), delta=delta)
        if mode == "count":
            if len(parts) < 2:
                raise ValueError("count split needs a rank, e.g. count:12")
            return cls("count", n_long=int(parts[1]))
        raise ValueError(f"unknown split {text!r}")


def _half_rows(ref: KernelTensor) -> np.ndarray:
    """Positive-side cells of the (shared) mode matrix, origin outward."""
    c = ref.grid.points // 2
    return ref.factors[0][c:]


def split_reference(ref: KernelTensor, split: SplitSpec):
    """Long- and short-range parts of a reference kernel.

    Returns
    -------
    long, short : KernelTensor
    """
    t = ref.rule.points
    if split.mode == "interval":
        is_long = t <= split.threshold
    elif split.mode == "count":
        if split.n_long > ref.rank:
            raise ValueError(f"n_long {split.n_long} exceeds rank {ref.rank}")
        is_long = np.zeros(ref.rank, bool)
        is_long[np.argsort(t, kind="stable")[: split.n_long]] = True
    else:
        half = _half_rows(ref)
        h = ref.grid.h
        outside = h * np.arange(half.shape[0]) >= split.sigma
        peak = half.max(axis=0)
        tail = half[outside].max(axis=0) if outside.any() else np.zeros(ref.rank)
        is_long = tail > split.delta * peak
    return ref.subset(np.flatnonzero(is_long)), ref.subset(np.flatnonzero(~is_long))


def short_window_width(short: KernelTensor, delta: float) -> int:
    """Half-width in cells beyond which every short mode is below ``delta`` of its peak."""
    n = short.grid.n
    if short.rank == 0:
        return 0
    if delta == 0:
        return n
    half = np.abs(_half_rows(short))
    big = np.any(half > delta * half.max(axis=0), axis=1)
    gamma = int(np.flatnonzero(big).max()) + 1 if big.any() else 0
    return min(gamma, n)


# ---------------------------------------------------------------- RS tensor


@dataclass(frozen=True, eq=False)
class RSTensor:
    """Long-range canonical part plus a short-range reference window.

    Attributes
    ----------
    long : CanonicalTensor
        Collective long-range potential on the base grid.
    short_weights : (R_s,) array
    short_half : tuple of (gamma, R_s) arrays
        Positive half of the short-range window per mode, origin outward.
    parity : tuple of int
        +1 for even and -1 for odd mode vectors.
    vertices : (N, d) int array
        Replica centres as base-grid vertices.
    charges : (N,) array
    grid : GridSpec
    long_self : float
        Long-range reference value at the origin.
    """

    long: CanonicalTensor
    short_weights: np.ndarray
    short_half: tuple
    parity: tuple
    vertices: np.ndarray
    charges: np.ndarray
    grid: GridSpec
    long_self: float
    compression: object = None

    @property
    def gamma(self) -> int:
        return self.short_half[0].shape[0]

    @property
    def N(self) -> int:
        return self.vertices.shape[0]

    @property
    def ndim(self) -> int:
        return self.long.ndim

    @property
    def support(self) -> float:
        """Radius covered by the short-range window."""
        return self.gamma * self.grid.h

    def storage(self) -> dict:
        d, n = self.ndim, self.grid.n
        R = self.long.rank
        Rs = self.short_weights.shape[0]
        parts = {
            "long": d * R * n,
            "particles": (d + 1) * self.N,
            "short": d * Rs * self.gamma,
        }
        parts["total"] = sum(parts.values())
        parts["dense"] = n**d
        return parts

    def short_window(self, ax: int) -> np.ndarray:
        """Full short window of mode ``ax``; row ``r`` is cell ``j - gamma + r``."""
        half = self.short_half[ax]
        return np.vstack([self.parity[ax] * half[::-1], half])

    def short_replica(self, k: int) -> CanonicalTensor:
        """Short-range replica of particle ``k`` on the base grid."""
        n, g = self.grid.n, self.gamma
        factors = []
        for ax in range(self.ndim):
            col = np.zeros((n, self.short_weights.shape[0]))
            j = int(self.vertices[k, ax])
            lo, hi = max(0, j - g), min(n, j + g)
            col[lo:hi] = self.short_window(ax)[lo - (j - g) : hi - (j - g)]
            factors.append(col)
        return CanonicalTensor(self.charges[k] * self.short_weights, tuple(factors))

    def short_part(self) -> CanonicalTensor:
        if self.N == 0 or self.short_weights.size == 0:
            return CanonicalTensor.zeros(self.long.shape)
        return canonical_sum([self.short_replica(k) for k in range(self.N)])

    def full(self, max_entries: int = MAX_DENSE_ENTRIES) -> np.ndarray:
        """Dense sum of long and short parts."""
        out = self.long.full(max_entries)
        n, g = self.grid.n, self.gamma
        if self.short_weights.size == 0:
            return out
        wins = [self.short_window(ax) for ax in range(self.ndim)]
        for k in range(self.N):
            j = self.vertices[k]
            sl, fs = [], []
            for ax in range(self.ndim):
                lo, hi = max(0, j[ax] - g), min(n, j[ax] + g)
                sl.append(slice(lo, hi))
                fs.append(wins[ax][lo - (j[ax] - g) : hi - (j[ax] - g)])
            block = CanonicalTensor(self.charges[k] * self.short_weights, tuple(fs))
            out[tuple(sl)] += block.full(max_entries)
        return out

    def plane(self, axis: int, index: int) -> np.ndarray:
        """Dense cross-section with the index along ``axis`` fixed."""
        out = self.long.fix_mode(axis, index).full()
        n, g = self.grid.n, self.gamma
        if self.short_weights.size == 0:
            return out
        keep = [ax for ax in range(self.ndim) if ax != axis]
        wins = [self.short_window(ax) for ax in range(self.ndim)]
        for k in range(self.N):
            j = self.vertices[k]
            r = index - (j[axis] - g)
            if not 0 <= r < 2 * g:
                continue
            sl, fs = [], []
            for ax in keep:
                lo, hi = max(0, j[ax] - g), min(n, j[ax] + g)
                sl.append(slice(lo, hi))
                fs.append(wins[ax][lo - (j[ax] - g) : hi - (j[ax] - g)])
            w = self.charges[k] * self.short_weights * wins[axis][r]
            out[tuple(sl)] += CanonicalTensor(w, tuple(fs)).full()
        return out

    def with_short(self, short_weights, short_half) -> "RSTensor":
        """Copy with replaced short-range data."""
        return RSTensor(
            self.long,
            np.asarray(short_weights, float),
            tuple(np.asarray(s, float) for s in short_half),
            self.parity,
            self.vertices,
            self.charges,
            self.grid,
            self.long_self,
            self.compression,
        )


@dataclass(frozen=True, eq=False)
class CompressionResult:
    tensor: CanonicalTensor
    tucker: TuckerTensor
    batches: int
    levels: int


def _smaller(candidate: CanonicalTensor, original: CanonicalTensor) -> CanonicalTensor:
    # a Tucker round trip can raise the rank when the terms are already few
    return candidate if candidate.rank < original.rank else original


def compress_long_range(
    long: CanonicalTensor, eps: float, m0: int = 1, group: int = 1
) -> CompressionResult:
    """Rank reduction of a long-range sum through Tucker form.

    The terms are cut into ``m0`` batches (on multiples of ``group``), each
    batch is compressed, and the batches are merged pairwise with
    recompression after every merge.  A step whose result would have a
    higher rank than its input keeps the input unchanged.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    m0 = max(1, int(m0))
    if long.rank == 0:
        return CompressionResult(long, rhosvd(long, eps), 1, 0)
    units = long.rank // group
    bounds = np.linspace(0, units, min(m0, units) + 1).round().astype(int) * group
    bounds[-1] = long.rank
    batches = [long.subset(np.arange(a, b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    parts = [_smaller(tucker_to_canonical(rhosvd(b, eps), eps), b) for b in batches]
    levels = 0
    while len(parts) > 1:
        levels += 1
        merged = []
        for i in range(0, len(parts) - 1, 2):
            pair = parts[i : i + 2]
            merged.append(_smaller(add_and_compress(pair, eps), canonical_sum(pair)))
        if len(parts) % 2:
            merged.append(parts[-1])
        parts = merged
    tucker = rhosvd(parts[0], eps) if parts[0].rank else rhosvd(long, eps)
    return CompressionResult(parts[0], tucker, len(bounds) - 1, levels)


def _long_windows(long_ref: KernelTensor, system: ParticleSystem) -> CanonicalTensor:
    n = system.grid.n
    rows = (n - system.vertices)[:, :, None] + np.arange(n)[None, None, :]
    factors = []
    for ax in range(3):
        F = long_ref.factors[ax][rows[:, ax]]  # (N, n, R_l)
        factors.append(np.transpose(F, (1, 0, 2)).reshape(n, -1))
    w = np.outer(system.charges, long_ref.weights).ravel()
    return CanonicalTensor(w, tuple(factors))


def collective_potential(
    system: ParticleSystem,
    ref: KernelTensor,
    split: SplitSpec | None = None,
    eps: float | None = None,
    m0: int | None = None,
) -> RSTensor:
    """Range-separated potential of all particles.

    Parameters
    ----------
    system : ParticleSystem
    ref : KernelTensor
        Reference kernel on the doubled grid of ``system.grid``.
    split : SplitSpec, optional
        Defaults to the interval split at ``t = 1``.
    eps : float, optional
        Compress the long-range part to this tolerance.
    m0 : int, optional
        Number of compression batches; about one per 32 particles by default.
    """
    split = split or SplitSpec()
    if not (isinstance(ref, KernelTensor) and ref.grid.doubled):
        raise ValueError("the reference kernel must be built on the doubled grid")
    if ref.grid.base() != system.grid:
        raise ValueError("reference and particles use different grids")
    if ref.ndim != 3:
        raise ValueError("particle sums are three-dimensional")
    long_ref, short_ref = split_reference(ref, split)
    if system.N == 0:
        long = CanonicalTensor.zeros((system.grid.n,) * 3)
    else:
        long = _long_windows(long_ref, system)
    comp = None
    if eps is not None and long.rank:
        if m0 is None:
            m0 = max(1, math.ceil(system.N / 32))
        comp = compress_long_range(long, eps, m0, group=long_ref.rank)
        long = comp.tensor
    gamma = short_window_width(short_ref, split.delta)
    half = _half_rows(short_ref)[:gamma]
    rs = RSTensor(
        long=long,
        short_weights=short_ref.weights.copy(),
        short_half=(half,) * 3,
        parity=(1, 1, 1),
        vertices=system.vertices.copy(),
        charges=system.charges.copy(),
        grid=system.grid,
        long_self=long_ref.center_value() if long_ref.rank else 0.0,
        compression=comp,
    )
    sep = system.min_separation()
    if sep < rs.support:
        warnings.warn(
            f"minimum separation {sep:.3g} is below the short-range support "
            f"{rs.support:.3g}; long-range energies miss close-pair terms",
            RuntimeWarning,
            stacklevel=2,
        )
    return rs


# ---------------------------------------------------------------- energies


def long_values(rs: RSTensor) -> np.ndarray:
    """Long-range potential read at each particle vertex."""
    h = rs.grid.h
    L = rs.long
    if L.rank == 0:
        return np.zeros(rs.N)
    return _accel.eval_points(
        L.weights, tuple(vertex_factor(f, h) for f in L.factors), rs.vertices
    )


def rs_energy(rs: RSTensor) -> float:
    """Interaction energy from the long-range part only.

    ``E = 1/2 <z, p_l> - P_l(0)/2 sum z^2`` with ``p_l`` the long-range
    potential at the particles and ``P_l(0)`` the long-range reference at
    the origin.  Exact up to grid error when particles are farther apart
    than the short-range support.
    """
    p = long_values(rs)
    z = rs.charges
    return 0.5 * float(z @ p) - 0.5 * rs.long_self * float(z @ z)


def _offset_reads(long_ref: KernelTensor, offsets: np.ndarray) -> np.ndarray:
    """Long-range reference at vertex offsets (P, 3) from the origin."""
    c = long_ref.grid.points // 2
    V = vertex_factor(long_ref.factors[0], long_ref.grid.h)
    return _accel.eval_points(long_ref.weights, (V, V, V), offsets + c)


def rs_forces(rs: RSTensor, long_ref: KernelTensor) -> np.ndarray:
    """Forces by a backward difference of the long-range energy.

    Moving particle ``j`` one cell back along an axis changes only its own
    replica.  The energy change is ``z_j`` times the change of the potential
    of all other particles at its position, which is one read of the
    collective potential at the displaced vertex minus the particle's own
    replica there.
    """
    h = rs.grid.h
    N = rs.N
    z = rs.charges
    F = np.zeros((N, 3))
    if N < 2:
        return F
    p = long_values(rs)
    Vs = tuple(vertex_factor(f, h) for f in rs.long.factors)
    g_step = float(_offset_reads(long_ref, np.array([[1, 0, 0]]))[0])
    for j in range(N):
        p_j_old = p[j] - z[j] * rs.long_self
        for ax in range(3):
            step = np.zeros(3, dtype=np.int64)
            step[ax] = 1
            # potential of everyone else at the displaced position of j
            v_new = rs.vertices[j] - step
            p_j_new = float(_accel.eval_points(rs.long.weights, Vs, v_new[None, :])[0])
            p_j_new -= z[j] * g_step
            # change of the pair energy of j with all others
            dE = z[j] * (p_j_old - p_j_new)
            F[j, ax] = -dE / h
    return F


def _central_difference(F: np.ndarray, h: float) -> np.ndarray:
    z = np.zeros((1, F.shape[1]))
    P = np.vstack([z, F, z])
    return (P[2:] - P[:-2]) / (2.0 * h)


def gradient_tensors(A: CanonicalTensor, h: float) -> tuple:
    """Central-difference gradient, one canonical tensor of equal rank per axis."""
    out = []
    for ax in range(A.ndim):
        fs = list(A.factors)
        fs[ax] = _central_difference(A.factors[ax], h)
        out.append(CanonicalTensor(A.weights, tuple(fs)))
    return tuple(out)


def rs_gradient(rs: RSTensor) -> tuple:
    """Gradient tensors of the full range-separated potential."""
    total = canonical_sum([rs.long, rs.short_part()])
    return gradient_tensors(total, rs.grid.h)


def kernel_gradient(ref: KernelTensor, vidx) -> np.ndarray:
    """Central-difference gradient of a reference kernel at vertices (P, 3)."""
    vidx = np.atleast_2d(np.asarray(vidx, dtype=np.int64))
    h = ref.grid.h
    V = vertex_factor(ref.factors[0], h)
    out = np.empty(vidx.shape, dtype=float)
    for ax in range(3):
        e = np.zeros(3, dtype=np.int64)
        e[ax] = 1
        plus = _accel.eval_points(ref.weights, (V, V, V), vidx + e)
        minus = _accel.eval_points(ref.weights, (V, V, V), vidx - e)
        out[:, ax] = (plus - minus) / (2 * h)
    return out
