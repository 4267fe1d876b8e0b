"""Lattice sums of a reference kernel in canonical format.

The potential of ``L^d`` equal charges on a rectangular lattice is a sum
of shifted copies of one reference kernel.  Because the reference is a
canonical tensor with shared modes, the shift acts on each mode vector
separately and the whole sum costs ``O(d L n R)`` operations with the
rank of the reference unchanged.

The reference kernel lives on the doubled grid ``[-2b, 2b]``.  A node at
vertex ``j`` of the base grid sees the base window starting at row
``n - j`` of the doubled mode vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _accel
from .grid_kernels import GridSpec, KernelTensor, vertex_factor
from .tensor_core import CanonicalTensor, SizeGuardError, canonical_inner, canonical_sum

MAX_PAIRWISE_NODES = 40000


@dataclass(frozen=True)
class LatticeSpec:
    """Rectangular lattice of ``L[0] x ... x L[d-1]`` nodes.

    Parameters
    ----------
    L : int or tuple of int
        Nodes per axis.
    spacing : float
        Node distance in length units; must be a whole number of cells.
    d : int
        Dimension, used when ``L`` is an int.
    origin : tuple of int, optional
        Base-grid vertex of the first node per axis.  Centred by default.
    """

    L: tuple
    spacing: float = 1.0
    d: int = 3
    origin: tuple | None = None

    def __post_init__(self):
        L = (int(self.L),) * self.d if np.isscalar(self.L) else tuple(int(x) for x in self.L)
        if any(x < 1 for x in L):
            raise ValueError(f"lattice sizes must be positive, got {L}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "d", len(L))
        if self.origin is not None:
            object.__setattr__(self, "origin", tuple(int(o) for o in self.origin))

    @property
    def count(self) -> int:
        return int(np.prod(self.L))

    def cells_per_spacing(self, grid: GridSpec) -> int:
        s = self.spacing / grid.h
        if abs(s - round(s)) > 1e-9 * max(1.0, s) or round(s) < 1:
            raise ValueError(
                f"spacing {self.spacing} is not a whole number of cells (h = {grid.h})"
            )
        return int(round(s))

    def node_vertices(self, grid: GridSpec) -> tuple:
        """Base-grid vertex indices of the nodes, one array per axis."""
        s = self.cells_per_spacing(grid)
        n = grid.n
        out = []
        for ax, L in enumerate(self.L):
            if self.origin is None:
                start = n // 2 - (s * (L - 1)) // 2
            else:
                start = self.origin[ax]
            v = start + s * np.arange(L)
            if v[0] < 1 or v[-1] > n - 1:
                raise ValueError(
                    f"lattice axis {ax} spans vertices {v[0]}..{v[-1]}, outside 1..{n - 1}"
                )
            out.append(v.astype(np.int64))
        return tuple(out)

    def node_coords(self, grid: GridSpec) -> tuple:
        return tuple(grid.vertex_coord(v) for v in self.node_vertices(grid))


def lattice_grid(lat: LatticeSpec, cells_per_spacing: int = 2) -> GridSpec:
    """Smallest box whose central half holds the lattice, ``n = 2 L s``."""
    Lmax = max(lat.L)
    n = 2 * Lmax * cells_per_spacing
    return GridSpec(n, Lmax * lat.spacing)


# ---------------------------------------------------------------- charges


def constant_charges(L: Sequence[int], Z: float = 1.0) -> CanonicalTensor:
    return CanonicalTensor.rank_one([np.ones(int(x)) for x in L], Z)


def checkerboard_charges(L: Sequence[int], Z: float = 1.0) -> CanonicalTensor:
    """Alternating signs ``Z (-1)^(i + j + k)``, a rank-one charge tensor."""
    return CanonicalTensor.rank_one([(-1.0) ** np.arange(int(x)) for x in L], Z)


def dipole_charges(L: Sequence[int], Z: float = 1.0) -> CanonicalTensor:
    """Alternating layers along the first two axes, a rank-two charge tensor."""
    L = [int(x) for x in L]
    ones = [np.ones(x) for x in L]
    alt = [(-1.0) ** np.arange(x) for x in L]
    a = list(ones)
    a[0] = alt[0]
    b = list(ones)
    b[1 % len(L)] = alt[1 % len(L)]
    return canonical_sum(
        [CanonicalTensor.rank_one(a, Z), CanonicalTensor.rank_one(b, Z)]
    )


def _as_charges(lat: LatticeSpec, charges) -> CanonicalTensor:
    if charges is None:
        return constant_charges(lat.L)
    if isinstance(charges, CanonicalTensor):
        if charges.shape != lat.L:
            raise ValueError(f"charge tensor shape {charges.shape} does not match {lat.L}")
        return charges
    return constant_charges(lat.L, float(charges))


# ---------------------------------------------------------------- assembly


def _check_reference(ref: KernelTensor, lat: LatticeSpec) -> GridSpec:
    if not isinstance(ref, KernelTensor) or not ref.grid.doubled:
        raise ValueError("the reference kernel must be built on the doubled grid")
    if ref.ndim != lat.d:
        raise ValueError(f"reference has {ref.ndim} modes, lattice has {lat.d}")
    return ref.grid.base()


def assemble_lattice_potential(
    ref: KernelTensor, lat: LatticeSpec, charges=None
) -> CanonicalTensor:
    """Potential of the charged lattice on the base grid.

    Parameters
    ----------
    ref : KernelTensor
        Reference kernel on the doubled grid.
    lat : LatticeSpec
    charges : float or CanonicalTensor, optional
        A constant charge or a rank-``R_Z`` charge tensor of shape ``lat.L``.

    Returns
    -------
    CanonicalTensor
        Rank ``R * R_Z`` on the base grid.
    """
    grid = _check_reference(ref, lat)
    Z = _as_charges(lat, charges)
    n = grid.n
    starts = [n - v for v in lat.node_vertices(grid)]
    cache = {}
    weights = []
    blocks = [[] for _ in range(lat.d)]
    for m in range(Z.rank):
        weights.append(Z.weights[m] * ref.weights)
        for ax in range(lat.d):
            coef = np.ascontiguousarray(Z.factors[ax][:, m])
            key = (id(ref.factors[ax]), starts[ax].tobytes(), coef.tobytes())
            if key not in cache:
                cache[key] = _accel.window_sum(
                    np.ascontiguousarray(ref.factors[ax]), starts[ax], coef, n
                )
            blocks[ax].append(cache[key])
    if not weights:
        return CanonicalTensor.zeros((n,) * lat.d)
    return CanonicalTensor(
        np.concatenate(weights), tuple(np.concatenate(b, axis=1) for b in blocks)
    )


@dataclass(frozen=True)
class Defect:
    """Sub-lattice whose charges add to the base lattice (negative for vacancies)."""

    lattice: LatticeSpec
    charges: object = 1.0


def assemble_defected(
    ref: KernelTensor, base: LatticeSpec, charges=None, defects: Sequence[Defect] = ()
) -> CanonicalTensor:
    """Base lattice plus defect sub-lattices; ranks add."""
    parts = [assemble_lattice_potential(ref, base, charges)]
    for dfc in defects:
        parts.append(assemble_lattice_potential(ref, dfc.lattice, dfc.charges))
    return canonical_sum(parts)


def trace_to_lattice(P: CanonicalTensor, grid: GridSpec, lat: LatticeSpec) -> CanonicalTensor:
    """Point values of a cell tensor at the lattice nodes."""
    verts = lat.node_vertices(grid)
    return CanonicalTensor(
        P.weights, tuple(vertex_factor(f, grid.h)[v] for f, v in zip(P.factors, verts))
    )


# ---------------------------------------------------------------- energies


def lattice_energy(
    potential: CanonicalTensor, ref: KernelTensor, lat: LatticeSpec, charges=None
) -> float:
    """Interaction energy of the lattice charges.

    ``potential`` is the assembled lattice potential including the charges.
    The self interaction of each node is removed with the centre value of
    the reference kernel:

        E = 1/2 (<P_L, Z> - P(0) <Z, Z>)

    where ``P_L`` is the potential traced to the nodes.
    """
    grid = _check_reference(ref, lat)
    Z = _as_charges(lat, charges)
    PL = trace_to_lattice(potential, grid, lat)
    P0 = ref.center_value()
    return 0.5 * (canonical_inner(PL, Z) - P0 * canonical_inner(Z, Z))


def _offset_tables(ref: KernelTensor, d: int):
    """Vertex-read tables indexed by offset ``o + n`` for ``|o| <= n``."""
    grid = ref.grid
    n = grid.n
    tabs = np.stack([vertex_factor(ref.factors[ax], grid.h).T for ax in range(d)])
    # doubled grid has 2n + 1 vertices with the centre at n
    return np.ascontiguousarray(tabs), n


def lattice_pairwise_energy(ref: KernelTensor, lat: LatticeSpec, charges=None) -> float:
    """Direct double sum over node pairs with the discrete kernel.

    Raises
    ------
    SizeGuardError
        More than ``MAX_PAIRWISE_NODES`` nodes.
    """
    if lat.count > MAX_PAIRWISE_NODES:
        raise SizeGuardError(
            f"{lat.count} nodes exceed the pairwise limit {MAX_PAIRWISE_NODES}"
        )
    grid = _check_reference(ref, lat)
    Z = _as_charges(lat, charges)
    verts = lat.node_vertices(grid)
    mesh = np.meshgrid(*verts, indexing="ij")
    vidx = np.ascontiguousarray(np.stack([m.ravel() for m in mesh], axis=1))
    q = Z.full().ravel()
    tabs, center = _offset_tables(ref, lat.d)
    return float(_accel.pair_table_energy(vidx, q, tabs, ref.weights, center))


def lattice_grouped_energy(ref: KernelTensor, lat: LatticeSpec, Z: float = 1.0) -> float:
    """Pair sum for constant charges, grouped by node offset.

    Each offset ``o`` occurs ``prod_l (L_l - |o_l|)`` times, so the cost is
    ``prod_l (2 L_l - 1)`` kernel reads instead of ``N^2``.
    """
    grid = _check_reference(ref, lat)
    s = lat.cells_per_spacing(grid)
    tabs, center = _offset_tables(ref, lat.d)
    # per-axis table of term factors at each node offset
    per_axis = []
    mult = []
    for ax, L in enumerate(lat.L):
        o = np.arange(-(L - 1), L)
        per_axis.append(tabs[ax][:, center + s * o])
        mult.append((L - np.abs(o)).astype(float))
    # sum_o mult(o) K(o) with K separable per term
    total = 0.0
    for r in range(ref.rank):
        term = ref.weights[r]
        for ax in range(lat.d):
            term *= float(mult[ax] @ per_axis[ax][r])
        total += term
    self_term = lat.count * ref.center_value()
    return 0.5 * Z * Z * (total - self_term)


def coulomb_lattice_energy(L: Sequence[int], spacing: float = 1.0, Z: float = 1.0) -> float:
    """Exact Coulomb energy of a finite cubic lattice of equal charges."""
    L = [int(x) for x in L]
    grids = np.meshgrid(*[np.arange(0, x) for x in L], indexing="ij")
    offs = np.stack([g.ravel() for g in grids], axis=1)[1:]
    mult = np.ones(len(offs))
    for ax, x in enumerate(L):
        mult *= x - offs[:, ax]
    # each non-zero offset class covers 2^(#non-zero components) sign patterns
    mult *= 2.0 ** np.count_nonzero(offs, axis=1)
    r = spacing * np.sqrt(np.sum(offs.astype(float) ** 2, axis=1))
    return 0.5 * Z * Z * float(np.sum(mult / r))
