"""Canonical and Tucker tensor formats with rank reduction.

A canonical tensor stores explicit weights and one factor matrix per mode,

    A[i1, ..., id] = sum_k w_k * U1[i1, k] * ... * Ud[id, k].

A Tucker tensor stores a small core and orthonormal factor matrices.  The
reduced higher-order SVD (``rhosvd``) maps canonical data to Tucker form
without ever forming the full array, and ``tucker_to_canonical`` maps back
by a nested SVD of the core.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _accel

MAX_DENSE_ENTRIES = 2**24


class SizeGuardError(RuntimeError):
    """A dense array above the configured entry limit was requested."""


def _check_dense(shape: Sequence[int], max_entries: int) -> None:
    total = int(np.prod([int(s) for s in shape], dtype=np.float64))
    if total > max_entries:
        raise SizeGuardError(
            f"dense array of shape {tuple(shape)} has {total} entries "
            f"(limit {max_entries})"
        )


@dataclass(frozen=True, eq=False)
class CanonicalTensor:
    """Rank-R canonical tensor with explicit weights.

    Parameters
    ----------
    weights : array_like, shape (R,)
        Term weights.
    factors : sequence of arrays, each of shape (n_l, R)
        Mode factor matrices; column ``k`` of each belongs to term ``k``.
    """

    weights: np.ndarray
    factors: tuple

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=float).reshape(-1)
        fs = tuple(np.asarray(f, dtype=float) for f in self.factors)
        if len(fs) == 0:
            raise ValueError("a canonical tensor needs at least one mode")
        for ax, f in enumerate(fs):
            if f.ndim != 2 or f.shape[1] != w.shape[0]:
                raise ValueError(
                    f"factor {ax} has shape {f.shape}, expected (n, {w.shape[0]})"
                )
            if not np.all(np.isfinite(f)):
                raise ValueError(f"factor {ax} contains non-finite values")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights contain non-finite values")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "factors", fs)

    @property
    def rank(self) -> int:
        return self.weights.shape[0]

    @property
    def ndim(self) -> int:
        return len(self.factors)

    @property
    def shape(self) -> tuple:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def storage(self) -> int:
        """Number of stored floats."""
        return self.rank + sum(f.size for f in self.factors)

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "CanonicalTensor":
        return cls(np.zeros(0), tuple(np.zeros((int(n), 0)) for n in shape))

    @classmethod
    def rank_one(cls, vectors: Sequence[np.ndarray], weight: float = 1.0):
        return cls(np.array([weight]), tuple(np.asarray(v, float)[:, None] for v in vectors))

    @classmethod
    def random(cls, shape, rank, rng=None) -> "CanonicalTensor":
        rng = np.random.default_rng(rng)
        return cls(
            rng.standard_normal(rank),
            tuple(rng.standard_normal((int(n), rank)) for n in shape),
        )

    def subset(self, terms) -> "CanonicalTensor":
        terms = np.asarray(terms)
        if terms.size == 0:
            terms = terms.astype(np.intp)
        return CanonicalTensor(self.weights[terms], tuple(f[:, terms] for f in self.factors))

    def scaled(self, c: float) -> "CanonicalTensor":
        return CanonicalTensor(c * self.weights, self.factors)

    def normalized(self) -> "CanonicalTensor":
        """Equivalent tensor with unit-norm factor columns."""
        w = self.weights.copy()
        fs = []
        for f in self.factors:
            nrm = np.linalg.norm(f, axis=0)
            safe = np.where(nrm > 0, nrm, 1.0)
            w = w * nrm
            fs.append(f / safe)
        return CanonicalTensor(w, tuple(fs))

    def full(self, max_entries: int = MAX_DENSE_ENTRIES) -> np.ndarray:
        return full_assemble(self, max_entries)

    def at(self, idx) -> np.ndarray:
        """Entries at integer multi-indices ``idx`` of shape (P, d)."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        if idx.shape[1] != self.ndim:
            raise ValueError("index width does not match tensor order")
        for ax, n in enumerate(self.shape):
            if idx.shape[0] and (idx[:, ax].min() < 0 or idx[:, ax].max() >= n):
                raise IndexError(f"index out of range in mode {ax}")
        if self.rank == 0:
            return np.zeros(idx.shape[0])
        return _accel.eval_points(self.weights, self.factors, idx)

    def norm(self) -> float:
        return float(np.sqrt(max(canonical_inner(self, self), 0.0)))

    def fix_mode(self, axis: int, index: int) -> "CanonicalTensor":
        """Order ``d - 1`` tensor obtained by fixing one index."""
        if self.ndim < 2:
            raise ValueError("cannot fix the only mode")
        w = self.weights * self.factors[axis][index]
        return CanonicalTensor(w, tuple(f for ax, f in enumerate(self.factors) if ax != axis))

    def __add__(self, other):
        return canonical_sum([self, other])

    def __neg__(self):
        return self.scaled(-1.0)

    def __sub__(self, other):
        return canonical_sum([self, -other])


def canonical_sum(tensors: Sequence[CanonicalTensor], coefs=None) -> CanonicalTensor:
    """Concatenate terms; the result has rank equal to the sum of ranks."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("nothing to sum")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ValueError(f"shape mismatch: {t.shape} vs {shape}")
    if coefs is None:
        coefs = np.ones(len(tensors))
    w = np.concatenate([c * t.weights for c, t in zip(coefs, tensors)])
    fs = tuple(
        np.concatenate([t.factors[ax] for t in tensors], axis=1) for ax in range(len(shape))
    )
    return CanonicalTensor(w, fs)


def canonical_inner(a: CanonicalTensor, b: CanonicalTensor) -> float:
    """Frobenius inner product in O(d n R_a R_b) operations."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.rank == 0 or b.rank == 0:
        return 0.0
    G = np.ones((a.rank, b.rank))
    for fa, fb in zip(a.factors, b.factors):
        G *= fa.T @ fb
    return float(a.weights @ G @ b.weights)


def full_assemble(a: CanonicalTensor, max_entries: int = MAX_DENSE_ENTRIES) -> np.ndarray:
    """Dense array of a canonical tensor, guarded against huge outputs."""
    _check_dense(a.shape, max_entries)
    if a.rank == 0:
        return np.zeros(a.shape)
    left = a.factors[0] * a.weights
    if a.ndim == 1:
        return left.sum(axis=1)
    right = a.factors[1]
    for f in a.factors[2:]:
        right = (right[:, None, :] * f[None, :, :]).reshape(-1, a.rank)
    return (left @ right.T).reshape(a.shape)


def mode_multiply(core: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """Multiply mode ``l`` of ``core`` by ``mats[l]`` for every mode."""
    out = core
    for ax, m in enumerate(mats):
        out = np.moveaxis(np.tensordot(m, out, axes=(1, ax)), 0, ax)
    return out


@dataclass(frozen=True, eq=False)
class TuckerTensor:
    """Orthogonal Tucker tensor ``core x_1 V1 ... x_d Vd``.

    ``singular_values`` optionally keeps the side-matrix spectra that chose
    the ranks.
    """

    core: np.ndarray
    factors: tuple
    singular_values: tuple | None = None

    def __post_init__(self):
        core = np.asarray(self.core, dtype=float)
        fs = tuple(np.asarray(f, dtype=float) for f in self.factors)
        if core.ndim != len(fs):
            raise ValueError("core order does not match number of factors")
        for ax, f in enumerate(fs):
            if f.ndim != 2 or f.shape[1] != core.shape[ax]:
                raise ValueError(f"factor {ax} shape {f.shape} does not fit core")
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "factors", fs)

    @property
    def ranks(self) -> tuple:
        return self.core.shape

    @property
    def shape(self) -> tuple:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def ndim(self) -> int:
        return self.core.ndim

    def orthonormality_defect(self) -> float:
        worst = 0.0
        for f in self.factors:
            if f.shape[1]:
                worst = max(worst, float(np.abs(f.T @ f - np.eye(f.shape[1])).max()))
        return worst

    def full(self, max_entries: int = MAX_DENSE_ENTRIES) -> np.ndarray:
        _check_dense(self.shape, max_entries)
        return mode_multiply(self.core, self.factors)


def side_spectra(a: CanonicalTensor) -> tuple:
    """Left singular vectors and singular values of the scaled side matrices.

    The side matrix of mode ``l`` has column ``k`` equal to
    ``|w_k| prod_{m != l} ||U_m[:, k]|| * U_l[:, k]``.
    """
    norms = [np.linalg.norm(f, axis=0) for f in a.factors]
    out = []
    for ax, f in enumerate(a.factors):
        scale = np.abs(a.weights).copy()
        for m, nrm in enumerate(norms):
            if m != ax:
                scale *= nrm
        U, s, _ = np.linalg.svd(f * scale, full_matrices=False)
        out.append((U, s))
    return tuple(out)


def rhosvd(a: CanonicalTensor, eps: float | None = None, ranks=None) -> TuckerTensor:
    """Reduced HOSVD of a canonical tensor.

    Parameters
    ----------
    a : CanonicalTensor
    eps : float, optional
        Keep singular values ``>= eps * sigma_max`` in each mode.
    ranks : sequence of int, optional
        Fixed Tucker ranks; overrides ``eps``.
    """
    if ranks is None and (eps is None or not eps > 0):
        raise ValueError("eps must be positive when ranks are not given")
    if a.rank == 0:
        return TuckerTensor(
            np.zeros((0,) * a.ndim), tuple(np.zeros((n, 0)) for n in a.shape), ()
        )
    spectra = side_spectra(a)
    Vs = []
    for ax, (U, s) in enumerate(spectra):
        if ranks is not None:
            r = int(ranks[ax])
            if r < 0 or r > s.shape[0]:
                raise ValueError(f"rank {r} not available in mode {ax}")
        else:
            r = int(np.count_nonzero(s >= eps * s[0])) if s[0] > 0 else 0
        Vs.append(U[:, :r])
    projected = tuple(V.T @ f for V, f in zip(Vs, a.factors))
    core = full_assemble(CanonicalTensor(a.weights, projected), max_entries=2**31)
    return TuckerTensor(core, tuple(Vs), tuple(s for _, s in spectra))


def canonical_to_tucker(a: CanonicalTensor, eps: float) -> TuckerTensor:
    return rhosvd(a, eps=eps)


def _core_terms(core: np.ndarray, tol: float):
    """Canonical terms of a small core with Frobenius error at most ``tol``.

    Returns weights and a list of per-mode vector matrices.
    """
    d = core.ndim
    if d == 1:
        nrm = np.linalg.norm(core)
        if nrm == 0.0 or nrm <= tol:
            return np.zeros(0), [np.zeros((core.shape[0], 0))]
        return np.array([nrm]), [(core / nrm)[:, None]]
    mat = core.reshape(core.shape[0], -1)
    U, s, Vt = np.linalg.svd(mat, full_matrices=False)
    tail = np.sqrt(np.cumsum((s**2)[::-1])[::-1])
    budget = tol / np.sqrt(2.0)
    keep = int(np.count_nonzero(tail > budget))
    keep = min(keep, int(np.count_nonzero(s > 0)))
    ws = []
    blocks = [[] for _ in range(d)]
    for i in range(keep):
        sub_tol = budget / (np.sqrt(keep) * s[i])
        w_sub, v_sub = _core_terms(Vt[i].reshape(core.shape[1:]), sub_tol)
        if w_sub.size == 0:
            continue
        ws.append(s[i] * w_sub)
        blocks[0].append(np.repeat(U[:, i : i + 1], w_sub.size, axis=1))
        for ax in range(1, d):
            blocks[ax].append(v_sub[ax - 1])
    if not ws:
        return np.zeros(0), [np.zeros((n, 0)) for n in core.shape]
    return np.concatenate(ws), [np.concatenate(b, axis=1) for b in blocks]


def tucker_to_canonical(t: TuckerTensor, eps: float | None = None) -> CanonicalTensor:
    """Canonical form of a Tucker tensor via a nested SVD of its core.

    The output rank is at most the product of the two largest Tucker ranks
    (in three dimensions) and the Frobenius error is at most
    ``eps * ||core||``.
    """
    if eps is not None and eps < 0:
        raise ValueError("eps must be non-negative")
    core = t.core
    if core.size == 0 or not np.any(core):
        return CanonicalTensor.zeros(t.shape)
    # largest-rank mode first keeps the nested rank small
    order = sorted(range(t.ndim), key=lambda ax: -core.shape[ax])
    permuted = np.transpose(core, order)
    tol = (eps or 0.0) * np.linalg.norm(core)
    w, vecs = _core_terms(permuted, tol)
    if w.size == 0:
        return CanonicalTensor.zeros(t.shape)
    factors = [None] * t.ndim
    for pos, ax in enumerate(order):
        factors[ax] = t.factors[ax] @ vecs[pos]
    return CanonicalTensor(w, tuple(factors))


def add_and_compress(tensors: Sequence[CanonicalTensor], eps: float) -> CanonicalTensor:
    """Sum canonical tensors and reduce the rank through Tucker form."""
    return tucker_to_canonical(rhosvd(canonical_sum(tensors), eps=eps), eps=eps)
