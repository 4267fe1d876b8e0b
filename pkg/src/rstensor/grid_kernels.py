"""Grids, radial kernels, Gaussian-sum quadrature and reference tensors.

A radial kernel ``p(|x|)`` is written as an integral over Gaussians,

    p(z) = int_0^inf phat(t) exp(-z^2 t^2) dt,

and discretised with geometrically spaced nodes ``t_k = exp(u_lo + k s)``.
The window ``[u_lo, u_hi]`` and the step ``s`` are balanced so that the
truncation and discretisation errors match for the requested rank.  Each
Gaussian term is then projected onto piecewise-constant cells of a uniform
grid, giving a canonical tensor whose mode vectors are shared by all axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf, erfc, erfcx

from . import _accel
from .tensor_core import CanonicalTensor

SQRT_PI = math.sqrt(math.pi)
# half-width of the analyticity strip used to size the node spacing
_STRIP = math.pi / 4


class QuadratureError(ArithmeticError):
    """The requested rank cannot resolve the kernel on the interval."""


# ------------------------------------------------------------------ grid


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell grid on ``[-b, b]`` (or ``[-2b, 2b]`` when doubled).

    Cell ``i`` covers ``[-w + i h, -w + (i + 1) h]`` with ``w`` the half
    width.  Vertex ``j`` sits at ``-w + j h``; the origin is vertex
    ``points // 2``.
    """

    n: int
    b: float
    doubled: bool = False

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2 or self.n % 2:
            raise ValueError(f"n must be a positive even integer, got {self.n}")
        if not self.b > 0:
            raise ValueError(f"b must be positive, got {self.b}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "b", float(self.b))

    @property
    def h(self) -> float:
        return 2.0 * self.b / self.n

    @property
    def points(self) -> int:
        return 2 * self.n if self.doubled else self.n

    @property
    def half_width(self) -> float:
        return 2.0 * self.b if self.doubled else self.b

    @property
    def center_vertex(self) -> int:
        return self.points // 2

    def double(self) -> "GridSpec":
        return replace(self, doubled=True)

    def base(self) -> "GridSpec":
        return replace(self, doubled=False)

    def edges(self) -> np.ndarray:
        return -self.half_width + self.h * np.arange(self.points + 1)

    def centers(self) -> np.ndarray:
        return -self.half_width + self.h * (np.arange(self.points) + 0.5)

    def vertex_coord(self, j):
        return -self.half_width + self.h * np.asarray(j)

    def nearest_vertex(self, x):
        return np.rint((np.asarray(x, dtype=float) + self.half_width) / self.h).astype(np.int64)


# ---------------------------------------------------------------- kernels


@dataclass(frozen=True)
class KernelSpec:
    """Radial kernel family: ``newton`` 1/r, ``yukawa`` e^{-k r}/r, ``slater`` e^{-l r}."""

    family: str = "newton"
    param: float = 0.0

    def __post_init__(self):
        fam = self.family.lower()
        if fam not in ("newton", "yukawa", "slater"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if fam == "newton":
            object.__setattr__(self, "param", 0.0)
        elif fam == "yukawa" and not self.param >= 0:
            raise ValueError("yukawa screening must be non-negative")
        elif fam == "slater" and not self.param > 0:
            raise ValueError("slater exponent must be positive")

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """Parse ``newton``, ``yukawa:<kappa>`` or ``slater:<lambda>``."""
        name, _, arg = text.strip().partition(":")
        name = name.lower()
        if name == "newton":
            if arg:
                raise ValueError("newton takes no parameter")
            return cls("newton")
        if name in ("yukawa", "slater"):
            if not arg:
                raise ValueError(f"{name} needs a parameter, e.g. {name}:0.5")
            return cls(name, float(arg))
        raise ValueError(f"unknown kernel {text!r}")

    def __str__(self) -> str:
        return "newton" if self.family == "newton" else f"{self.family}:{self.param:g}"

    @property
    def code(self) -> int:
        return {"newton": _accel.NEWTON, "yukawa": _accel.YUKAWA, "slater": _accel.SLATER}[
            self.family
        ]

    @property
    def default_norm(self) -> str:
        return "max" if self.family == "slater" else "relative"

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return _accel.kernel_value_np(r, self.code, self.param)

    @property
    def _coulomb_like(self) -> bool:
        # Yukawa with zero screening has the Newton density
        return self.family == "newton" or (self.family == "yukawa" and self.param == 0.0)

    def density(self, t):
        """Gaussian-transform density ``phat(t)``."""
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return self._density_log(np.log(t))

    def _density_log(self, logt):
        logt = np.asarray(logt, dtype=float)
        if self._coulomb_like:
            return np.full_like(logt, 2.0 / SQRT_PI)
        with np.errstate(over="ignore", under="ignore"):
            inv_t2 = np.exp(-2.0 * logt)
            if self.family == "yukawa":
                return 2.0 / SQRT_PI * np.exp(-(self.param**2) / 4.0 * inv_t2)
            lam = self.param
            return lam / SQRT_PI * np.exp(-(lam**2) / 4.0 * inv_t2 - 2.0 * logt)

    def upper_tail(self, T: float, z):
        """Bound on the integral over ``t > T`` at distance ``z``."""
        z = np.asarray(z, dtype=float)
        x = z * T
        if self.family in ("newton", "yukawa"):
            return erfc(x) / z
        lam = self.param
        with np.errstate(under="ignore"):
            return lam / SQRT_PI * np.exp(-(x**2)) * np.maximum(
                1.0 / T - z * SQRT_PI * erfcx(x), 0.0
            )

    def lower_tail(self, u: float, step: float) -> float:
        """Trapezoid mass of nodes below ``exp(u)`` on a grid of spacing ``step``."""
        if self._coulomb_like:
            e = math.exp(-step)
            return step * 2.0 / SQRT_PI * math.exp(u) * e / (1.0 - e)
        logt = u - step * np.arange(1, 4000)
        with np.errstate(under="ignore"):
            return float(step * np.sum(self._density_log(logt) * np.exp(logt)))


# ------------------------------------------------------------- quadrature


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Gaussian-sum rule ``p(z) ~ sum_k w_k exp(-t_k^2 z^2)``.

    Attributes
    ----------
    points, weights : ndarray
        Nodes ``t_k`` (increasing) and weights ``w_k``.
    kernel : KernelSpec
    interval : tuple of float
        Distance range the rule was designed for.
    norm : str
        ``relative`` (error relative to ``p(z)``) or ``max`` (relative to
        ``p`` at the left end of the interval).
    error : float
        Measured error over a dense sample of the interval.
    raw_rank : int
        Number of nodes before negligible weights were dropped.
    """

    points: np.ndarray
    weights: np.ndarray
    kernel: KernelSpec
    interval: tuple
    norm: str
    error: float
    raw_rank: int
    step: float = 0.0
    design_eps: float = 0.0

    @property
    def rank(self) -> int:
        return self.points.shape[0]

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return np.exp(-np.multiply.outer(z**2, self.points**2)) @ self.weights

    def subset(self, terms) -> "QuadratureRule":
        terms = np.asarray(terms)
        if terms.size == 0:
            terms = terms.astype(np.intp)
        return replace(self, points=self.points[terms], weights=self.weights[terms])


def _sample(interval, count=64):
    a, A = interval
    return np.geomspace(a, A, count)


def _scale(kernel: KernelSpec, z, interval, norm):
    if norm == "relative":
        return kernel(z)
    return np.full_like(z, float(kernel(interval[0])))


def _log_ratio(values, scale) -> float:
    return math.log(max(float(np.max(values / scale)), 1e-320))


def _design(kernel: KernelSpec, R: int, interval, norm):
    """Window and step for ``R`` nodes with balanced error terms."""
    z = _sample(interval)
    S = _scale(kernel, z, interval, norm)
    a, A = interval
    u_min, u_max = math.log(1e-12 / A), math.log(60.0 / a)

    def u_hi(eps):
        g = lambda u: _log_ratio(kernel.upper_tail(math.exp(u), z), S) - math.log(eps)
        if g(u_min) <= 0:
            return u_min
        return brentq(g, u_min, u_max, xtol=1e-10)

    def u_lo(eps, step, hi):
        def g(u):
            w = kernel.lower_tail(u, step)
            return _log_ratio(w * np.minimum(1.0, (z * math.exp(u)) ** 2), S) - math.log(eps)

        lo_bound = u_min - 40.0
        if g(hi) <= 0:
            return hi
        if g(lo_bound) >= 0:
            return lo_bound
        return brentq(g, lo_bound, hi, xtol=1e-10)

    def step_of(eps):
        return 2.0 * math.pi * _STRIP / math.log(2.0 / eps)

    def mismatch(le):
        eps = math.exp(le)
        s = step_of(eps)
        hi = u_hi(eps)
        return (hi - u_lo(eps, s, hi)) / s - (R - 1)

    le_lo, le_hi = math.log(1e-200), math.log(0.5)
    if R == 1 or mismatch(le_hi) > 0:
        le = le_hi
    elif mismatch(le_lo) < 0:
        le = le_lo
    else:
        le = brentq(mismatch, le_lo, le_hi, xtol=1e-6)
    eps = math.exp(le)
    hi = u_hi(eps)
    lo = u_lo(eps, step_of(eps), hi)
    return lo, hi, eps


def measure_error(rule_fn, kernel: KernelSpec, interval, norm, count=3000) -> float:
    """Largest error of ``rule_fn`` against ``kernel`` on a log-spaced sample."""
    z = _sample(interval, count)
    return float(np.max(np.abs(rule_fn(z) - kernel(z)) / _scale(kernel, z, interval, norm)))


def build_quadrature(
    kernel: KernelSpec | None = None,
    M: int | None = None,
    *,
    rank: int | None = None,
    interval: Sequence[float] = (1e-2, 10.0),
    norm: str | None = None,
) -> QuadratureRule:
    """Gaussian-sum rule of rank ``2M + 1`` (or ``rank``) for ``kernel``.

    Raises
    ------
    ValueError
        Invalid ``M``, rank or interval.
    QuadratureError
        The rule cannot reach an error below one half on the interval.
    """
    kernel = kernel or KernelSpec()
    norm = norm or kernel.default_norm
    if norm not in ("relative", "max"):
        raise ValueError(f"unknown norm {norm!r}")
    if rank is None:
        if M is None or int(M) != M or M < 1:
            raise ValueError(f"M must be a positive integer, got {M}")
        rank = 2 * int(M) + 1
        half = int(M)
    else:
        if int(rank) != rank or rank < 1:
            raise ValueError(f"rank must be a positive integer, got {rank}")
        rank = int(rank)
        half = (rank - 1) // 2
    a, A = (float(v) for v in interval)
    if not (0 < a < A and math.isfinite(A)):
        raise ValueError(f"invalid interval {interval}")
    lo, hi, eps = _design(kernel, rank, (a, A), norm)
    step = (hi - lo) / (rank - 1) if rank > 1 else 1.0
    u = lo + step * np.arange(rank)
    t = np.exp(u)
    w = step * kernel.density(t) * t
    w[0] += kernel.lower_tail(lo, step)
    keep = w >= 1e-16 * w.max()
    t, w = t[keep], w[keep]
    fn = lambda z: np.exp(-np.multiply.outer(z**2, t**2)) @ w
    err = measure_error(fn, kernel, (a, A), norm)
    if not err < 0.5:
        raise QuadratureError(
            f"rank {rank} cannot resolve {kernel} on [{a:g}, {A:g}] (error {err:.2e})"
        )
    return QuadratureRule(t, w, kernel, (a, A), norm, err, rank, step, eps)


def grid_interval(grid: GridSpec, d: int = 3) -> tuple:
    """Distances a reference kernel on ``grid`` must resolve."""
    return (grid.h, 2.0 * math.sqrt(d) * grid.b)


def rank_for_tolerance(
    kernel: KernelSpec,
    eps: float,
    interval: Sequence[float],
    norm: str | None = None,
    max_rank: int = 400,
) -> QuadratureRule:
    """Smallest-rank rule whose measured error is at most ``eps``."""
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    for R in range(3, max_rank + 1):
        try:
            rule = build_quadrature(kernel, rank=R, interval=interval, norm=norm)
        except QuadratureError:
            continue
        if rule.error <= eps:
            return rule
    raise QuadratureError(f"no rank up to {max_rank} reaches {eps:g}")


def grid_quadrature(
    kernel: KernelSpec,
    grid: GridSpec,
    *,
    eps: float | None = None,
    M: int | None = None,
    rank: int | None = None,
    d: int = 3,
    norm: str | None = None,
) -> QuadratureRule:
    """Rule sized for a grid: fixed ``M``/``rank`` or the smallest meeting ``eps``.

    With ``eps`` the error is measured in the max norm by default, i.e.
    relative to the kernel value at one cell width.
    """
    interval = grid_interval(grid.base(), d)
    if eps is not None:
        return rank_for_tolerance(kernel, eps, interval, norm or "max")
    return build_quadrature(kernel, M, rank=rank, interval=interval, norm=norm)


# ------------------------------------------------------------- projection


def _gauss_cell_integrals(t: float, edges: np.ndarray) -> np.ndarray:
    """Integrals of exp(-t^2 x^2) over consecutive intervals of ``edges >= 0``."""
    lo, hi = edges[:-1], edges[1:]
    s = t * t
    if t * edges[-1] <= 0.1:
        # power series, accurate where erf differences cancel
        out = np.zeros(lo.shape)
        coef = 1.0
        for j in range(12):
            out += coef * (hi ** (2 * j + 1) - lo ** (2 * j + 1)) / (2 * j + 1)
            coef *= -s / (j + 1)
        return out
    a, b = t * lo, t * hi
    small = a < 0.5
    out = np.empty(lo.shape)
    out[small] = erf(b[small]) - erf(a[small])
    out[~small] = erfc(a[~small]) - erfc(b[~small])
    return out * (SQRT_PI / (2.0 * t))


def project_gaussian_mode(grid: GridSpec, t: float) -> np.ndarray:
    """Cell integrals of ``exp(-t^2 x^2)``; symmetric about the grid centre."""
    m = grid.points // 2
    half = _gauss_cell_integrals(float(t), grid.h * np.arange(m + 1))
    return np.concatenate([half[::-1], half])


def project_modes(grid: GridSpec, points: np.ndarray) -> np.ndarray:
    return np.column_stack([project_gaussian_mode(grid, t) for t in points]) if len(
        points
    ) else np.zeros((grid.points, 0))


@dataclass(frozen=True, eq=False)
class KernelTensor(CanonicalTensor):
    """Canonical tensor of a projected kernel, with its grid and rule."""

    grid: GridSpec = None
    rule: QuadratureRule = None

    @property
    def kernel(self) -> KernelSpec:
        return self.rule.kernel

    def subset(self, terms) -> "KernelTensor":
        terms = np.asarray(terms)
        if terms.size == 0:
            terms = terms.astype(np.intp)
        return KernelTensor(
            self.weights[terms],
            tuple(f[:, terms] for f in self.factors),
            grid=self.grid,
            rule=self.rule.subset(terms),
        )

    def center_value(self) -> float:
        """Vertex value at the grid centre (average of the adjacent cells)."""
        c = self.grid.center_vertex
        return float(vertex_reads(self, np.full((1, self.ndim), c))[0])


def build_reference_kernel(grid: GridSpec, rule: QuadratureRule, d: int = 3) -> KernelTensor:
    """Galerkin tensor of the kernel on ``grid`` with all modes shared."""
    if d < 1:
        raise ValueError("d must be positive")
    V = project_modes(grid, rule.points)
    V.flags.writeable = False
    return KernelTensor(rule.weights.copy(), (V,) * d, grid=grid, rule=rule)


def vertex_reads(t: CanonicalTensor, vidx, h: float | None = None) -> np.ndarray:
    """Point values at grid vertices from a cell tensor.

    Each mode averages the two cells adjacent to the vertex and divides by
    the cell width, so the result is the mean over the ``2^d`` cells that
    share the vertex, scaled to a point value.
    """
    if h is None:
        h = t.grid.h
    vidx = np.atleast_2d(np.asarray(vidx, dtype=np.int64))
    for ax, n in enumerate(t.shape):
        if vidx.shape[0] and (vidx[:, ax].min() < 0 or vidx[:, ax].max() > n):
            raise IndexError("vertex index out of range")
    if t.rank == 0:
        return np.zeros(vidx.shape[0])
    return _accel.eval_points(t.weights, tuple(vertex_factor(f, h) for f in t.factors), vidx)


def vertex_factor(f: np.ndarray, h: float) -> np.ndarray:
    """Per-mode vertex read matrix of shape (n + 1, R); edge vertices see one cell."""
    z = np.zeros((1, f.shape[1]))
    padded = np.vstack([z, f, z])
    return 0.5 * (padded[:-1] + padded[1:]) / h


# ------------------------------------------------------------- accuracy


def kernel_pointwise_error(
    tensor: KernelTensor,
    exclusion: float | None = None,
    norm: str = "relative",
    sampling: str = "wedge",
) -> float:
    """Largest error of cell values (scaled by ``h^-d``) against the kernel.

    Cell centres closer than ``exclusion`` to the origin are skipped.
    ``sampling='wedge'`` checks every cell of the symmetric wedge of the
    positive octant; ``'lines'`` checks the axis, face and body diagonals,
    which is enough to expose rank deficits on very fine grids.
    """
    grid = tensor.grid
    h = grid.h
    exclusion = 10.0 * h if exclusion is None else float(exclusion)
    if exclusion < h:
        raise ValueError("exclusion radius must be at least one cell width")
    if tensor.ndim != 3:
        raise ValueError("pointwise error is defined for three-dimensional kernels")
    if norm not in ("relative", "max"):
        raise ValueError(f"unknown norm {norm!r}")
    kernel = tensor.kernel
    m = grid.points // 2
    V = np.ascontiguousarray(tensor.factors[0][m:])
    coords = h * (np.arange(m) + 0.5)
    use_max = norm == "max"
    ref = float(kernel(exclusion))
    if tensor.rank == 0:
        return 1.0
    if sampling == "wedge":
        err = _accel.wedge_error(
            V, tensor.weights, coords, h**3, kernel.code, kernel.param, exclusion, use_max
        )
        return err / ref if use_max else err
    if sampling != "lines":
        raise ValueError(f"unknown sampling {sampling!r}")
    worst = 0.0
    idx = np.arange(m)
    zero = np.zeros(m, dtype=np.int64)
    for pattern in ((idx, zero, zero), (idx, idx, zero), (idx, idx, idx)):
        vals = (V[pattern[0]] * V[pattern[1]] * V[pattern[2]]) @ tensor.weights / h**3
        r = np.sqrt(coords[pattern[0]] ** 2 + coords[pattern[1]] ** 2 + coords[pattern[2]] ** 2)
        keep = r >= exclusion
        if not keep.any():
            continue
        p = kernel(r[keep])
        err = np.abs(vals[keep] - p)
        err = err / (ref if use_max else p)
        worst = max(worst, float(err.max()))
    return worst
