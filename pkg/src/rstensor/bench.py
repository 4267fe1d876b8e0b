"""Timing suites for kernels, lattices, particle sums and the two backends.

Every timing is the median of three runs and is reported beside an
accuracy figure, so a fast but wrong configuration is visible.
"""

from __future__ import annotations

import statistics
import time
import warnings
from typing import Callable, Sequence

import numpy as np

from . import _accel
from .grid_kernels import (
    GridSpec,
    KernelSpec,
    build_reference_kernel,
    grid_quadrature,
    kernel_pointwise_error,
)
from .lattice_sum import (
    LatticeSpec,
    assemble_lattice_potential,
    lattice_energy,
    lattice_grid,
    lattice_grouped_energy,
)
from .rs_sum import (
    SplitSpec,
    collective_potential,
    coulomb_energy,
    random_particles,
    rs_energy,
)


def median_time(fn: Callable, runs: int = 3):
    """Median wall time of ``fn()`` and its last result."""
    times = []
    out = None
    for _ in range(runs):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def bench_kernel(ns: Sequence[int] = (1024, 2048, 4096, 8192), eps: float = 1e-6, b: float = 10.0):
    """Rank and build time of the Newton reference kernel versus grid size."""
    rows = []
    K = KernelSpec()
    for n in ns:
        grid = GridSpec(n, b)

        def run():
            rule = grid_quadrature(K, grid, eps=eps)
            return rule, build_reference_kernel(grid, rule)

        t, (rule, ref) = median_time(run)
        rows.append(
            {
                "n": n,
                "rank": rule.rank,
                "seconds": t,
                "rule_error": rule.error,
                "line_error": kernel_pointwise_error(ref, norm="max", sampling="lines"),
            }
        )
    return rows


def bench_lattice(Ls: Sequence[int] = (16, 32, 64), n: int | None = None, eps: float = 1e-6):
    """Assembly time of constant-charge lattices on one fixed grid."""
    rows = []
    K = KernelSpec()
    Lmax = max(Ls)
    base = lattice_grid(LatticeSpec(Lmax), 2)
    grid = base if n is None else GridSpec(n, base.b)
    rule = grid_quadrature(K, grid, eps=eps)
    ref = build_reference_kernel(grid.double(), rule)
    for L in Ls:
        lat = LatticeSpec(L)
        t, P = median_time(lambda: assemble_lattice_potential(ref, lat))
        E = lattice_energy(P, ref, lat)
        Eg = lattice_grouped_energy(ref, lat)
        rows.append(
            {
                "L": L,
                "n": grid.n,
                "rank": P.rank,
                "seconds": t,
                "energy": E,
                "oracle_rel_diff": abs(E - Eg) / abs(Eg),
            }
        )
    return rows


def bench_particles(Ns: Sequence[int] = (50, 100, 200), n: int = 256, eps: float = 1e-4, seed: int = 0):
    """Range-separated assembly, compression and energy for random charges."""
    rows = []
    grid = GridSpec(n, 48.0)
    rule = grid_quadrature(KernelSpec(), grid, eps=1e-8)
    ref = build_reference_kernel(grid.double(), rule)
    split = SplitSpec("support", sigma=2.0)
    for N in Ns:
        system = random_particles(N, grid, min_separation=6.0, rng=seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            t, rs = median_time(lambda: collective_potential(system, ref, split, eps=eps))
        E = rs_energy(rs)
        Ex = coulomb_energy(system)
        rows.append(
            {
                "N": N,
                "n": n,
                "tucker_ranks": rs.compression.tucker.ranks,
                "rank": rs.long.rank,
                "seconds": t,
                "energy_rel_err": abs(E - Ex) / abs(Ex),
            }
        )
    return rows


def bench_backends(seed: int = 0):
    """Time the numba and numpy versions of each hot kernel on one workload.

    Returns rows with both timings and the largest difference of outputs.
    """
    rng = np.random.default_rng(seed)
    n, R, L = 512, 40, 64
    ref = rng.standard_normal((2 * n, R))
    starts = rng.integers(0, n, size=L)
    coef = rng.standard_normal(L)
    w = rng.standard_normal(R)
    F = [rng.standard_normal((n, R)) for _ in range(3)]
    idx = rng.integers(0, n, size=(20000, 3))
    x = rng.uniform(-5, 5, size=(1500, 3))
    q = rng.choice([-1.0, 1.0], size=1500)
    tabs = rng.standard_normal((3, 12, 129))
    vidx = rng.integers(0, 64, size=(600, 3)).astype(np.int64)
    wt = rng.standard_normal(12)
    V = np.abs(rng.standard_normal((48, 20)))
    cw = np.abs(rng.standard_normal(20))
    coords = 0.1 * (np.arange(48) + 0.5)

    cases = {
        "window_sum": (_accel.window_sum_nb, _accel.window_sum_np, (ref, starts, coef, n)),
        "eval_points": (_accel.eval_points_nb, _accel.eval_points_np, (w, F, idx)),
        "pair_energy": (_accel.pair_energy_nb, _accel.pair_energy_np, (x, q)),
        "pair_forces": (_accel.pair_forces_nb, _accel.pair_forces_np, (x, q)),
        "pair_table_energy": (
            _accel.pair_table_energy_nb,
            _accel.pair_table_energy_np,
            (vidx, q[:600], tabs, wt, 64),
        ),
        "wedge_error": (
            _accel.wedge_error_nb,
            _accel.wedge_error_np,
            (V, cw, coords, 1.0, _accel.NEWTON, 0.0, 0.2, False),
        ),
    }
    rows = []
    for name, (fnb, fnp, args) in cases.items():
        if _accel.HAVE_NUMBA:
            fnb(*args)  # compile outside the timing
            t_nb, out_nb = median_time(lambda: fnb(*args))
        else:
            t_nb, out_nb = float("nan"), None
        t_np, out_np = median_time(lambda: fnp(*args))
        diff = (
            float(np.max(np.abs(np.asarray(out_nb) - np.asarray(out_np))))
            if out_nb is not None
            else float("nan")
        )
        rows.append({"kernel": name, "numba_s": t_nb, "numpy_s": t_np, "max_diff": diff})
    return rows


def format_rows(rows) -> str:
    if not rows:
        return ""
    keys = list(rows[0])
    lines = ["  ".join(f"{k:>16}" for k in keys)]
    for r in rows:
        cells = []
        for k in keys:
            v = r[k]
            if isinstance(v, float):
                cells.append(f"{v:>16.4g}")
            else:
                cells.append(f"{str(v):>16}")
        lines.append("  ".join(cells))
    return "\n".join(lines)
