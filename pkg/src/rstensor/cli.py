"""Command line interface.

Subcommands: kernel, lattice, particles, energy, forces, delta, bench.
Settings come from defaults, then an optional ``key=value`` config file,
then explicit flags.  Exit codes: 0 ok, 1 input error, 2 numerical
failure, 3 resource guard.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import _accel
from . import io as rio
from .grid_kernels import (
    GridSpec,
    KernelSpec,
    QuadratureError,
    build_reference_kernel,
    grid_quadrature,
    kernel_pointwise_error,
)
from .lattice_sum import (
    Defect,
    LatticeSpec,
    assemble_defected,
    checkerboard_charges,
    dipole_charges,
    lattice_energy,
    lattice_grid,
    lattice_grouped_energy,
    lattice_pairwise_energy,
    MAX_PAIRWISE_NODES,
)
from .rs_sum import (
    MAX_PAIRWISE_PARTICLES,
    ParticleSystem,
    SplitSpec,
    collective_potential,
    coulomb_energy,
    coulomb_forces,
    random_particles,
    rs_energy,
    rs_forces,
    split_reference,
)
from .tensor_core import SizeGuardError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_GUARD = 0, 1, 2, 3

DEFAULTS = {
    "n": 128,
    "b": 10.0,
    "kernel": "newton",
    "eps": 1e-6,
    "rank": None,
    "seed": 0,
    "threads": 1,
    "out": "rstensor_out",
    "max_n": 8192,
    # lattice
    "L": 4,
    "d": 3,
    "spacing": 1.0,
    "charges": "constant",
    "Z": 1.0,
    "defects": None,
    # particles
    "particles": None,
    "N": 20,
    "min_separation": 0.0,
    "split": "interval:1",
    "compress": None,
    "eps_m": 1.0,
    "quick": False,
}

_TYPES = {
    "n": int,
    "b": float,
    "eps": float,
    "rank": int,
    "seed": int,
    "max_n": int,
    "threads": int,
    "L": int,
    "d": int,
    "spacing": float,
    "Z": float,
    "N": int,
    "min_separation": float,
    "compress": float,
    "eps_m": float,
}


class InputError(ValueError):
    pass


def read_config(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        key, sep, value = text.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in DEFAULTS:
            raise InputError(f"{path}:{lineno}: unknown setting {text!r}")
        value = value.strip()
        if key == "quick":
            out[key] = value.lower() in ("1", "true", "yes", "on")
        else:
            try:
                out[key] = _TYPES.get(key, str)(value)
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
    return out


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", help="key=value settings file")
    g.add_argument("--n", type=int, help="cells per axis (even)")
    g.add_argument("--b", type=float, help="box half-width")
    g.add_argument("--kernel", help="newton, yukawa:<kappa> or slater:<lambda>")
    g.add_argument("--eps", type=float, help="kernel tolerance")
    g.add_argument("--rank", type=int, help="fixed kernel rank instead of --eps")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int)
    g.add_argument("--out", help="output directory")
    g.add_argument("--max-n", dest="max_n", type=int, help="largest accepted n (default 8192)")

    p = argparse.ArgumentParser(prog="rstensor", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("kernel", parents=[common], help="reference kernel tensor")

    lat = sub.add_parser("lattice", parents=[common], help="lattice potential and energy")
    lat.add_argument("--L", type=int)
    lat.add_argument("--d", type=int)
    lat.add_argument("--spacing", type=float)
    lat.add_argument("--charges", help="constant, checkerboard, dipole or an RSTF1 file")
    lat.add_argument("--Z", type=float, help="charge scale")
    lat.add_argument("--defects", help="file of 'i j k q' lines added at lattice nodes")

    for name, text in (
        ("particles", "range-separated potential of point charges"),
        ("energy", "interaction energy of point charges"),
        ("forces", "forces on point charges"),
        ("delta", "discrete delta and regularised right-hand side"),
    ):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--particles", help="file of 'x y z q' lines")
        sp.add_argument("--N", type=int, help="random particles when no file is given")
        sp.add_argument("--min-separation", dest="min_separation", type=float)
        sp.add_argument("--split", help="interval[:t], support:<sigma>[:<delta>] or count:<R_l>")
        sp.add_argument("--compress", type=float, help="long-range compression tolerance")
        if name == "delta":
            sp.add_argument("--eps-m", dest="eps_m", type=float, help="dielectric constant")

    bench = sub.add_parser("bench", parents=[common], help="timing suites")
    bench.add_argument("--quick", action="store_true", default=None)
    return p


def resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(read_config(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["command"] = args.command
    return cfg


def _echo_config(cfg: dict, out: Path) -> None:
    lines = [f"{k}={cfg[k]}" for k in sorted(cfg) if cfg[k] is not None]
    (out / "config.txt").write_text("\n".join(lines) + "\n")


def _kernel(cfg, grid: GridSpec, d: int = 3):
    K = KernelSpec.parse(cfg["kernel"])
    if grid.n > cfg["max_n"]:
        raise SizeGuardError(f"n = {grid.n} exceeds the grid limit {cfg['max_n']}")
    if cfg["rank"] is not None:
        rule = grid_quadrature(K, grid, rank=cfg["rank"], d=d)
    else:
        rule = grid_quadrature(K, grid, eps=cfg["eps"], d=d)
    return K, rule


def _system(cfg, grid: GridSpec) -> ParticleSystem:
    if cfg["particles"]:
        x, q = rio.read_particles(cfg["particles"])
        return ParticleSystem(x, q, grid)
    return random_particles(cfg["N"], grid, cfg["min_separation"], rng=cfg["seed"])


def _report(lines, out: Path, name: str) -> None:
    text = "\n".join(lines) + "\n"
    (out / name).write_text(text)
    sys.stdout.write(text)


def cmd_kernel(cfg, out: Path) -> None:
    grid = GridSpec(cfg["n"], cfg["b"])
    K, rule = _kernel(cfg, grid)
    ref = build_reference_kernel(grid, rule)
    rio.write_rstf(out / "kernel.rstf", ref)
    rio.write_mode_profiles(out / "kernel_modes.csv", ref, grid)
    sampling = "wedge" if grid.n <= 512 else "lines"
    norm = "max" if cfg["rank"] is None else K.default_norm
    err = kernel_pointwise_error(ref, norm=norm, sampling=sampling)
    _report(
        [
            f"kernel={K}",
            f"n={grid.n} b={grid.b} h={grid.h!r}",
            f"rank={rule.rank} raw_rank={rule.raw_rank}",
            f"rule_error={rule.error:.6e} norm={rule.norm}",
            f"pointwise_error={err:.6e} ({sampling}, {norm}, exclusion 10h)",
        ],
        out,
        "kernel.txt",
    )


def _charges(cfg, lat: LatticeSpec):
    kind = cfg["charges"]
    Z = cfg["Z"]
    if kind == "constant":
        return Z
    if kind == "checkerboard":
        return checkerboard_charges(lat.L, Z)
    if kind == "dipole":
        return dipole_charges(lat.L, Z)
    path = Path(kind)
    if not path.exists():
        raise InputError(f"unknown charge setting {kind!r}")
    return rio.read_rstf(path).scaled(Z)


def _defects(cfg, lat: LatticeSpec, grid: GridSpec):
    if not cfg["defects"]:
        return []
    verts = lat.node_vertices(grid)
    out = []
    for lineno, line in enumerate(Path(cfg["defects"]).read_text().splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != lat.d + 1:
            raise InputError(f"{cfg['defects']}:{lineno}: expected {lat.d} indices and a charge")
        idx = [int(p) for p in parts[:-1]]
        if any(not 0 <= i < L for i, L in zip(idx, lat.L)):
            raise InputError(f"{cfg['defects']}:{lineno}: node outside the lattice")
        origin = tuple(int(verts[ax][i]) for ax, i in enumerate(idx))
        sub = LatticeSpec((1,) * lat.d, lat.spacing, origin=origin)
        out.append(Defect(sub, float(parts[-1])))
    return out


def cmd_lattice(cfg, out: Path) -> None:
    lat = LatticeSpec(cfg["L"], cfg["spacing"], d=cfg["d"])
    if cfg.get("_n_given"):
        grid = GridSpec(cfg["n"], cfg["b"])
    else:
        grid = lattice_grid(lat, 4)
    K, rule = _kernel(cfg, grid, d=lat.d)
    ref = build_reference_kernel(grid.double(), rule, d=lat.d)
    charges = _charges(cfg, lat)
    defects = _defects(cfg, lat, grid)
    P = assemble_defected(ref, lat, charges, defects)
    rio.write_rstf(out / "lattice.rstf", P)
    lines = [
        f"kernel={K} d={lat.d} L={lat.L} spacing={lat.spacing}",
        f"n={grid.n} b={grid.b} rank={P.rank} reference_rank={ref.rank}",
    ]
    if lat.d == 3 and grid.n <= 1024:
        plane = P.fix_mode(2, grid.n // 2).full()
        rio.write_cross_section(out / "lattice_plane.csv", plane, grid)
    if not defects:
        E = lattice_energy(P, ref, lat, charges)
        lines.append(f"energy={E!r}")
        if lat.count <= MAX_PAIRWISE_NODES:
            Eo = lattice_pairwise_energy(ref, lat, charges)
            lines.append(f"pairwise_energy={Eo!r} rel_diff={abs(E - Eo) / max(abs(Eo), 1e-300):.3e}")
        elif np.isscalar(charges):
            Eg = lattice_grouped_energy(ref, lat, charges)
            lines.append(f"grouped_energy={Eg!r} rel_diff={abs(E - Eg) / abs(Eg):.3e}")
    _report(lines, out, "lattice.txt")


def _rs(cfg, out: Path):
    grid = GridSpec(cfg["n"], cfg["b"])
    K, rule = _kernel(cfg, grid)
    ref = build_reference_kernel(grid.double(), rule)
    system = _system(cfg, grid)
    split = SplitSpec.parse(cfg["split"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        rs = collective_potential(system, ref, split, eps=cfg["compress"])
    notes = [f"warning: {w.message}" for w in caught]
    return grid, K, ref, system, split, rs, notes


def cmd_particles(cfg, out: Path) -> None:
    grid, K, ref, system, split, rs, notes = _rs(cfg, out)
    rio.write_rstf(out / "long.rstf", rs.long)
    half = rs.short_half[0]
    from .tensor_core import CanonicalTensor

    rio.write_rstf(out / "short_half.rstf", CanonicalTensor(rs.short_weights, rs.short_half))
    rio.write_particles(out / "particles.txt", system.snapped, system.charges)
    if rs.compression is not None:
        rio.write_singular_values(out / "singular_values.csv", rs.compression.tucker.singular_values)
    if grid.n <= 1024:
        rio.write_cross_section(out / "particles_plane.csv", rs.plane(2, grid.n // 2), grid)
    st = rs.storage()
    lines = [
        f"kernel={K} N={system.N} n={grid.n} b={grid.b}",
        f"long_rank={rs.long.rank} short_rank={half.shape[1]} gamma={rs.gamma}",
        f"storage long={st['long']} particles={st['particles']} short={st['short']} "
        f"total={st['total']} dense={st['dense']}",
        f"snap_shift={system.snap_shift!r} min_separation={system.min_separation()!r}",
    ] + notes
    _report(lines, out, "particles.txt")


def cmd_energy(cfg, out: Path) -> None:
    grid, K, ref, system, split, rs, notes = _rs(cfg, out)
    if K.family != "newton":
        raise InputError("energies are defined for the Newton kernel")
    E = rs_energy(rs)
    lines = [f"N={system.N} n={grid.n} energy={E!r}"]
    if system.N <= MAX_PAIRWISE_PARTICLES:
        Ex = coulomb_energy(system)
        lines.append(f"pairwise_energy={Ex!r} rel_diff={abs(E - Ex) / max(abs(Ex), 1e-300):.3e}")
    _report(lines + notes, out, "energy.txt")


def cmd_forces(cfg, out: Path) -> None:
    grid, K, ref, system, split, rs, notes = _rs(cfg, out)
    if K.family != "newton":
        raise InputError("forces are defined for the Newton kernel")
    long_ref, _ = split_reference(ref, split)
    F = rs_forces(rs, long_ref)
    rio.write_forces(out / "forces.csv", F)
    lines = [f"N={system.N} n={grid.n}"]
    if system.N <= MAX_PAIRWISE_PARTICLES:
        Fx = coulomb_forces(system)
        scale = np.abs(Fx).max() if system.N > 1 else 1.0
        lines.append(f"max_rel_force_error={np.abs(F - Fx).max() / scale:.3e}")
        rio.write_forces(out / "forces_direct.csv", Fx)
    _report(lines + notes, out, "forces.txt")


def cmd_delta(cfg, out: Path) -> None:
    from .dirac_pbe import MAX_SOLVE_N, dirac_delta, regularized_rhs, solve_and_check

    grid = GridSpec(cfg["n"], cfg["b"])
    K, rule = _kernel(cfg, grid)
    ref = build_reference_kernel(grid.double(), rule)
    split = SplitSpec.parse(cfg["split"])
    dd = dirac_delta(ref, split)
    rio.write_rstf(out / "delta_full.rstf", dd.full)
    rio.write_rstf(out / "delta_short.rstf", dd.short)
    rio.write_rstf(out / "delta_long.rstf", dd.long)
    lines = [
        f"n={grid.n} b={grid.b} rank_full={dd.full.rank} rank_short={dd.short.rank} "
        f"rank_long={dd.long.rank}",
    ]
    if cfg["particles"] or cfg["N"]:
        system = _system(cfg, grid)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rhs = regularized_rhs(system, ref, split, cfg["eps_m"], cfg["compress"])
        rio.write_rstf(out / "rho_long.rstf", rhs.rho_long)
        lines.append(f"N={system.N} rho_long_rank={rhs.rho_long.rank} eps_m={rhs.eps_m}")
        if grid.n <= MAX_SOLVE_N:
            _, rep = solve_and_check(rhs)
            lines.append(
                f"solve residual={rep.residual:.3e} potential_error={rep.potential_error:.3e}"
            )
            lines.append(f"energy={rep.energy!r} energy_from_solve={rep.energy_from_solution!r}")
        else:
            lines.append(f"solve skipped: n > {MAX_SOLVE_N}")
    _report(lines, out, "delta.txt")


def cmd_bench(cfg, out: Path) -> None:
    from . import bench

    quick = bool(cfg["quick"])
    sections = [
        ("backends", bench.bench_backends(cfg["seed"])),
        ("kernel", bench.bench_kernel((256, 512) if quick else (1024, 2048, 4096, 8192))),
        ("lattice", bench.bench_lattice((4, 8, 16) if quick else (16, 32, 64))),
        ("particles", bench.bench_particles((20, 40) if quick else (50, 100, 200))),
    ]
    text = []
    for name, rows in sections:
        text.append(f"[{name}] backend={_accel.BACKEND}")
        text.append(bench.format_rows(rows))
    sys.stdout.write("\n".join(text) + "\n")


COMMANDS = {
    "kernel": cmd_kernel,
    "lattice": cmd_lattice,
    "particles": cmd_particles,
    "energy": cmd_energy,
    "forces": cmd_forces,
    "delta": cmd_delta,
    "bench": cmd_bench,
}


def _set_threads(n: int) -> None:
    if n < 1:
        raise InputError("threads must be positive")
    if _accel.HAVE_NUMBA and n > 1:
        import numba

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        cfg = resolve(args)
        cfg["_n_given"] = args.n is not None or (
            args.config is not None and "n" in read_config(args.config)
        )
        _set_threads(cfg["threads"])
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        _echo_config({k: v for k, v in cfg.items() if not k.startswith("_")}, out)
        COMMANDS[args.command](cfg, out)
    except SizeGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (QuadratureError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
