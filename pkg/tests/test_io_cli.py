import csv
import struct

import numpy as np
import pytest

from rstensor import CanonicalTensor, GridSpec
from rstensor.cli import main, read_config
from rstensor.io import (
    FormatError,
    read_particles,
    read_rstf,
    write_cross_section,
    write_forces,
    write_mode_profiles,
    write_particles,
    write_rstf,
    write_singular_values,
)


class TestRSTF:
    @pytest.mark.parametrize("shape,rank", [((3, 4, 5), 2), ((7,), 0), ((2, 2, 2, 2), 3)])
    def test_round_trip(self, tmp_path, shape, rank):
        a = CanonicalTensor.random(shape, rank, rng=1)
        p = tmp_path / "a.rstf"
        write_rstf(p, a)
        b = read_rstf(p)
        assert b.shape == a.shape and b.rank == a.rank
        np.testing.assert_array_equal(b.weights, a.weights)
        for fa, fb in zip(a.factors, b.factors):
            np.testing.assert_array_equal(fa, fb)

    def test_layout(self, tmp_path):
        a = CanonicalTensor(np.array([2.0]), (np.array([[1.0], [3.0]]),))
        p = tmp_path / "a.rstf"
        write_rstf(p, a)
        assert p.read_bytes() == b"RSTF1" + struct.pack("<III", 1, 1, 2) + struct.pack("<3d", 2, 1, 3)

    @pytest.mark.parametrize("mutate", ["magic", "truncate", "extra", "header"])
    def test_malformed(self, tmp_path, mutate):
        p = tmp_path / "a.rstf"
        write_rstf(p, CanonicalTensor.random((3, 3), 2, rng=0))
        data = p.read_bytes()
        data = {
            "magic": b"XXXX1" + data[5:],
            "truncate": data[:-3],
            "extra": data + b"\0",
            "header": data[:8],
        }[mutate]
        p.write_bytes(data)
        with pytest.raises(FormatError):
            read_rstf(p)


class TestParticleFiles:
    def test_empty(self, tmp_path):
        p = tmp_path / "p.txt"
        p.write_text("# nothing\n\n")
        x, q = read_particles(p)
        assert x.shape == (0, 3) and q.shape == (0,)

    def test_single_and_comments(self, tmp_path):
        p = tmp_path / "p.txt"
        p.write_text("0 0 0 1  # origin\n1.5, -2, 0.25, -1\n")
        x, q = read_particles(p)
        np.testing.assert_array_equal(x, [[0, 0, 0], [1.5, -2, 0.25]])
        np.testing.assert_array_equal(q, [1, -1])

    def test_round_trip(self, tmp_path, rng):
        x = rng.uniform(-3, 3, size=(200, 3))
        q = rng.choice([-1.0, 1.0], size=200)
        p = tmp_path / "p.txt"
        write_particles(p, x, q)
        x2, q2 = read_particles(p)
        np.testing.assert_array_equal(x, x2)
        np.testing.assert_array_equal(q, q2)

    @pytest.mark.parametrize("line", ["1 2 3", "1 2 3 4 5", "1 2 x 4", "1 2 nan 4"])
    def test_bad_lines(self, tmp_path, line):
        p = tmp_path / "p.txt"
        p.write_text("0 0 0 1\n" + line + "\n")
        with pytest.raises(FormatError, match=":2:"):
            read_particles(p)


class TestCSV:
    def _rows(self, p):
        with open(p) as fh:
            return list(csv.reader(fh))

    def test_headers(self, tmp_path):
        g = GridSpec(4, 1.0)
        a = CanonicalTensor.random((4, 4, 4), 2, rng=0)
        write_mode_profiles(tmp_path / "m.csv", a, g)
        write_singular_values(tmp_path / "s.csv", [np.array([3.0, 1.0])])
        write_cross_section(tmp_path / "c.csv", np.ones((4, 4)), g)
        write_forces(tmp_path / "f.csv", np.zeros((2, 3)))
        assert self._rows(tmp_path / "m.csv")[0] == ["index", "coordinate", "term_0", "term_1"]
        assert self._rows(tmp_path / "s.csv") == [["mode", "index", "value"], ["0", "0", "3.0"], ["0", "1", "1.0"]]
        assert len(self._rows(tmp_path / "c.csv")) == 17
        assert self._rows(tmp_path / "f.csv")[0] == ["index", "Fx", "Fy", "Fz"]

    def test_profile_grid_mismatch(self, tmp_path):
        with pytest.raises(ValueError):
            write_mode_profiles(tmp_path / "m.csv", CanonicalTensor.random((5,), 1), GridSpec(4, 1.0))


class TestCLI:
    def _run(self, tmp_path, *args):
        return main([*args, "--out", str(tmp_path)])

    def test_kernel(self, tmp_path):
        assert self._run(tmp_path, "kernel", "--n", "64", "--eps", "1e-5") == 0
        k = read_rstf(tmp_path / "kernel.rstf")
        assert k.shape == (64, 64, 64)
        assert (tmp_path / "kernel_modes.csv").exists()
        assert "rank" in (tmp_path / "kernel.txt").read_text()

    @pytest.mark.parametrize("charges", ["constant", "checkerboard", "dipole"])
    def test_lattice(self, tmp_path, charges):
        assert self._run(tmp_path, "lattice", "--L", "3", "--charges", charges) == 0
        assert (tmp_path / "lattice.rstf").exists()
        assert "energy" in (tmp_path / "lattice.txt").read_text()

    def test_lattice_with_defects(self, tmp_path):
        d = tmp_path / "defects.txt"
        d.write_text("1 1 1 -1\n")
        assert self._run(tmp_path, "lattice", "--L", "3", "--defects", str(d)) == 0

    def test_particle_commands(self, tmp_path):
        p = tmp_path / "p.txt"
        write_particles(p, [[0, 0, 0], [2, 0, 0], [0, 2, 1]], [1, -1, 1])
        common = ["--n", "64", "--b", "8", "--particles", str(p), "--split", "support:0.5"]
        for cmd in ("particles", "energy", "forces"):
            assert self._run(tmp_path, cmd, *common) == 0
        assert (tmp_path / "forces.csv").exists() and (tmp_path / "energy.txt").exists()
        assert self._run(tmp_path, "delta", "--n", "32", "--b", "8", "--N", "3", "--min-separation", "1") == 0
        assert (tmp_path / "rho_long.rstf").exists()

    def test_deterministic(self, tmp_path):
        args = ["energy", "--n", "64", "--b", "8", "--N", "10", "--min-separation", "1.5", "--seed", "4", "--compress", "1e-6"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        for name in ("energy.txt", "config.txt"):
            a = (tmp_path / "a" / name).read_bytes().replace(b"/a", b"/b")
            assert a == (tmp_path / "b" / name).read_bytes()

    def test_config_file_and_override(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("n = 48\neps = 1e-4  # coarse\n")
        assert read_config(cfg) == {"n": 48, "eps": 1e-4}
        assert self._run(tmp_path, "kernel", "--config", str(cfg), "--n", "32") == 0
        assert read_rstf(tmp_path / "kernel.rstf").shape == (32, 32, 32)

    @pytest.mark.parametrize(
        "args,code",
        [
            (["kernel", "--n", "7"], 1),
            (["kernel", "--kernel", "foo"], 1),
            (["nosuch"], 1),
            (["kernel", "--n", "64", "--rank", "1", "--b", "1000"], 2),
            (["lattice", "--L", "3", "--n", "2048"], 1),
            (["kernel", "--n", "16384"], 3),
            (["kernel", "--n", "128", "--max-n", "64"], 3),
            (["particles", "--n", "64", "--particles", "/nonexistent/p.txt"], 1),
        ],
    )
    def test_exit_codes(self, tmp_path, args, code):
        assert self._run(tmp_path, *args) == code

    def test_bad_config_key(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("colour = red\n")
        assert self._run(tmp_path, "kernel", "--config", str(cfg)) == 1
