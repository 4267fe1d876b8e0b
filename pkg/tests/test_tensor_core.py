import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rstensor import (
    CanonicalTensor,
    SizeGuardError,
    TuckerTensor,
    add_and_compress,
    canonical_inner,
    canonical_sum,
    canonical_to_tucker,
    full_assemble,
    rhosvd,
    tucker_to_canonical,
)
from rstensor.tensor_core import side_spectra


def _dense(a):
    out = np.zeros(a.shape)
    for k in range(a.rank):
        term = a.weights[k]
        for f in a.factors:
            term = np.multiply.outer(term, f[:, k])
        out += term
    return out


shapes = st.lists(st.integers(1, 6), min_size=1, max_size=4)


class TestCanonical:
    @settings(max_examples=40, deadline=None)
    @given(shape=shapes, r1=st.integers(0, 4), r2=st.integers(0, 4), seed=st.integers(0, 2**16))
    def test_sum_and_inner_match_dense(self, shape, r1, r2, seed):
        a = CanonicalTensor.random(shape, r1, rng=seed)
        b = CanonicalTensor.random(shape, r2, rng=seed + 1)
        s = canonical_sum([a, b], coefs=[2.0, -0.5])
        assert s.rank == r1 + r2
        np.testing.assert_allclose(s.full(), 2 * _dense(a) - 0.5 * _dense(b), atol=1e-12)
        assert canonical_inner(a, b) == pytest.approx(np.sum(_dense(a) * _dense(b)), abs=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(shape=shapes, r=st.integers(1, 5), seed=st.integers(0, 2**16))
    def test_point_reads(self, shape, r, seed):
        a = CanonicalTensor.random(shape, r, rng=seed)
        full = _dense(a)
        idx = np.array(np.unravel_index(np.arange(full.size), full.shape)).T
        np.testing.assert_allclose(a.at(idx), full.ravel(), atol=1e-12)

    def test_normalized_preserves_tensor(self):
        a = CanonicalTensor.random((4, 5, 6), 3, rng=0)
        b = a.normalized()
        np.testing.assert_allclose(b.full(), a.full(), atol=1e-12)
        for f in b.factors:
            np.testing.assert_allclose(np.linalg.norm(f, axis=0), 1.0)

    def test_fix_mode(self):
        a = CanonicalTensor.random((4, 5, 6), 3, rng=0)
        np.testing.assert_allclose(a.fix_mode(1, 2).full(), a.full()[:, 2, :], atol=1e-13)

    def test_validation(self):
        with pytest.raises(ValueError):
            CanonicalTensor(np.ones(2), (np.ones((3, 2)), np.ones((3, 1))))
        with pytest.raises(ValueError):
            CanonicalTensor(np.array([np.nan]), (np.ones((3, 1)),))

    def test_size_guard(self):
        a = CanonicalTensor.random((300, 300, 300), 1, rng=0)
        with pytest.raises(SizeGuardError):
            full_assemble(a)
        with pytest.raises(IndexError):
            a.at([[300, 0, 0]])


class TestTucker:
    def test_rhosvd_orthonormal_and_exact(self):
        a = CanonicalTensor.random((12, 14, 16), 5, rng=3)
        t = rhosvd(a, eps=1e-14)
        assert t.ranks == (5, 5, 5)
        assert t.orthonormality_defect() < 1e-13
        np.testing.assert_allclose(t.full(), a.full(), atol=1e-11)

    def test_fixed_ranks(self):
        a = CanonicalTensor.random((8, 8, 8), 4, rng=1)
        t = rhosvd(a, ranks=(2, 3, 4))
        assert t.ranks == (2, 3, 4)
        with pytest.raises(ValueError):
            rhosvd(a, ranks=(9, 1, 1))

    def test_side_spectra_bound_truncation(self):
        # dropping singular values below eps*s0 costs at most ~eps per mode
        rng = np.random.default_rng(5)
        x = np.linspace(0, 1, 32)
        t_vals = np.geomspace(0.1, 10, 20)
        F = np.exp(-np.outer(x, t_vals))
        a = CanonicalTensor(rng.uniform(0.5, 1, 20), (F, F, F))
        for eps in (1e-3, 1e-6):
            t = rhosvd(a, eps=eps)
            err = np.linalg.norm(t.full() - a.full()) / np.linalg.norm(a.full())
            assert err <= 3 * np.sqrt(20) * eps
            assert max(t.ranks) < 20

    def test_round_trip_random(self):
        a = CanonicalTensor.random((32, 32, 32), 10, rng=7)
        for eps in (1e-4, 1e-8):
            b = tucker_to_canonical(canonical_to_tucker(a, eps), eps)
            err = np.linalg.norm(b.full() - a.full()) / np.linalg.norm(a.full())
            assert err <= 10 * eps

    def test_round_trip_rank_five_tight(self):
        a = CanonicalTensor.random((16, 16, 16), 5, rng=11)
        b = tucker_to_canonical(rhosvd(a, eps=1e-10), 1e-10)
        assert np.linalg.norm(b.full() - a.full()) <= 1e-9 * np.linalg.norm(a.full())

    def test_rank_one_core(self):
        t = TuckerTensor(np.full((1, 1, 1), 2.5), tuple(np.eye(4)[:, :1] for _ in range(3)))
        c = tucker_to_canonical(t)
        assert c.rank == 1
        np.testing.assert_allclose(c.full(), t.full())

    def test_core_rank_bound(self):
        rng = np.random.default_rng(2)
        core = rng.standard_normal((4, 5, 3))
        Q = [np.linalg.qr(rng.standard_normal((10, r)))[0] for r in core.shape]
        c = tucker_to_canonical(TuckerTensor(core, tuple(Q)))
        assert c.rank <= 4 * 5
        np.testing.assert_allclose(c.full(), TuckerTensor(core, tuple(Q)).full(), atol=1e-12)

    def test_zero_tensor(self):
        z = CanonicalTensor.zeros((3, 4, 5))
        t = rhosvd(z, eps=1e-8)
        assert tucker_to_canonical(t).rank == 0


class TestCompression:
    def test_add_and_compress_removes_redundancy(self):
        a = CanonicalTensor.random((20, 20, 20), 4, rng=0)
        c = add_and_compress([a, a, a.scaled(-0.5)], eps=1e-10)
        assert c.rank <= 16
        np.testing.assert_allclose(c.full(), 1.5 * a.full(), atol=1e-8 * np.abs(a.full()).max())

    def test_gaussian_sum_spectrum_decays(self):
        # sum of 50 narrow-to-wide Gaussians centred at random points
        x = np.linspace(-10, 10, 64)
        rng = np.random.default_rng(0)
        centres = rng.uniform(-5, 5, size=(50, 3))
        terms = []
        for c in centres:
            for t in (0.2, 0.5, 1.0):
                terms.append(
                    CanonicalTensor.rank_one([np.exp(-((t * (x - c[m])) ** 2)) for m in range(3)])
                )
        s = canonical_sum(terms)
        (U, sv), *_ = side_spectra(s)
        assert np.count_nonzero(sv >= 1e-4 * sv[0]) <= 40
