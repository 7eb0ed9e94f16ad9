"""Tensor construction, matmul (against a naive triple loop), and the RNG."""

import numpy as np
import pytest

from transitnet.errors import ParameterError, ShapeError
from transitnet.tensor import Rng, Shape4, derive_seed, make_tensor, matmul, sample_normal


def naive_matmul(a, b):
    m, k = a.shape
    k2, p = b.shape
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


class TestMakeTensor:
    def test_zero_fill(self):
        t = make_tensor(Shape4(1, 1, 2, 2), 0)
        assert t.shape == (1, 1, 2, 2)
        assert (t == 0).all()

    def test_channel_layout(self):
        t = make_tensor(Shape4(1, 2, 1, 1), [3, 4])
        assert t[0, 0, 0, 0] == 3 and t[0, 1, 0, 0] == 4

    def test_length_mismatch(self):
        with pytest.raises(ShapeError, match="expected 4 values, got 3"):
            make_tensor(Shape4(1, 1, 2, 2), [1, 2, 3])

    def test_round_trip_exact(self):
        values = Rng(5).normal(24)
        t = make_tensor(Shape4(2, 3, 2, 2), values)
        assert np.array_equal(t.reshape(-1), values)

    def test_rejects_zero_dim(self):
        with pytest.raises(ShapeError):
            make_tensor(Shape4(1, 0, 2, 2), 0)


class TestMatmul:
    def test_identity_both_sides_bitwise(self):
        a = Rng(1).normal(12).reshape(3, 4)
        assert np.array_equal(matmul(np.eye(3), a), a)
        assert np.array_equal(matmul(a, np.eye(4)), a)

    def test_hand_case(self):
        out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [6.0]]))
        assert np.array_equal(out, [[17.0], [39.0]])

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError, match="3 vs 4"):
            matmul(np.zeros((2, 3)), np.zeros((4, 2)))

    def test_against_naive_oracle(self):
        rng = Rng(404)
        for _ in range(100):
            m = 1 + rng.randbelow(16)
            k = 1 + rng.randbelow(16)
            p = 1 + rng.randbelow(16)
            a = rng.normal(m * k).reshape(m, k)
            b = rng.normal(k * p).reshape(k, p)
            expected = naive_matmul(a, b)
            got = matmul(a, b)
            scale = np.abs(expected).max() + 1e-30
            assert np.abs(got - expected).max() / scale < 1e-12


class TestRng:
    def test_same_seed_bit_identical(self):
        a = sample_normal(Rng(42), Shape4(2, 3, 4, 5))
        b = sample_normal(Rng(42), Shape4(2, 3, 4, 5))
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(Rng(1).uniform(64), Rng(2).uniform(64))

    def test_scalar_and_block_streams_agree(self):
        r1, r2 = Rng(9), Rng(9)
        scalars = np.array([r1.next_u32() for _ in range(257)], dtype=np.uint32)
        assert np.array_equal(scalars, r2.u32_block(257))

    def test_moments_converge(self):
        z = Rng(42).normal(10**6)
        assert abs(z.mean()) < 0.01
        assert abs(z.std() - 1.0) < 0.01

    def test_stdev_zero_degenerates_to_mean(self):
        t = sample_normal(Rng(3), Shape4(1, 2, 3, 4), mean=1.5, stdev=0.0)
        assert (t == 1.5).all()

    def test_negative_stdev_rejected(self):
        with pytest.raises(ParameterError):
            sample_normal(Rng(3), Shape4(1, 1, 1, 1), 0.0, -1.0)

    def test_uniform_range(self):
        u = Rng(8).uniform(10**5)
        assert u.min() >= 0.0 and u.max() < 1.0

    def test_permutation_is_permutation(self):
        p = Rng(11).permutation(500)
        assert sorted(p.tolist()) == list(range(500))

    def test_derive_seed_stable_and_distinct(self):
        assert derive_seed(7, 0) == derive_seed(7, 0)
        assert derive_seed(7, 0) != derive_seed(7, 1)
        assert derive_seed(8, 0) != derive_seed(7, 0)
