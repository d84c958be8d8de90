import io

import numpy as np
import pytest

from ttgauss.tt import TtTensor, matricization_rank, random_tt, tt_svd


def sum_of_coordinates_tensor(points):
    x = np.asarray(points, dtype=float)
    return x[:, None, None] + x[None, :, None] + x[None, None, :]


def test_eval_entry_rank_one_scalar_product():
    cores = [np.full((1, 1, 1), 2.0), np.full((1, 1, 1), 3.0), np.full((1, 1, 1), 5.0)]
    assert TtTensor(cores).eval_entry([0, 0, 0]) == 30.0


def test_eval_entry_matches_dense_everywhere():
    rng = np.random.default_rng(1)
    full = rng.standard_normal((3, 3, 3))
    t = tt_svd(full)
    for idx in np.ndindex(3, 3, 3):
        assert abs(t.eval_entry(idx) - full[idx]) <= 1e-12 * np.abs(full).max()


def test_eval_entry_zero_cores_and_range_check():
    cores = [np.zeros((1, 2, 2)), np.zeros((2, 2, 1))]
    t = TtTensor(cores)
    assert t.eval_entry([1, 0]) == 0.0
    with pytest.raises(IndexError):
        t.eval_entry([2, 0])


def test_eval_entries_matches_scalar_version():
    rng = np.random.default_rng(2)
    t = random_tt((4, 3, 5), (2, 3), rng)
    idx = np.column_stack([rng.integers(0, n, 40) for n in (4, 3, 5)])
    batch = t.eval_entries(idx)
    single = np.array([t.eval_entry(row) for row in idx])
    assert np.abs(batch - single).max() < 1e-12


def test_tt_svd_sum_of_coordinates_has_rank_two():
    full = sum_of_coordinates_tensor(np.linspace(0.0, 1.0, 4))
    t = tt_svd(full)
    oracle = tuple(matricization_rank(full, k) for k in (1, 2))
    assert oracle == (2, 2)
    assert t.ranks == (1, 2, 2, 1)


def test_tt_svd_outer_product_is_rank_one():
    u, v, w = np.arange(1.0, 4.0), np.arange(1.0, 5.0), np.arange(1.0, 3.0)
    full = np.einsum("i,j,k->ijk", u, v, w)
    assert tt_svd(full).ranks == (1, 1, 1, 1)


def test_tt_svd_exact_reconstruction():
    rng = np.random.default_rng(3)
    full = rng.standard_normal((3, 3, 3))
    t = tt_svd(full, 0.0)
    err = np.linalg.norm(t.dense() - full) / np.linalg.norm(full)
    assert err <= 1e-10


def test_tt_svd_threshold_error_bound():
    rng = np.random.default_rng(4)
    full = rng.standard_normal((4, 5, 4, 3))
    delta = 0.3
    t = tt_svd(full, delta)
    err = np.linalg.norm(t.dense() - full)
    assert err <= np.sqrt(full.ndim - 1) * delta + 1e-12


def test_tt_svd_ranks_equal_matricization_ranks():
    rng = np.random.default_rng(5)
    tensors = [
        rng.standard_normal((3, 4, 3)),
        sum_of_coordinates_tensor(np.linspace(-1, 1, 5)),
        np.einsum("i,j,k->ijk", *(rng.standard_normal(4) for _ in range(3))),
    ]
    for full in tensors:
        t = tt_svd(full, 0.0)
        for k in range(1, full.ndim):
            assert t.ranks[k] == matricization_rank(full, k, 1e-10)


def test_tt_svd_dense_cap_directs_to_cross():
    with pytest.raises(ValueError, match="cross"):
        tt_svd(np.zeros((10, 10, 10)), dense_cap=100)


def test_round_keeps_rank_one():
    rng = np.random.default_rng(6)
    t = random_tt((3, 4, 5), (1, 1), rng)
    assert t.round(0.5).ranks == (1, 1, 1, 1)


def test_round_strips_artificial_rank_inflation():
    rng = np.random.default_rng(7)
    base = tt_svd(sum_of_coordinates_tensor(np.linspace(0, 1, 4)))
    inflated = base + (-1.0) * base + base  # ranks triple, value unchanged
    assert inflated.ranks == (1, 6, 6, 1)
    rounded = inflated.round(1e-12)
    assert rounded.ranks == (1, 2, 2, 1)
    assert np.linalg.norm(rounded.dense() - base.dense()) <= 1e-10


def test_round_error_within_requested_accuracy():
    rng = np.random.default_rng(8)
    for eps in (1e-2, 1e-4):
        t = random_tt((4, 4, 4, 4), (3, 3, 3), rng)
        dense = t.dense()
        rounded = t.round(eps)
        err = np.linalg.norm(rounded.dense() - dense) / np.linalg.norm(dense)
        assert err <= eps
        assert all(r2 <= r1 for r1, r2 in zip(t.ranks, rounded.ranks))


def test_round_idempotent_at_same_accuracy():
    rng = np.random.default_rng(9)
    t = (random_tt((4, 4, 4), (2, 2), rng) + random_tt((4, 4, 4), (2, 2), rng))
    once = t.round(1e-3)
    twice = once.round(1e-3)
    assert once.ranks == twice.ranks


def test_hadamard_with_ones_is_identity():
    rng = np.random.default_rng(10)
    t = random_tt((3, 4, 2), (2, 2), rng)
    ones = TtTensor([np.ones((1, n, 1)) for n in (3, 4, 2)])
    assert np.abs(t.hadamard(ones).dense() - t.dense()).max() < 1e-12


def test_hadamard_rank_one_factors():
    u1, v1 = np.arange(1.0, 4.0), np.arange(2.0, 5.0)
    u2, v2 = np.arange(3.0, 6.0), np.arange(1.0, 4.0)
    a = TtTensor([u1.reshape(1, 3, 1), v1.reshape(1, 3, 1)])
    b = TtTensor([u2.reshape(1, 3, 1), v2.reshape(1, 3, 1)])
    h = a.hadamard(b)
    assert h.ranks == (1, 1, 1)
    assert np.allclose(h.dense(), np.outer(u1 * u2, v1 * v2))


def test_hadamard_matches_dense_oracle_and_rank_product():
    rng = np.random.default_rng(11)
    a = random_tt((3, 3, 3), (2, 2), rng)
    b = random_tt((3, 3, 3), (3, 2), rng)
    h = a.hadamard(b)
    assert np.abs(h.dense() - a.dense() * b.dense()).max() < 1e-12
    assert h.ranks == tuple(x * y for x, y in zip(a.ranks, b.ranks))
    with pytest.raises(ValueError):
        a.hadamard(random_tt((3, 3, 4), (2, 2), rng))


def test_frobenius_norm_cases():
    ones = TtTensor([np.ones((1, 2, 1))] * 3)
    assert abs(ones.frobenius_norm() - np.sqrt(8.0)) < 1e-12
    u, v = np.arange(1.0, 5.0), np.arange(2.0, 8.0)
    rank1 = TtTensor([u.reshape(1, 4, 1), v.reshape(1, 6, 1)])
    assert abs(rank1.frobenius_norm() - np.linalg.norm(u) * np.linalg.norm(v)) < 1e-12
    rng = np.random.default_rng(12)
    t = random_tt((4, 3, 4), (3, 2), rng)
    dense = np.linalg.norm(t.dense())
    assert abs(t.frobenius_norm() - dense) <= 1e-10 * dense


def test_frobenius_norm_of_squared_tensor():
    rng = np.random.default_rng(13)
    t = random_tt((3, 4, 3), (2, 2), rng)
    dense = t.dense()
    expected = np.sqrt(np.sum(dense**4))
    got = t.hadamard(t).frobenius_norm()
    assert abs(got - expected) <= 1e-9 * expected


def test_matricization_rank_cases():
    rng = np.random.default_rng(14)
    outer = np.einsum("i,j,k->ijk", *(rng.standard_normal(3) for _ in range(3)))
    assert matricization_rank(outer, 1) == matricization_rank(outer, 2) == 1
    summed = sum_of_coordinates_tensor(np.linspace(0, 1, 4))
    assert matricization_rank(summed, 1) == 2
    # random tensors have full rank almost surely
    assert matricization_rank(rng.standard_normal((3, 3, 3)), 1) == 3


def test_max_rank():
    rng = np.random.default_rng(15)
    assert random_tt((3, 3, 3), (1, 1), rng).max_rank() == 1
    t = random_tt((4, 4, 4, 4, 4), (2, 4, 3, 2), rng)
    assert t.max_rank() == max(t.ranks[1:-1])
    base = tt_svd(sum_of_coordinates_tensor(np.linspace(0, 1, 4)))
    assert (base + base).round(1e-12).max_rank() == base.max_rank()


def test_serialization_roundtrip():
    rng = np.random.default_rng(16)
    t = random_tt((3, 5, 2, 4), (2, 3, 2), rng)
    buf = io.BytesIO()
    t.save(buf)
    buf.seek(0)
    loaded = TtTensor.load(buf)
    assert loaded.mode_sizes == t.mode_sizes
    assert loaded.ranks == t.ranks
    assert all(np.array_equal(a, b) for a, b in zip(loaded.cores, t.cores))


def test_serialization_file_roundtrip(tmp_path):
    rng = np.random.default_rng(17)
    t = random_tt((4, 4), (3,), rng)
    path = tmp_path / "tensor.tt"
    t.save(path)
    loaded = TtTensor.load(path)
    assert np.allclose(loaded.dense(), t.dense())
    with pytest.raises(ValueError, match="magic"):
        TtTensor.load(io.BytesIO(b"NOPE" + b"\x00" * 32))


def test_constructor_validates_chain():
    with pytest.raises(ValueError):
        TtTensor([np.zeros((1, 2, 3)), np.zeros((2, 2, 1))])
    with pytest.raises(ValueError):
        TtTensor([np.zeros((2, 2, 1))])
    with pytest.raises(ValueError):
        TtTensor([np.full((1, 2, 1), np.nan)])


def test_property_eval_matches_dense_on_random_instances():
    rng = np.random.default_rng(18)
    for _ in range(20):
        d = int(rng.integers(2, 5))
        modes = tuple(int(rng.integers(2, 5)) for _ in range(d))
        full = rng.standard_normal(modes)
        t = tt_svd(full, 0.0)
        idx = np.column_stack([rng.integers(0, n, 25) for n in modes])
        vals = t.eval_entries(idx)
        expect = full[tuple(idx.T)]
        assert np.abs(vals - expect).max() <= 1e-10 * np.abs(full).max()


def test_property_round_error_bound_on_random_instances():
    rng = np.random.default_rng(19)
    for _ in range(10):
        t = random_tt((3, 4, 3, 4), tuple(rng.integers(2, 5, 3)), rng)
        eps = float(10.0 ** rng.uniform(-6, -1))
        dense = t.dense()
        err = np.linalg.norm(t.round(eps).dense() - dense)
        assert err <= eps * np.linalg.norm(dense) + 1e-14
