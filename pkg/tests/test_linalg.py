import numpy as np
import pytest

from ttgauss.linalg import SvdResult, matmul, svd, sym_eig, truncated_svd


def test_svd_identity():
    res = svd(np.eye(3))
    assert np.allclose(res.singular_values, [1.0, 1.0, 1.0])


def test_svd_diagonal():
    res = svd(np.diag([3.0, 2.0, 1.0]))
    assert np.allclose(res.singular_values, [3.0, 2.0, 1.0])
    # U and V are signed permutations of the identity
    assert np.allclose(np.abs(res.u), np.eye(3), atol=1e-14)
    assert np.allclose(np.abs(res.vt), np.eye(3), atol=1e-14)


def test_svd_matches_gram_eigenvalue_oracle():
    rng = np.random.default_rng(7)
    m = rng.uniform(-1.0, 1.0, (5, 3))
    oracle = np.sqrt(np.maximum(np.linalg.eigvalsh(m.T @ m), 0.0))[::-1]
    res = svd(m)
    assert np.abs(res.singular_values - oracle).max() < 1e-9


def test_svd_orthogonality_and_reconstruction():
    rng = np.random.default_rng(3)
    for shape in [(4, 4), (6, 3), (3, 6)]:
        m = rng.standard_normal(shape)
        res = svd(m)
        r = res.rank
        assert np.abs(res.u.T @ res.u - np.eye(r)).max() < 1e-10
        assert np.abs(res.vt @ res.vt.T - np.eye(r)).max() < 1e-10
        err = np.linalg.norm(res.reconstruct() - m)
        assert err <= 1e-10 * np.linalg.norm(m)


def test_svd_rejects_bad_input():
    with pytest.raises(ValueError):
        svd(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        svd(np.array([[1.0, np.nan]]))


def _discard_sets_oracle(sigmas, threshold):
    """Smallest kept-rank whose discarded suffix has l2 norm <= threshold."""
    best = len(sigmas)
    for keep in range(len(sigmas) + 1):
        tail = np.sqrt(np.sum(np.asarray(sigmas[keep:]) ** 2))
        if tail <= threshold:
            best = keep
            break
    return max(best, 1)


def test_truncated_svd_tie_prefers_smaller_rank():
    # discarding sigma_3 = 1 hits the threshold exactly -> discard
    res = truncated_svd(np.diag([3.0, 2.0, 1.0]), 1.0)
    assert res.rank == _discard_sets_oracle([3.0, 2.0, 1.0], 1.0) == 2
    assert not res.floored


def test_truncated_svd_zero_threshold_keeps_full_rank():
    rng = np.random.default_rng(0)
    m = rng.standard_normal((4, 5))
    assert truncated_svd(m, 0.0).rank == 4


def test_truncated_svd_greedy_tail_scan():
    # sqrt(2^2 + 1^2) ~ 2.236 <= 2.4, so only sigma_1 survives
    res = truncated_svd(np.diag([3.0, 2.0, 1.0]), 2.4)
    assert res.rank == _discard_sets_oracle([3.0, 2.0, 1.0], 2.4) == 1


def test_truncated_svd_tail_norm_bound():
    rng = np.random.default_rng(11)
    for _ in range(20):
        m = rng.standard_normal((6, 5))
        full = np.linalg.svd(m, compute_uv=False)
        threshold = rng.uniform(0.0, np.linalg.norm(full))
        res = truncated_svd(m, threshold)
        discarded = np.linalg.norm(full[res.rank:])
        assert res.floored or discarded <= threshold + 1e-12


def test_truncated_svd_rank_floor_is_flagged():
    res = truncated_svd(np.diag([1e-3, 1e-4]), 1.0)
    assert res.rank == 1 and res.floored


def test_sym_eig_diagonal():
    w, _ = sym_eig(np.diag([0.5, 2.0]))
    assert np.allclose(w, [2.0, 0.5])


def test_sym_eig_hand_checked_2x2():
    # characteristic polynomial (2 - t)^2 - 1 has roots 3 and 1
    w, v = sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(w, [3.0, 1.0], atol=1e-12)
    assert np.abs(v.T @ v - np.eye(2)).max() < 1e-12


def test_sym_eig_identity():
    w, _ = sym_eig(np.eye(6))
    assert np.allclose(w, np.ones(6))


def test_sym_eig_residual_and_asymmetry_error():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((6, 6))
    m = a + a.T
    w, v = sym_eig(m)
    resid = np.abs(m @ v - v * w).max()
    assert resid <= 1e-9 * np.abs(m).max()
    with pytest.raises(ValueError):
        sym_eig(a)


def test_matmul_identity_and_small_case():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), m), m)
    out = matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
    assert out.shape == (1, 1) and out[0, 0] == 11.0


def test_matmul_matches_triple_loop_oracle():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((4, 4))
    b = rng.standard_normal((4, 4))
    oracle = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            for k in range(4):
                oracle[i, j] += a[i, k] * b[k, j]
    assert np.abs(matmul(a, b) - oracle).max() < 1e-12


def test_matmul_associativity_and_shape_error():
    rng = np.random.default_rng(13)
    a, b, c = (rng.standard_normal((3, 3)) for _ in range(3))
    lhs = matmul(matmul(a, b), c)
    rhs = matmul(a, matmul(b, c))
    assert np.abs(lhs - rhs).max() < 1e-12
    with pytest.raises(ValueError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_svd_result_is_plain_data():
    res = SvdResult(np.eye(2), np.ones(2), np.eye(2))
    assert res.rank == 2 and not res.floored
