import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import jacobi_svd
from spectral_guard.linalg import (
    ContractError,
    check_orthonormal_columns,
    frobenius_inner,
    frobenius_norm,
    haar_orthogonal,
    project_onto_columns,
    spectral_norm,
    svd,
)


def test_identity_factors_are_identity():
    f = svd(np.eye(3))
    np.testing.assert_array_equal(f.sigma, np.ones(3))
    np.testing.assert_allclose(f.u, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(f.vt, np.eye(3), atol=1e-15)


def test_diagonal_singular_values():
    np.testing.assert_allclose(svd(np.diag([3.0, 2.0, 1.0])).sigma, [3.0, 2.0, 1.0], rtol=0, atol=1e-15)


def test_seed42_matches_jacobi_oracle():
    w = np.random.default_rng(42).standard_normal((8, 5))
    f = svd(w)
    _, s_ref, _ = jacobi_svd(w)
    assert np.linalg.norm(f.reconstruct() - w) / np.linalg.norm(w) <= 1e-12
    np.testing.assert_allclose(f.sigma, s_ref, rtol=1e-12)
    # projector onto each singular dyad agrees with the oracle, whatever the signs
    u_ref, _, vt_ref = jacobi_svd(w)
    for i in range(5):
        np.testing.assert_allclose(np.outer(f.u[:, i], f.vt[i]), np.outer(u_ref[:, i], vt_ref[i]), atol=1e-11)


def test_wide_matrix_matches_oracle():
    w = np.random.default_rng(8).standard_normal((4, 9))
    f = svd(w)
    assert f.u.shape == (4, 4) and f.vt.shape == (4, 9)
    np.testing.assert_allclose(f.sigma, jacobi_svd(w)[1], rtol=1e-12)


def test_sign_convention_largest_entry_nonnegative():
    w = np.random.default_rng(3).standard_normal((7, 6))
    f = svd(w)
    for i in range(f.rank):
        col = f.u[:, i]
        assert col[np.argmax(np.abs(col))] > 0
    # flipping the input sign flips v, not u
    g = svd(-w)
    np.testing.assert_allclose(g.u, f.u, atol=1e-12)
    np.testing.assert_allclose(g.vt, -f.vt, atol=1e-12)


def test_svd_is_bytewise_deterministic():
    w = np.random.default_rng(17).standard_normal((12, 9))
    a, b = svd(w), svd(w.copy())
    assert a.u.tobytes() == b.u.tobytes()
    assert a.sigma.tobytes() == b.sigma.tobytes()
    assert a.vt.tobytes() == b.vt.tobytes()


@pytest.mark.parametrize("bad", [np.array([[1.0, np.nan]]), np.array([[np.inf]]), np.zeros(3), np.zeros((0, 2))])
def test_svd_rejects_bad_input(bad):
    with pytest.raises(ContractError):
        svd(bad)


def test_frobenius_examples():
    assert frobenius_inner(np.eye(2), np.eye(2)) == 2.0
    a = np.random.default_rng(7).standard_normal((4, 3))
    assert frobenius_inner(a, np.zeros((4, 3))) == 0.0
    assert frobenius_inner(a, a) == pytest.approx(sum(x * x for x in a.ravel()), rel=1e-14)
    assert frobenius_norm(a) ** 2 == pytest.approx(frobenius_inner(a, a), rel=1e-14)
    with pytest.raises(ContractError):
        frobenius_inner(a, a.T)


def test_projection_examples():
    np.testing.assert_allclose(project_onto_columns(np.array([3.0, 4.0]), np.array([[1.0], [0.0]])), [3.0, 0.0])
    x = np.random.default_rng(0).standard_normal((4, 2))
    np.testing.assert_allclose(project_onto_columns(x, haar_orthogonal(4, np.random.default_rng(1))), x, atol=1e-12)
    with pytest.raises(ContractError):
        project_onto_columns(np.ones(2), np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_projection_matches_gram_schmidt_oracle():
    rng = np.random.default_rng(5)
    raw = rng.standard_normal((5, 2))
    # classical Gram-Schmidt, independent of numpy's QR
    q1 = raw[:, 0] / np.linalg.norm(raw[:, 0])
    w = raw[:, 1] - (q1 @ raw[:, 1]) * q1
    q2 = w / np.linalg.norm(w)
    x = rng.standard_normal(5)
    expected = (q1 @ x) * q1 + (q2 @ x) * q2
    got = project_onto_columns(x, np.column_stack([q1, q2]))
    np.testing.assert_allclose(got, expected, atol=1e-12)
    assert np.linalg.norm(got) <= np.linalg.norm(x)


def test_spectral_norm_examples():
    assert spectral_norm(np.eye(4)) == pytest.approx(1.0, abs=1e-15)
    assert spectral_norm(np.diag([5.0, 1.0])) == pytest.approx(5.0, abs=1e-15)
    a = np.random.default_rng(3).standard_normal((6, 6))
    assert spectral_norm(a) <= frobenius_norm(a)


def test_check_orthonormal_reports_error():
    with pytest.raises(ContractError, match="not orthonormal"):
        check_orthonormal_columns(2.0 * np.eye(3))


def test_roundtrip_corpus():
    worst_rec = worst_orth = 0.0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        m, n = (int(v) for v in rng.integers(1, 65, size=2))
        w = rng.standard_normal((m, n))
        f = svd(w)
        worst_rec = max(worst_rec, np.linalg.norm(f.reconstruct() - w) / np.linalg.norm(w))
        worst_orth = max(worst_orth,
                         np.max(np.abs(f.u.T @ f.u - np.eye(f.rank))),
                         np.max(np.abs(f.vt @ f.vt.T - np.eye(f.rank))))
        assert np.all(np.diff(f.sigma) <= 0) and np.all(f.sigma >= 0)
    assert worst_rec <= 1e-10
    assert worst_orth <= 1e-10


@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 12), n=st.integers(1, 12),
       scale=st.floats(1e-6, 1.0))
def test_weyl_inequality(seed, m, n, scale):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((m, n))
    e = scale * rng.standard_normal((m, n))
    shift = np.abs(svd(w + e).sigma - svd(w).sigma)
    assert np.all(shift <= spectral_norm(e) * (1 + 1e-12) + 1e-13)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 10))
def test_haar_orthogonal_is_orthogonal(seed, n):
    q = haar_orthogonal(n, np.random.default_rng(seed))
    np.testing.assert_allclose(q.T @ q, np.eye(n), atol=1e-12)
