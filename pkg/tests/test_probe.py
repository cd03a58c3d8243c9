import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import central_diff, gamma_double_sum, rel_err, top_k_scan
from spectral_guard.adapters import SvfAdapter, svf_apply
from spectral_guard.linalg import ContractError, svd
from spectral_guard.probe import (
    build_critical_subspace,
    critical_indices,
    gamma_spectrum,
    index_set_overlap,
    median_epsilon,
    skill_relevant_set,
    svf_loss_gradient,
)


def test_critical_indices_examples():
    assert critical_indices(SvfAdapter(np.array([1.5, 1.1, 0.7])), 2) == (0, 2)
    assert critical_indices(SvfAdapter(np.ones(5)), 2) == (0, 1)
    z = 1.0 + np.random.default_rng(9).standard_normal(64)
    assert critical_indices(SvfAdapter(z), 8) == top_k_scan(z, 8)
    # full-sort oracle
    dev = np.abs(z - 1.0)
    assert critical_indices(SvfAdapter(z), 8) == tuple(sorted(sorted(range(64), key=lambda i: (-dev[i], i))[:8]))


@pytest.mark.parametrize("k", [0, 4, -1])
def test_critical_indices_range(k):
    with pytest.raises(ContractError):
        critical_indices(SvfAdapter(np.ones(3)), k)


@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 12))
def test_critical_indices_permutation_consistent(seed, k):
    rng = np.random.default_rng(seed)
    z = 1.0 + rng.standard_normal(12)
    perm = rng.permutation(12)
    picked = critical_indices(SvfAdapter(z), k)
    # z[perm] puts the old entry perm[j] at position j
    permuted = critical_indices(SvfAdapter(z[perm]), k)
    assert sorted(int(perm[j]) for j in permuted) == list(picked)


@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 16))
def test_critical_indices_match_scan(seed, k):
    # rounding makes ties common
    z = np.round(1.0 + np.random.default_rng(seed).standard_normal(16), 1)
    assert critical_indices(SvfAdapter(z), k) == top_k_scan(z, k)


def test_build_critical_subspace_examples():
    rng = np.random.default_rng(13)
    f = svd(rng.standard_normal((10, 6)))
    full = build_critical_subspace(f, SvfAdapter(1.0 + rng.standard_normal(6)), 6)
    np.testing.assert_array_equal(full.u_crit, f.u)
    z = np.ones(6)
    z[3] = 1.4
    one = build_critical_subspace(f, SvfAdapter(z), 1)
    assert one.indices == (3,)
    np.testing.assert_array_equal(one.u_crit[:, 0], f.u[:, 3])
    np.testing.assert_array_equal(one.v_crit[:, 0], f.vt[3])
    sub = build_critical_subspace(f, SvfAdapter(1.0 + rng.standard_normal(6)), 4)
    np.testing.assert_allclose(sub.u_crit.T @ sub.u_crit, np.eye(4), atol=1e-10)
    assert list(sub.indices) == sorted(sub.indices) and sub.k == 4


def test_gamma_examples():
    rng = np.random.default_rng(1)
    f = svd(rng.standard_normal((7, 5)))
    gamma = gamma_spectrum(np.outer(f.u[:, 2], f.vt[2]), f).gamma
    expected = np.zeros(5)
    expected[2] = 1.0
    np.testing.assert_allclose(gamma, expected, atol=1e-14)
    np.testing.assert_array_equal(gamma_spectrum(np.zeros((7, 5)), f).gamma, np.zeros(5))
    with pytest.raises(ContractError):
        gamma_spectrum(np.zeros((5, 7)), f)


def test_gamma_matches_double_sum():
    rng = np.random.default_rng(21)
    f = svd(rng.standard_normal((12, 9)))
    g, h = rng.standard_normal((12, 3)), rng.standard_normal((9, 3))
    np.testing.assert_allclose(gamma_spectrum(g @ h.T, f).gamma, gamma_double_sum(f.u, f.vt, g, h),
                               rtol=0, atol=1e-12)


@given(seed=st.integers(0, 2**32 - 1))
def test_gamma_bessel(seed):
    rng = np.random.default_rng(seed)
    f = svd(rng.standard_normal((6, 6)))
    grad = rng.standard_normal((6, 6))
    gamma = gamma_spectrum(grad, f).gamma
    assert np.sum(gamma**2) <= np.sum(grad**2) * (1 + 1e-12)
    # the reconstruction is the projection onto span{u_i v_i^T}
    recon = (f.u * gamma) @ f.vt
    np.testing.assert_allclose(np.sum(recon * (grad - recon)), 0.0, atol=1e-10)


def test_svf_gradient_examples():
    f = svd(np.diag([3.0, 2.0]))
    np.testing.assert_allclose(svf_loss_gradient(np.eye(2), f), [3.0, 2.0], atol=1e-15)
    np.testing.assert_array_equal(svf_loss_gradient(np.zeros((2, 2)), f), np.zeros(2))


def _quadratic_case(seed):
    rng = np.random.default_rng(seed)
    m, n = (int(v) for v in rng.integers(2, 9, size=2))
    f = svd(rng.standard_normal((m, n)))
    target = rng.standard_normal((m, n))
    z = 1.0 + 0.3 * rng.standard_normal(f.rank)

    def loss(zz):
        d = svf_apply(f, SvfAdapter(zz)) - target
        return 0.5 * float(np.sum(d * d))

    analytic = svf_loss_gradient(svf_apply(f, SvfAdapter(z)) - target, f)
    return analytic, central_diff(loss, z, h=1e-5)


@pytest.mark.parametrize("seed", range(10))
def test_svf_gradient_finite_differences(seed):
    analytic, numeric = _quadratic_case(seed)
    assert rel_err(analytic, numeric) <= 1e-6


def test_skill_relevant_set_examples():
    assert skill_relevant_set(SvfAdapter(np.ones(4)), 0.1).indices == frozenset()
    assert skill_relevant_set(SvfAdapter(np.array([1.5, 1.0, 0.9])), 0.05).indices == {0, 2}
    with pytest.raises(ContractError):
        skill_relevant_set(SvfAdapter(np.ones(2)), 0.0)
    z = np.array([1.0, 1.2, 0.7, 1.05])
    assert median_epsilon(SvfAdapter(z)) == pytest.approx(0.125)


@given(seed=st.integers(0, 2**32 - 1), e1=st.floats(1e-4, 1.0), e2=st.floats(1e-4, 1.0))
def test_skill_relevant_set_monotone_and_scan(seed, e1, e2):
    z = 1.0 + np.random.default_rng(seed).standard_normal(20)
    lo, hi = sorted((e1, e2))
    small, big = skill_relevant_set(SvfAdapter(z), hi), skill_relevant_set(SvfAdapter(z), lo)
    assert small.indices <= big.indices
    assert big.indices == {i for i in range(20) if abs(z[i] - 1.0) > lo}


def test_overlap_examples():
    ov = index_set_overlap({1, 2}, {1, 2})
    assert (ov.overlap, ov.jaccard) == (1.0, 1.0)
    ov = index_set_overlap({1, 2}, {3, 4})
    assert (ov.overlap, ov.jaccard) == (0.0, 0.0)
    ov = index_set_overlap({1, 2, 3}, {3, 4, 5})
    assert ov.overlap == pytest.approx(1 / 3) and ov.jaccard == pytest.approx(1 / 5)
    ov = index_set_overlap(set(), set())
    assert (ov.overlap, ov.jaccard) == (0.0, 0.0)


def test_overlap_pools_counts_over_layers():
    # layer 0: 1 shared of 2 vs 2; layer 1: 3 shared of 3 vs 3
    ov = index_set_overlap([{0, 1}, {4, 5, 6}], [{1, 2}, {4, 5, 6}])
    assert ov.overlap == pytest.approx(4 / 5)
    assert ov.jaccard == pytest.approx(4 / 6)
    assert ov.per_layer == ((0.5, 1 / 3), (1.0, 1.0))
    with pytest.raises(ContractError):
        index_set_overlap([{0}], [{0}, {1}])
