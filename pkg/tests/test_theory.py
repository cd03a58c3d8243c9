import dataclasses

import numpy as np
import pytest

from oracles import spearman
from spectral_guard.linalg import ContractError
from spectral_guard.theory import (
    check_instance,
    decayed_spectrum,
    generate_instance,
    multiskill_union,
    perturbation_check,
    skills_sharing_base,
    svf_probe_faithfulness,
    topk_protection_cost,
    verify_theorem,
)

CANON = dict(m=64, n=64, s=2, k=8, delta=1e-4, decay_alpha=1.0, eps_noise=0.0)


def canonical(seed=0, **changes):
    return generate_instance(**{**CANON, **changes, "seed": seed})


def _with_gradient(inst, g, h):
    return dataclasses.replace(inst, g=np.atleast_2d(g.T).T, h=np.atleast_2d(h.T).T)


def test_delta_zero_is_exactly_orthogonal():
    inst = canonical(delta=0.0)
    leak = (inst.v_task.T @ inst.w0.vt[:8].T) ** 2
    assert leak.max() <= 1e-28


def test_full_complement_when_s_is_n_minus_k():
    inst = generate_instance(12, 12, 8, 4, 0.0, 1.0, 0.0, 3)
    p_t = inst.v_task @ inst.v_task.T
    v_low = inst.w0.vt[4:].T
    np.testing.assert_allclose(p_t, v_low @ v_low.T, atol=1e-12)


def test_canonical_invariants_recomputed_from_raw_factors():
    inst = canonical(0)
    report = check_instance(inst, 0.0)
    assert all(report[key] for key in ("v_task_orthonormal", "h_in_task_span", "misalignment",
                                       "spectrum_decay", "noise_bound"))
    # an independent projector-norm computation of the leakage
    p_t = inst.v_task @ np.linalg.inv(inst.v_task.T @ inst.v_task) @ inst.v_task.T
    leak = max(float(np.linalg.norm(p_t @ inst.w0.vt[i]) ** 2) for i in range(8))
    assert leak <= 1e-4 + 1e-12
    assert leak == pytest.approx(inst.delta, rel=1e-8)


def test_generator_with_noise_respects_bound():
    inst = canonical(4, eps_noise=0.05)
    assert np.linalg.norm(inst.noise) <= 0.05 * (1 + 1e-12)
    assert check_instance(inst, 0.05)["noise_bound"]


@pytest.mark.parametrize("kwargs", [dict(s=60), dict(k=64), dict(eps_noise=-1.0)])
def test_generator_preconditions(kwargs):
    with pytest.raises(ContractError):
        canonical(0, **kwargs)


def test_spectrum_decay_and_gap():
    sigma = decayed_spectrum(64, 1.0)
    np.testing.assert_allclose(sigma[:3], [1.0, 2 ** -0.5, 3 ** -0.5])
    assert np.all(sigma[1:] <= sigma[:-1] * (1 - 1e-3) + 1e-15)


def test_delta_zero_gives_no_topk_member():
    v = verify_theorem(canonical(5, delta=0.0), 1e-2)
    assert np.max(np.abs(v.gamma[:8])) <= 1e-14
    assert not (v.s_set.indices & set(range(8)))
    assert not v.contained_in_topk
    assert v.s_set.indices


def test_zero_gradient_is_degenerate():
    inst = canonical(1)
    inst = dataclasses.replace(inst, g=np.zeros_like(inst.g))
    v = verify_theorem(inst, 1e-2)
    assert v.degenerate and not v.s_set.indices


def test_verdict_bounds_and_rows():
    v = verify_theorem(canonical(2), 1e-2)
    assert v.small_bound_holds
    assert v.gamma_max_topk <= v.bound_small
    assert v.i_star >= 8 and np.isfinite(v.c1_empirical)
    rows = v.rows()
    assert len(rows) == 64 and rows[0]["in_top_k"] and not rows[8]["in_top_k"]
    np.testing.assert_allclose(v.z_dev, -1e-2 * v.gamma * canonical(2).w0.sigma)


def test_perturbation_eta_zero():
    rep = perturbation_check(canonical(0), 0.0)
    np.testing.assert_array_equal(rep.delta_sigma, np.zeros(64))


def test_perturbation_rank_one_shift():
    inst = canonical(0)
    c, eta = 0.7, 1e-3
    inst = _with_gradient(inst, c * inst.w0.u[:, 0], inst.w0.vt[0])
    rep = perturbation_check(inst, eta)
    assert rep.delta_sigma[0] == pytest.approx(-eta * c, abs=1e-12)
    assert np.max(np.abs(rep.delta_sigma[1:])) <= 1e-12


def test_signed_law_residual_is_second_order():
    inst = canonical(0)
    a, b = perturbation_check(inst, 1e-3), perturbation_check(inst, 5e-4)
    assert a.max_first_order <= 10 * 1e-3 ** 2
    assert 2.0 <= a.max_first_order / b.max_first_order <= 8.0


def test_protection_cost_examples():
    inst = canonical(0)
    head = topk_protection_cost(_with_gradient(inst, inst.w0.u[:, 1], inst.w0.vt[1]))
    assert head.forfeited == pytest.approx(0.0, abs=1e-28)
    j = 8 + 3
    tail_inst = _with_gradient(inst, inst.w0.u[:, j], inst.w0.vt[j])
    tail = topk_protection_cost(tail_inst)
    assert tail.forfeited == pytest.approx(inst.w0.sigma[j] ** 2, rel=1e-10)
    # c_T divides by sqrt(s) with s = 2 even though only one factor is nonzero
    assert tail.floor == pytest.approx(0.5 / 56)


def test_multiskill_union_examples():
    base = canonical(0)
    assert multiskill_union([], 1e-2).union == frozenset()
    one = multiskill_union([base], 1e-2)
    assert one.union == verify_theorem(base, 1e-2).s_set.indices
    five = multiskill_union(skills_sharing_base(base, 5, 0), 1e-2)
    assert not five.topk_contains_union and five.min_prefix > 8
    assert sum(five.coverage) == len(five.union)
    with pytest.raises(ContractError):
        multiskill_union([base, canonical(1)], 1e-2)


def test_multiskill_union_over_batches():
    misses = 0
    for seed in range(20):
        base = canonical(seed)
        misses += multiskill_union(skills_sharing_base(base, 5, seed), 1e-2).topk_contains_union
    assert misses <= 1


def test_faithfulness_examples():
    rep = svf_probe_faithfulness(canonical(0), 1e-2, steps=200, lr=1e-2)
    finite = rep.one_step_ratio[np.isfinite(rep.one_step_ratio)]
    np.testing.assert_allclose(finite, 1e-2, rtol=1e-12)
    assert rep.spearman >= 0.9
    assert rep.spearman == pytest.approx(spearman(np.abs(rep.z_final - 1.0), rep.importance), abs=1e-12)
    assert rep.losses[-1] < rep.losses[0]


def test_faithfulness_equal_gammas_follow_sigma():
    inst = canonical(0)
    # G = U diag(1) V^T restricted to the thin factors gives gamma_i = 1 for all i
    inst = _with_gradient(inst, inst.w0.u, inst.w0.vt.T)
    rep = svf_probe_faithfulness(inst, 1e-2, steps=1, lr=1e-2)
    order_z = np.argsort(-np.abs(rep.z_final - 1.0), kind="stable")
    assert list(order_z) == list(range(64))
