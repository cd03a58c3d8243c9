"""Synthetic instances of the misaligned-skill regime and numerical checks on them.

An instance is a pre-trained matrix ``W0`` with a polynomially decaying
spectrum and Haar singular directions, a task subspace ``V_T`` that leaks at
most ``delta`` (in squared projection norm) into the top-``k`` right singular
vectors, and a low-rank task gradient ``G_T = sum_j g_j h_j^T`` whose row space
lies inside ``V_T``.

Scale: ``sigma_1 = 1`` and every factor ``g_j``, ``h_j`` has unit norm, so the
Cauchy-Schwarz constant bounding ``|gamma_i| / sqrt(delta)`` on the top-``k``
block is ``C1 = s``. The verdict threshold ``eps = C * eta_z * sigma_max * sqrt(delta)``
is not invariant to the scale of ``G_T``; ``verify_theorem`` reports ``C1`` so the
choice of ``C`` can be read against it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .adapters import SvfAdapter
from .linalg import ContractError, SvdFactors, haar_orthogonal, svd
from .probe import SkillRelevantSet, gamma_spectrum, skill_relevant_set
from .seeding import rng_for

MIN_RELATIVE_GAP = 1e-3
# floor on the threshold so that roundoff-level gammas never count as skill-relevant
ROUNDOFF_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class AssumptionInstance:
    w0: SvdFactors
    v_task: np.ndarray  # n x s
    g: np.ndarray  # m x s, columns g_j
    h: np.ndarray  # n x s, columns h_j
    noise: np.ndarray  # m x n
    k: int
    delta: float  # achieved max_{i<k} ||P_T v_i||^2
    decay_alpha: float
    delta_target: float
    seed: int
    right_basis: np.ndarray = field(repr=False, default=None)  # n x n, first r columns = w0 right vectors

    @property
    def m(self) -> int:
        return self.w0.shape[0]

    @property
    def n(self) -> int:
        return self.w0.shape[1]

    @property
    def s(self) -> int:
        return self.v_task.shape[1]

    def grad_task(self) -> np.ndarray:
        return self.g @ self.h.T

    def grad_total(self) -> np.ndarray:
        return self.grad_task() + self.noise

    def c_t(self) -> float:
        return float(np.linalg.norm(self.grad_task(), "fro") / np.sqrt(self.s))


def decayed_spectrum(r: int, decay_alpha: float) -> np.ndarray:
    """``sigma_i = i^(-alpha/2)`` (so ``sigma_i^2`` decays like ``i^-alpha``), gap-enforced."""
    sigma = np.arange(1, r + 1, dtype=np.float64) ** (-decay_alpha / 2.0)
    for i in range(1, r):
        sigma[i] = min(sigma[i], sigma[i - 1] * (1.0 - MIN_RELATIVE_GAP))
    return sigma


def misaligned_basis(v_full: np.ndarray, k: int, s: int, delta: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Orthonormal ``n x s`` basis whose squared projection onto each of the first ``k``
    columns of ``v_full`` is at most ``delta``.

    Each column is ``sqrt(1 - delta) a_j + sqrt(delta) b_j`` with ``a_j`` drawn in the
    span of the trailing ``n - k`` columns and ``b_j`` in the span of the leading ``k``.
    """
    n = v_full.shape[0]
    if s > n - k:
        raise ContractError(f"s={s} exceeds n-k={n - k}: no misaligned subspace exists")
    if not 0.0 <= delta < 1.0:
        raise ContractError("delta must lie in [0, 1)")
    q_low = haar_orthogonal(n - k, rng)[:, :s]
    a = v_full[:, k:] @ q_low
    if delta == 0.0 or k == 0:
        return a
    t = min(s, k)
    q_top = haar_orthogonal(k, rng)[:, :t]
    b = np.zeros((n, s))
    b[:, :t] = v_full[:, :k] @ q_top
    mix = np.where(np.arange(s) < t, np.sqrt(delta), 0.0)
    basis = a * np.sqrt(1.0 - mix**2) + b * mix
    # tidy residual non-orthogonality from the mixing (exact in exact arithmetic)
    q, r = np.linalg.qr(basis)
    return q * np.where(np.diag(r) < 0.0, -1.0, 1.0)


def _unit_factors(v_task: np.ndarray, m: int, rng: np.random.Generator):
    n, s = v_task.shape
    g = rng.standard_normal((m, s))
    h = v_task @ (v_task.T @ rng.standard_normal((n, s)))
    return g / np.linalg.norm(g, axis=0), h / np.linalg.norm(h, axis=0)


def generate_instance(m: int, n: int, s: int, k: int, delta: float, decay_alpha: float,
                      eps_noise: float, seed: int) -> AssumptionInstance:
    if k >= min(m, n):
        raise ContractError(f"k={k} must be < min(m, n)={min(m, n)}")
    if s < 1 or s > n - k:
        raise ContractError(f"s={s} must lie in [1, n-k={n - k}]")
    if eps_noise < 0:
        raise ContractError("eps_noise must be nonnegative")
    rng = rng_for(seed, "theory", "instance")
    r = min(m, n)
    u = haar_orthogonal(m, rng)[:, :r]
    v_haar = haar_orthogonal(n, rng)
    sigma = decayed_spectrum(r, decay_alpha)
    w0 = svd((u * sigma) @ v_haar[:, :r].T)
    right = np.concatenate([w0.vt.T, v_haar[:, r:]], axis=1)

    v_task = misaligned_basis(right, k, s, delta, rng)
    g, h = _unit_factors(v_task, m, rng)

    noise = np.zeros((m, n))
    if eps_noise > 0:
        raw = rng.standard_normal((m, n))
        raw -= raw.mean()
        noise = raw * (eps_noise / np.linalg.norm(raw, "fro"))

    achieved = float(np.max(np.sum((v_task.T @ w0.vt[:k].T) ** 2, axis=0))) if k else 0.0
    return AssumptionInstance(
        w0=w0, v_task=v_task, g=g, h=h, noise=noise, k=k, delta=achieved,
        decay_alpha=decay_alpha, delta_target=delta, seed=seed, right_basis=right,
    )


def check_instance(inst: AssumptionInstance, eps_noise: float, tol: float = 1e-10) -> dict:
    """Recompute every generator invariant from the raw factors."""
    w = inst.w0.reconstruct()
    raw = np.linalg.svd(w, compute_uv=True, full_matrices=False)
    vt_raw = raw[2]
    p_t = inst.v_task @ inst.v_task.T
    leak = [float(np.sum((p_t @ vt_raw[i]) ** 2)) for i in range(inst.k)]
    expected = decayed_spectrum(inst.w0.rank, inst.decay_alpha)
    return {
        "v_task_orthonormal": float(np.max(np.abs(inst.v_task.T @ inst.v_task - np.eye(inst.s)))) <= tol,
        "h_in_task_span": float(np.max(np.linalg.norm(inst.h - p_t @ inst.h, axis=0))) <= tol,
        "misalignment": (max(leak) if leak else 0.0) <= inst.delta_target + tol,
        "spectrum_decay": float(np.max(np.abs(raw[1] / expected - 1.0))) <= 1e-9,
        "noise_bound": float(np.linalg.norm(inst.noise, "fro")) <= eps_noise * (1 + 1e-12) + 1e-300,
        "max_leak": max(leak) if leak else 0.0,
    }


@dataclass(frozen=True, eq=False)
class TheoremVerdict:
    seed: int
    k: int
    gamma: np.ndarray
    z_dev: np.ndarray  # z* - 1 after one analytic step
    epsilon: float
    gamma_max_topk: float
    gamma_star: float
    i_star: int
    bound_small: float  # C1 * sqrt(delta), C1 = sum_j ||g_j|| ||h_j||
    bound_large: float  # c_T / sqrt(n - k)
    c1_empirical: float  # max_{i<k} |gamma_i| / sqrt(delta)
    s_set: SkillRelevantSet
    contained_in_topk: bool
    small_bound_holds: bool
    large_bound_holds: bool
    degenerate: bool

    def rows(self) -> list[dict]:
        out = []
        for i, (gi, zi) in enumerate(zip(self.gamma, self.z_dev)):
            out.append({
                "index": i, "gamma": float(gi), "z_minus_1": float(zi),
                "in_top_k": i < self.k, "skill_relevant": i in self.s_set.indices,
            })
        return out


def theorem_epsilon(inst: AssumptionInstance, eta_z: float, c: float = 1.0) -> float:
    scale = eta_z * float(inst.w0.sigma[0])
    floor = ROUNDOFF_FLOOR * scale * max(float(np.linalg.norm(inst.grad_total(), "fro")), 1e-300)
    return max(c * scale * np.sqrt(inst.delta_target), floor)


def verify_theorem(inst: AssumptionInstance, eta_z: float, c: float = 1.0) -> TheoremVerdict:
    gamma = gamma_spectrum(inst.grad_total(), inst.w0).gamma
    z_dev = -eta_z * inst.w0.sigma * gamma
    eps = theorem_epsilon(inst, eta_z, c)
    s_set = skill_relevant_set(SvfAdapter(1.0 + z_dev), eps)
    k = inst.k
    abs_g = np.abs(gamma)
    top = float(abs_g[:k].max()) if k else 0.0
    tail = abs_g[k:]
    i_star = int(k + np.argmax(tail)) if tail.size else -1
    g_star = float(tail.max()) if tail.size else 0.0
    c1 = float(np.sum(np.linalg.norm(inst.g, axis=0) * np.linalg.norm(inst.h, axis=0)))
    c_t = inst.c_t()
    bound_small = c1 * np.sqrt(inst.delta) + 1e-12 * max(c1, 1.0)
    bound_large = c_t / np.sqrt(inst.n - k)
    return TheoremVerdict(
        seed=inst.seed, k=k, gamma=gamma, z_dev=z_dev, epsilon=eps,
        gamma_max_topk=top, gamma_star=g_star, i_star=i_star,
        bound_small=float(bound_small), bound_large=float(bound_large),
        c1_empirical=top / np.sqrt(inst.delta) if inst.delta > 0 else float("nan"),
        s_set=s_set,
        contained_in_topk=all(i < k for i in s_set.indices),
        small_bound_holds=top <= bound_small,
        large_bound_holds=g_star >= bound_large,
        degenerate=not np.any(inst.grad_task()),
    )


@dataclass(frozen=True, eq=False)
class PerturbationReport:
    eta: float
    delta_sigma: np.ndarray  # sigma_i(W1) - sigma_i(W0)
    gamma: np.ndarray
    sigma: np.ndarray
    abs_residual: np.ndarray  # | |dsigma_i| - eta |gamma_i| |
    rel_residual: np.ndarray  # | |dsigma_i| / sigma_i - eta |gamma_i| |
    first_order_residual: np.ndarray  # | dsigma_i + eta gamma_i |  (signed law)

    @property
    def max_abs(self) -> float:
        return float(self.abs_residual.max())

    @property
    def max_rel(self) -> float:
        return float(self.rel_residual.max())

    @property
    def max_first_order(self) -> float:
        return float(self.first_order_residual.max())


def perturbation_check(inst: AssumptionInstance, eta: float) -> PerturbationReport:
    """One full gradient step ``W1 = W0 - eta (G_T + N)`` compared against first-order theory.

    First-order perturbation of a simple singular value gives
    ``dsigma_i = -eta u_i^T (G_T + N) v_i``; three residuals are reported: the signed
    law, its magnitude form, and the magnitude form divided by ``sigma_i``.
    """
    grad = inst.grad_total()
    gamma = gamma_spectrum(grad, inst.w0).gamma
    # both sides from a fresh SVD of the same dense matrix, so eta = 0 is exact
    w0 = inst.w0.reconstruct()
    sigma0 = svd(w0).sigma
    sigma1 = svd(w0 - eta * grad).sigma
    ds = sigma1 - sigma0
    return PerturbationReport(
        eta=eta, delta_sigma=ds, gamma=gamma, sigma=sigma0,
        abs_residual=np.abs(np.abs(ds) - eta * np.abs(gamma)),
        rel_residual=np.abs(np.abs(ds) / sigma0 - eta * np.abs(gamma)),
        first_order_residual=np.abs(ds + eta * gamma),
    )


@dataclass(frozen=True)
class ProtectionCost:
    forfeited: float  # sum_{i >= k} (sigma_i gamma_i)^2
    floor: float  # c_T^2 / (n - k)

    @property
    def exceeds_floor(self) -> bool:
        return self.forfeited >= self.floor


def topk_protection_cost(inst: AssumptionInstance) -> ProtectionCost:
    gamma = gamma_spectrum(inst.grad_total(), inst.w0).gamma
    k = inst.k
    forfeited = float(np.sum((inst.w0.sigma[k:] * gamma[k:]) ** 2))
    return ProtectionCost(forfeited=forfeited, floor=inst.c_t() ** 2 / (inst.n - k))


def skills_sharing_base(base: AssumptionInstance, count: int, seed: int) -> list[AssumptionInstance]:
    """Independent task subspaces and gradients on the base matrix of ``base``."""
    out = []
    for j in range(count):
        rng = rng_for(seed, "theory", "multiskill", j)
        m, n, s, k = base.m, base.n, base.s, base.k
        v_task = misaligned_basis(base.right_basis, k, s, base.delta_target, rng)
        g, h = _unit_factors(v_task, m, rng)
        achieved = float(np.max(np.sum((v_task.T @ base.w0.vt[:k].T) ** 2, axis=0)))
        out.append(AssumptionInstance(
            w0=base.w0, v_task=v_task, g=g, h=h,
            noise=np.zeros((m, n)), k=k, delta=achieved, decay_alpha=base.decay_alpha,
            delta_target=base.delta_target, seed=seed, right_basis=base.right_basis,
        ))
    return out


@dataclass(frozen=True)
class UnionReport:
    union: frozenset[int]
    per_skill: tuple[frozenset[int], ...]
    coverage: tuple[int, ...]  # histogram of union members over equal-width index bins
    min_prefix: int  # smallest p such that {0..p-1} contains the union
    topk_contains_union: bool


def multiskill_union(instances: list[AssumptionInstance], eta_z: float, bins: int = 8) -> UnionReport:
    if not instances:
        return UnionReport(frozenset(), (), tuple([0] * bins), 0, True)
    w0 = instances[0].w0
    for inst in instances[1:]:
        if inst.w0 is not w0 and not (
            np.array_equal(inst.w0.u, w0.u) and np.array_equal(inst.w0.sigma, w0.sigma)
            and np.array_equal(inst.w0.vt, w0.vt)
        ):
            raise ContractError("all instances must share the same base matrix")
    sets = tuple(verify_theorem(inst, eta_z).s_set.indices for inst in instances)
    union = frozenset().union(*sets)
    r = w0.rank
    hist = np.histogram(sorted(union), bins=bins, range=(0, r))[0] if union else np.zeros(bins, int)
    min_prefix = max(union) + 1 if union else 0
    return UnionReport(
        union=union, per_skill=sets, coverage=tuple(int(c) for c in hist),
        min_prefix=min_prefix, topk_contains_union=min_prefix <= instances[0].k,
    )


@dataclass(frozen=True, eq=False)
class FaithfulnessReport:
    one_step_ratio: np.ndarray  # |z_i - 1| / (sigma_i |gamma_i|) where gamma_i != 0
    z_final: np.ndarray
    importance: np.ndarray  # sigma_i |gamma_i|
    spearman: float
    losses: np.ndarray


def surrogate_loss(inst: AssumptionInstance, z: np.ndarray) -> float:
    """``<G, W_z - W0> + 1/2 ||W_z - W0||_F^2``; its W-gradient at ``W0`` is the task gradient."""
    gamma = gamma_spectrum(inst.grad_total(), inst.w0).gamma
    d = (z - 1.0) * inst.w0.sigma
    return float(np.dot(gamma, d) + 0.5 * np.dot(d, d))


def svf_probe_faithfulness(inst: AssumptionInstance, eta_z: float, steps: int = 200,
                           lr: float = 1e-2) -> FaithfulnessReport:
    w0 = inst.w0
    gamma = gamma_spectrum(inst.grad_total(), w0).gamma
    importance = w0.sigma * np.abs(gamma)
    one_step = eta_z * w0.sigma * gamma
    nz = importance > 0
    ratio = np.full_like(gamma, np.nan)
    ratio[nz] = np.abs(one_step[nz]) / importance[nz]

    # dL/dz_i = <G + (W_z - W0), sigma_i u_i v_i^T> = sigma_i gamma_i + sigma_i^2 (z_i - 1)
    z = np.ones_like(gamma)
    losses = [surrogate_loss(inst, z)]
    for _ in range(steps):
        z = z - lr * (w0.sigma * gamma + w0.sigma**2 * (z - 1.0))
        losses.append(surrogate_loss(inst, z))
    rho = float(spearmanr(np.abs(z - 1.0), importance).statistic)
    return FaithfulnessReport(one_step_ratio=ratio, z_final=z, importance=importance,
                              spearman=rho, losses=np.asarray(losses))
