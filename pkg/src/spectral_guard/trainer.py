"""Two-phase training on the toy network.

Phase 1 fits the SVF scales of every layer to a skill by gradient descent and
freezes a critical subspace per layer. Phase 2 trains LoRA adapters on a fact
set with a penalty on the adapter's projection onto the protected left
singular vectors. Plain gradient descent with a fixed step is used in both.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, fields

import numpy as np

from .adapters import LoraAdapter, lora_delta
from .linalg import ContractError
from .model import FactSet, SkillTask, ToyModel
from .probe import CriticalSubspace, build_critical_subspace, subspace_from_indices, svf_loss_gradient
from .seeding import rng_for

PROTECTION_MODES = ("svf_guided", "topk_raw", "random_k", "orth_complement", "none")


class DivergenceError(ArithmeticError):
    def __init__(self, phase: str, step: int, value: float):
        super().__init__(f"{phase} diverged at step {step} (loss={value})")
        self.phase = phase
        self.step = step


@dataclass
class TrainConfig:
    lora_rank: int = 4
    alpha: float = 32.0
    lambda_ortho: float = 10.0
    k: int = 8
    lr: float = 0.002
    epochs: int = 750
    batch_size: int = 8
    seed: int = 0
    protection_mode: str = "svf_guided"

    def __post_init__(self):
        if self.protection_mode not in PROTECTION_MODES:
            raise ContractError(f"protection_mode must be one of {PROTECTION_MODES}")
        for name in ("lora_rank", "k", "epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.alpha <= 0 or self.lr <= 0:
            raise ContractError("alpha and lr must be positive")
        if self.lambda_ortho < 0:
            raise ContractError("lambda_ortho must be nonnegative")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _overflow_checked(fn):
    # divergence is detected and raised explicitly, so numpy's overflow warnings are noise
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with np.errstate(over="ignore", invalid="ignore"):
            return fn(*args, **kwargs)
    return wrapper


# ---------------------------------------------------------------- losses

def skill_loss(model: ToyModel, skill: SkillTask, x: np.ndarray, y: np.ndarray) -> float:
    r = skill.predict(model, x) - y
    return float(np.mean(np.sum(r * r, axis=1)))


def skill_loss_and_grads(model: ToyModel, skill: SkillTask, x: np.ndarray, y: np.ndarray):
    cache: list = []
    out = model.forward(x, cache)
    r = out @ skill.readout - y
    loss = float(np.mean(np.sum(r * r, axis=1)))
    grad_out = (2.0 / x.shape[0]) * (r @ skill.readout.T)
    return loss, model.backward(cache, grad_out)


def sft_loss_and_grads(model: ToyModel, keys: np.ndarray, values: np.ndarray):
    """Mean squared Euclidean error over the batch and its weight gradients."""
    cache: list = []
    out = model.forward(keys, cache)
    r = out - values
    loss = float(np.mean(np.sum(r * r, axis=1)))
    return loss, model.backward(cache, (2.0 / keys.shape[0]) * r)


def ortho_loss(lora: LoraAdapter, crit: CriticalSubspace) -> float:
    """``sum_i ||dW^T u_i||^2 = ||U_crit^T dW||_F^2`` on the effective (scaled) update."""
    if crit.u_crit.shape[0] != lora.d_out:
        raise ContractError(f"subspace lives in R^{crit.u_crit.shape[0]}, update in R^{lora.d_out}")
    proj = crit.u_crit.T @ lora_delta(lora)
    return float(np.sum(proj * proj))


def ortho_loss_grads(lora: LoraAdapter, crit: CriticalSubspace) -> tuple[np.ndarray, np.ndarray]:
    """Gradients with respect to ``B`` and ``A``; ``c = alpha / r`` enters through the chain rule."""
    c = lora.scale
    u = crit.u_crit
    g = 2.0 * u @ (u.T @ lora_delta(lora))
    return c * g @ lora.a.T, c * lora.b.T @ g


def total_loss(sft: float, ortho_per_layer, lambda_ortho: float) -> float:
    return float(sft + lambda_ortho * sum(ortho_per_layer))


# ---------------------------------------------------------------- phase 1

@dataclass
class Phase1Result:
    z: list[np.ndarray]
    subspaces: list[CriticalSubspace]
    losses: np.ndarray
    converged: bool

    @property
    def initial_loss(self) -> float:
        return float(self.losses[0])

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


@_overflow_checked
def phase1_train_svf(model: ToyModel, skill: SkillTask, lr: float, steps: int, seed: int,
                     k: int = 8) -> Phase1Result:
    """Full-batch gradient descent on every layer's ``z``; LoRA must be neutral (``B = 0``)."""
    for layer in model.layers:
        if not np.all(layer.svf.z == 1.0):
            raise ContractError("phase 1 expects z initialised to ones")
        if np.any(layer.lora.b):
            raise ContractError("phase 1 expects a zero LoRA update")
    x, y = skill.sample(rng_for(seed, "skill", "train"))
    losses = []
    for step in range(steps + 1):
        loss, grads = skill_loss_and_grads(model, skill, x, y)
        if not np.isfinite(loss):
            raise DivergenceError("phase1", step, loss)
        losses.append(loss)
        if step == steps:
            break
        for layer, gw in zip(model.layers, grads):
            layer.svf.z = layer.svf.z - lr * svf_loss_gradient(gw, layer.base_svd)
            layer.invalidate()
    subspaces = [build_critical_subspace(layer.base_svd, layer.svf, min(k, layer.base_svd.rank),
                                         layer.name) for layer in model.layers]
    losses = np.asarray(losses)
    return Phase1Result(
        z=[layer.svf.z.copy() for layer in model.layers], subspaces=subspaces,
        losses=losses, converged=steps == 0 or losses[-1] < losses[0],
    )


# ---------------------------------------------------------------- phase 2

@dataclass
class RunMetrics:
    mode: str
    seed: int
    sft_loss: list[float] = field(default_factory=list)
    ortho_loss: list[list[float]] = field(default_factory=list)
    interference: list[float] = field(default_factory=list)
    skill_loss_before: float = float("nan")
    skill_loss_after: float = float("nan")
    fact_recall: float = float("nan")
    max_complement_leak: float = 0.0
    crit_indices: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def skill_degradation(self) -> float:
        return self.skill_loss_after - self.skill_loss_before


def protection_subspaces(model: ToyModel, svf_subspaces: list[CriticalSubspace], mode: str,
                         k: int, seed: int) -> list[CriticalSubspace] | None:
    if mode == "svf_guided":
        return svf_subspaces
    if mode in ("topk_raw", "orth_complement"):
        return [subspace_from_indices(l.base_svd, range(min(k, l.base_svd.rank)), l.name)
                for l in model.layers]
    if mode == "random_k":
        out = []
        for li, l in enumerate(model.layers):
            rng = rng_for(seed, "random_k", li)
            out.append(subspace_from_indices(
                l.base_svd, rng.choice(l.base_svd.rank, size=min(k, l.base_svd.rank), replace=False), l.name))
        return out
    if mode == "none":
        return None
    raise ContractError(f"unknown protection mode {mode!r}")


def interference(model: ToyModel, subspaces: list[CriticalSubspace]) -> float:
    return float(sum(ortho_loss(layer.lora, crit) for layer, crit in zip(model.layers, subspaces)))


def _frozen_state(model: ToyModel):
    return [(l.base_svd.u.tobytes(), l.base_svd.sigma.tobytes(), l.base_svd.vt.tobytes(),
             l.svf.z.tobytes()) for l in model.layers]


@_overflow_checked
def phase2_inject(model: ToyModel, facts: FactSet, cfg: TrainConfig,
                  svf_subspaces: list[CriticalSubspace], skill: SkillTask | None = None,
                  n_eval: int = 512, recall_tol: float = 0.1,
                  anchors: FactSet | None = None) -> RunMetrics:
    """Train fresh LoRA adapters on ``facts`` under the configured protection mode.

    ``svf_subspaces`` are the phase-1 subspaces; interference is always measured
    against them so every mode is scored on the same yardstick. ``anchors``, if
    given, are mixed three anchors to one fact into the training stream.
    """
    mode = cfg.protection_mode
    crit = protection_subspaces(model, svf_subspaces, mode, cfg.k, cfg.seed)
    lam = 0.0 if mode in ("none", "orth_complement") else cfg.lambda_ortho
    model.reset_lora(cfg.lora_rank, cfg.alpha, rng_for(cfg.seed, "lora_init"))
    frozen = _frozen_state(model)
    metrics = RunMetrics(mode=mode, seed=cfg.seed, crit_indices=[c.indices for c in crit] if crit else [])
    if skill is not None:
        metrics.skill_loss_before = evaluate_skill(model, skill, n_eval, cfg.seed)

    keys, values = facts.keys, facts.values
    if anchors is not None and anchors.count:
        keys = np.concatenate([keys, anchors.keys])
        values = np.concatenate([values, anchors.values])
    order_rng = rng_for(cfg.seed, "phase2", "order")
    step = 0
    for _ in range(cfg.epochs):
        perm = order_rng.permutation(keys.shape[0])
        batch_losses = []
        for start in range(0, len(perm), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            sft, grads = sft_loss_and_grads(model, keys[idx], values[idx])
            if not np.isfinite(sft):
                raise DivergenceError("phase2", step, sft)
            batch_losses.append(sft)
            for li, (layer, gw) in enumerate(zip(model.layers, grads)):
                lora = layer.lora
                c = lora.scale
                gb = c * gw @ lora.a.T
                ga = c * lora.b.T @ gw
                if lam:
                    ob, oa = ortho_loss_grads(lora, crit[li])
                    gb, ga = gb + lam * ob, ga + lam * oa
                lora.b = lora.b - cfg.lr * gb
                lora.a = lora.a - cfg.lr * ga
                if mode == "orth_complement":
                    u = crit[li].u_crit
                    lora.b = lora.b - u @ (u.T @ lora.b)
                    leak = float(np.linalg.norm(u.T @ lora_delta(lora)))
                    metrics.max_complement_leak = max(metrics.max_complement_leak, leak)
            step += 1
        metrics.sft_loss.append(float(np.mean(batch_losses)))
        metrics.ortho_loss.append([ortho_loss(l.lora, c) for l, c in zip(model.layers, crit)] if crit else
                                  [0.0] * len(model.layers))
        metrics.interference.append(interference(model, svf_subspaces))
        if not np.isfinite(metrics.interference[-1]):
            raise DivergenceError("phase2", step, metrics.interference[-1])

    if _frozen_state(model) != frozen:
        raise RuntimeError("frozen base or SVF parameters changed during phase 2")
    if skill is not None:
        metrics.skill_loss_after = evaluate_skill(model, skill, n_eval, cfg.seed)
    metrics.fact_recall = evaluate_recall(model, facts, recall_tol)
    return metrics


# ---------------------------------------------------------------- evaluation

def evaluate_skill(model: ToyModel, skill: SkillTask, n_eval: int, seed: int = 0) -> float:
    """Skill error on fresh samples from the held-out evaluation stream of ``seed``."""
    x, y = skill.sample(rng_for(seed, "skill", "eval"), n_eval)
    return skill_loss(model, skill, x, y)


def evaluate_recall(model: ToyModel, facts: FactSet, tol: float) -> float:
    """Fraction of keys whose output is within ``tol`` relative Euclidean error of the value."""
    out = model.forward(facts.keys)
    err = np.linalg.norm(out - facts.values, axis=1)
    ok = err <= tol * np.linalg.norm(facts.values, axis=1)
    return float(np.mean(ok))
