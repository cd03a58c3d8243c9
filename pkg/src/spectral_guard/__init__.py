"""Spectral probing of frozen weights and subspace-protected low-rank knowledge injection."""

__version__ = "0.1.0"

from .adapters import AdaptedLayer, LoraAdapter, SvfAdapter, lora_delta, param_count_lora, param_count_svf, svf_apply
from .linalg import ContractError, SvdConvergenceError, SvdFactors, svd
from .probe import (
    CriticalSubspace,
    build_critical_subspace,
    critical_indices,
    gamma_spectrum,
    index_set_overlap,
    skill_relevant_set,
    svf_loss_gradient,
)
from .trainer import TrainConfig, ortho_loss, phase1_train_svf, phase2_inject, total_loss

__all__ = [
    "AdaptedLayer", "ContractError", "CriticalSubspace", "LoraAdapter", "SvdConvergenceError", "SvdFactors",
    "SvfAdapter", "TrainConfig", "build_critical_subspace", "critical_indices", "gamma_spectrum",
    "index_set_overlap", "lora_delta", "ortho_loss", "param_count_lora", "param_count_svf",
    "phase1_train_svf", "phase2_inject", "skill_relevant_set", "svd", "svf_apply", "svf_loss_gradient",
    "total_loss",
]
