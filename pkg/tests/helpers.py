"""Small fixtures shared by the trainer and model tests."""

from spectral_guard.lab import build_benchmark
from spectral_guard.config import ExperimentConfig

SMALL = dict(dims=(8, 8, 12), k=4, hub_width=3, tail_width=1, lora_rank=2, alpha=8.0,
             skill_samples=64, phase1_steps=100, fact_count=10, n_eval=64, epochs=30,
             lr=0.005, m=16, n=16, ablate_ranks=(1, 2), ablate_ks=(2, 4))


def small_config(**changes) -> ExperimentConfig:
    return ExperimentConfig(**{**SMALL, **changes})


def small_benchmark(seed=0, **changes):
    cfg = small_config(**changes)
    return cfg, build_benchmark(cfg, seed)
