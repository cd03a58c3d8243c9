"""Experiment configuration, presets and overrides.

Configs are flat JSON objects. Every field of :class:`TrainConfig` appears at the
top level next to the benchmark, theory and ablation parameters, so one file
describes a whole experiment and ``--set key=value`` can reach any knob.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

from .linalg import ContractError
from .trainer import PROTECTION_MODES, TrainConfig

KINDS = ("probe", "phase1", "phase2", "theory", "ablation", "report", "bench")
RANK_ALPHA_POLICIES = ("fixed_scale", "fixed_alpha")


class ConfigError(ContractError):
    """Bad configuration; ``field`` names the offending key when known."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.field = field
        self.line = line


@dataclass
class ExperimentConfig:
    kind: str = "bench"
    root_seed: int = 0
    out_dir: str = "runs"

    # TrainConfig fields (phase 2)
    lora_rank: int = 4
    alpha: float = 32.0
    lambda_ortho: float = 10.0
    k: int = 8
    lr: float = 0.002
    epochs: int = 750
    batch_size: int = 8
    seed: int = 0
    protection_mode: str = "svf_guided"

    # toy benchmark
    dims: tuple = (32, 32, 64)
    hub_width: int = 6
    tail_width: int = 2
    gain: float = 3.0
    decay_alpha: float = 1.0
    skill_dim: int = 2
    readout_dim: int = 2
    teacher_spread: float = 0.5
    skill_samples: int = 256
    phase1_lr: float = 1e-2
    phase1_steps: int = 500
    fact_count: int = 50
    fact_rank: int = 2
    value_scale: float = 0.5
    recall_tol: float = 0.1
    n_eval: int = 512
    bench_seeds: int = 20
    modes: tuple = ("svf_guided", "topk_raw", "random_k", "orth_complement", "none")

    # theory lab
    m: int = 64
    n: int = 64
    s: int = 2
    delta: float = 1e-4
    eps_noise: float = 0.0
    eta: float = 1e-3
    eta_z: float = 1e-2
    seed_count: int = 100

    # ablation grids
    ablate_lambdas: tuple = (0.1, 1.0, 10.0, 100.0)
    ablate_ranks: tuple = (2, 4, 8)
    ablate_ks: tuple = (4, 8, 16)
    ablate_seeds: int = 10
    rank_alpha_policy: str = "fixed_scale"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"must be one of {KINDS}, got {self.kind!r}", "kind")
        if self.protection_mode not in PROTECTION_MODES:
            raise ConfigError(f"must be one of {PROTECTION_MODES}", "protection_mode")
        for mode in self.modes:
            if mode not in PROTECTION_MODES:
                raise ConfigError(f"unknown protection mode {mode!r}", "modes")
        if self.rank_alpha_policy not in RANK_ALPHA_POLICIES:
            raise ConfigError(f"must be one of {RANK_ALPHA_POLICIES}", "rank_alpha_policy")
        positive = ("lora_rank", "k", "epochs", "batch_size", "skill_dim", "readout_dim",
                    "skill_samples", "fact_count", "n_eval", "bench_seeds", "m", "n", "s",
                    "seed_count", "ablate_seeds", "alpha", "lr", "gain", "phase1_lr")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError("must be positive", name)
        nonneg = ("lambda_ortho", "phase1_steps", "teacher_spread", "fact_rank", "value_scale",
                  "delta", "eps_noise", "eta", "eta_z", "recall_tol", "root_seed", "seed",
                  "hub_width", "tail_width", "decay_alpha")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigError("must be nonnegative", name)
        if len(self.dims) < 2 or any(int(d) <= 0 for d in self.dims):
            raise ConfigError("needs at least two positive sizes", "dims")
        min_rank = min(min(a, b) for a, b in zip(self.dims, self.dims[1:]))
        if self.k > min_rank:
            raise ConfigError(f"k={self.k} exceeds the smallest layer rank {min_rank}", "k")
        if self.lora_rank > min_rank:
            raise ConfigError(f"lora_rank={self.lora_rank} exceeds the smallest layer rank {min_rank}",
                              "lora_rank")
        if self.hub_width > self.k:
            raise ConfigError("hub components must fit inside the top k", "hub_width")
        if self.tail_width > min_rank - self.k:
            raise ConfigError("tail components must fit outside the top k", "tail_width")
        if self.hub_width + self.tail_width < max(self.skill_dim, self.readout_dim):
            raise ConfigError("circuit narrower than the skill", "tail_width")
        if self.k >= min(self.m, self.n):
            raise ConfigError(f"k={self.k} must be below min(m, n)={min(self.m, self.n)}", "k")
        if self.s > self.n - self.k:
            raise ConfigError("no misaligned subspace of this size exists", "s")
        if not self.delta < 1:
            raise ConfigError("must be below 1", "delta")
        for name, grid in (("ablate_ranks", self.ablate_ranks), ("ablate_ks", self.ablate_ks)):
            for v in grid:
                if int(v) <= 0 or int(v) > min_rank:
                    raise ConfigError(f"value {v} outside [1, {min_rank}]", name)

    def train_config(self, **changes) -> TrainConfig:
        base = {name: getattr(self, name) for name in TrainConfig.field_names()}
        base.update(changes)
        return TrainConfig(**base)

    def to_dict(self) -> dict:
        out = asdict(self)
        for name, value in out.items():
            if isinstance(value, tuple):
                out[name] = list(value)
        return out

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, data: dict, lines: dict | None = None) -> "ExperimentConfig":
        """Build from a parsed mapping; ``lines`` maps keys to source lines for diagnostics."""
        if not isinstance(data, dict):
            raise ConfigError("top level must be an object")
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            line = (lines or {}).get(key)
            if key not in known:
                raise ConfigError("unknown field", key, line)
            try:
                kwargs[key] = _coerce(known[key].default, value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc), key, line) from None
        try:
            return cls(**kwargs)
        except ConfigError as exc:
            if exc.field is not None and exc.line is None and lines and exc.field in lines:
                raise ConfigError(str(exc).split(": ", 1)[-1], exc.field, lines[exc.field]) from None
            raise


def _coerce(default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError(f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise TypeError(f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise TypeError(f"expected a list, got {value!r}")
        if default and not isinstance(default[0], str):
            kind = type(default[0])
            return tuple(_coerce(kind(0), v) for v in value)
        return tuple(str(v) for v in value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise TypeError(f"expected a string, got {value!r}")
        return value
    return value


PRESETS: dict[str, dict] = {
    # every parameter an acceptance check touches, in one place
    "canonical": {},
    # a few seconds end to end; for smoke tests of the plumbing
    "smoke": {"epochs": 20, "phase1_steps": 50, "bench_seeds": 2, "seed_count": 5,
              "ablate_seeds": 2, "fact_count": 12, "skill_samples": 64, "n_eval": 64},
}


def preset(name: str, **changes) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", "preset")
    return ExperimentConfig.from_dict({**PRESETS[name], **changes})


def load_config(path) -> ExperimentConfig:
    """Read a JSON config; syntax and field errors carry the source line."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc.msg}, column {exc.colno})", line=exc.lineno) from None
    return ExperimentConfig.from_dict(data, _key_lines(text))


def _key_lines(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith('"'):
            key = stripped[1:].split('"', 1)[0]
            out.setdefault(key, lineno)
    return out


def apply_overrides(cfg: ExperimentConfig, assignments) -> ExperimentConfig:
    """Apply ``key=value`` strings; values are parsed as JSON, falling back to bare strings."""
    data = cfg.to_dict()
    for item in assignments or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in data:
            raise ConfigError("unknown field", key)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        data[key] = value
    return ExperimentConfig.from_dict(data)


def with_changes(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, **changes)
