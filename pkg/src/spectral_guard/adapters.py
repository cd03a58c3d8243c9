"""SVF singular-value scaling and LoRA low-rank updates sharing one frozen weight."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ContractError, SvdFactors, as_matrix, as_vector

LORA_INIT_STD = 0.02


@dataclass
class SvfAdapter:
    z: np.ndarray

    @classmethod
    def identity(cls, rank: int) -> "SvfAdapter":
        return cls(np.ones(rank))

    def __post_init__(self):
        self.z = as_vector(self.z, "z")


@dataclass
class LoraAdapter:
    b: np.ndarray
    a: np.ndarray
    alpha: float = 32.0

    def __post_init__(self):
        self.b = as_matrix(self.b, "b")
        self.a = as_matrix(self.a, "a")
        if self.b.shape[1] != self.a.shape[0]:
            raise ContractError(f"B is {self.b.shape}, A is {self.a.shape}: inner ranks differ")
        if self.rank > min(self.d_out, self.d_in):
            raise ContractError(f"rank {self.rank} exceeds min(d_out, d_in)")
        if not self.alpha > 0:
            raise ContractError("alpha must be positive")

    @classmethod
    def init(cls, d_out: int, d_in: int, rank: int, alpha: float,
             rng: np.random.Generator) -> "LoraAdapter":
        """B = 0 and A ~ N(0, 0.02^2), so the initial update is exactly zero."""
        if rank <= 0:
            raise ContractError("LoRA rank must be positive")
        return cls(np.zeros((d_out, rank)), LORA_INIT_STD * rng.standard_normal((rank, d_in)), alpha)

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def d_out(self) -> int:
        return self.b.shape[0]

    @property
    def d_in(self) -> int:
        return self.a.shape[1]

    @property
    def scale(self) -> float:
        return self.alpha / self.rank


def svf_apply(base_svd: SvdFactors, svf: SvfAdapter) -> np.ndarray:
    """``U diag(z * sigma) V^T``."""
    if svf.z.shape[0] != base_svd.rank:
        raise ContractError(f"z has length {svf.z.shape[0]}, base rank is {base_svd.rank}")
    return (base_svd.u * (svf.z * base_svd.sigma)) @ base_svd.vt


def lora_delta(lora: LoraAdapter) -> np.ndarray:
    return lora.scale * (lora.b @ lora.a)


@dataclass
class AdaptedLayer:
    """Frozen base weight (stored as SVD factors) carrying an SVF probe and a LoRA adapter."""

    base_svd: SvdFactors
    svf: SvfAdapter
    lora: LoraAdapter
    name: str = ""
    _scaled: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.svf.z.shape[0] != self.base_svd.rank:
            raise ContractError("SVF length does not match base rank")
        if (self.lora.d_out, self.lora.d_in) != self.base_svd.shape:
            raise ContractError(
                f"LoRA shape {(self.lora.d_out, self.lora.d_in)} != base {self.base_svd.shape}"
            )

    @property
    def d_out(self) -> int:
        return self.base_svd.shape[0]

    @property
    def d_in(self) -> int:
        return self.base_svd.shape[1]

    def svf_weight(self) -> np.ndarray:
        # cached; callers that mutate z must call invalidate()
        if self._scaled is None:
            self._scaled = svf_apply(self.base_svd, self.svf)
        return self._scaled

    def invalidate(self) -> None:
        self._scaled = None

    def weight(self) -> np.ndarray:
        return self.svf_weight() + lora_delta(self.lora)


def adapted_forward(layer: AdaptedLayer, x) -> np.ndarray:
    """``(SVF(W) + (alpha/r) B A) x`` without materialising the LoRA product."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != layer.d_in:
        raise ContractError(f"input has length {x.shape[0]}, layer expects {layer.d_in}")
    lora = layer.lora
    return layer.svf_weight() @ x + lora.scale * (lora.b @ (lora.a @ x))


def param_count_svf(layer_dims) -> int:
    return sum(min(d_out, d_in) for d_out, d_in in layer_dims)


def param_count_lora(layer_dims, r: int) -> int:
    if r <= 0:
        raise ContractError("LoRA rank must be positive")
    return sum(r * (d_out + d_in) for d_out, d_in in layer_dims)
