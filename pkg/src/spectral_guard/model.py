"""A small tanh network whose layers carry SVF and LoRA adapters, plus its synthetic tasks.

Rows are samples throughout: ``X`` is ``batch x in_dim``. Hidden layers apply
``tanh``; the last layer is linear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapters import AdaptedLayer, LoraAdapter, SvfAdapter
from .linalg import ContractError, haar_orthogonal, svd
from .theory import decayed_spectrum


@dataclass
class ToyModel:
    layers: list[AdaptedLayer]

    def __post_init__(self):
        if not self.layers:
            raise ContractError("a model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.d_out != nxt.d_in:
                raise ContractError(f"layer dims not conformable: {prev.d_out} -> {nxt.d_in}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].d_in

    @property
    def out_dim(self) -> int:
        return self.layers[-1].d_out

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        a = np.atleast_2d(np.asarray(x, dtype=np.float64))
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            if cache is not None:
                cache.append(a)
            lora = layer.lora
            pre = a @ layer.svf_weight().T + lora.scale * ((a @ lora.a.T) @ lora.b.T)
            a = pre if i == last else np.tanh(pre)
        if cache is not None:
            cache.append(a)
        return a

    def backward(self, cache: list, grad_out: np.ndarray) -> list[np.ndarray]:
        """Weight gradients ``dL/dW'_l`` given ``dL/d(output)`` and a forward cache."""
        grads = [None] * len(self.layers)
        delta = grad_out
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            layer = self.layers[i]
            if i != last:
                # cache[i + 1] holds tanh(pre_i)
                delta = delta * (1.0 - cache[i + 1] ** 2)
            grads[i] = delta.T @ cache[i]
            if i:
                delta = delta @ layer.weight()
        return grads

    def z_vectors(self) -> list[np.ndarray]:
        return [layer.svf.z for layer in self.layers]

    def set_z(self, zs) -> None:
        for layer, z in zip(self.layers, zs):
            layer.svf = SvfAdapter(np.array(z, dtype=np.float64))
            layer.invalidate()

    def reset_lora(self, rank: int, alpha: float, rng: np.random.Generator) -> None:
        for layer in self.layers:
            layer.lora = LoraAdapter.init(layer.d_out, layer.d_in, rank, alpha, rng)

    def copy(self) -> "ToyModel":
        out = []
        for layer in self.layers:
            out.append(AdaptedLayer(
                base_svd=layer.base_svd,
                svf=SvfAdapter(layer.svf.z.copy()),
                lora=LoraAdapter(layer.lora.b.copy(), layer.lora.a.copy(), layer.lora.alpha),
                name=layer.name,
            ))
        return ToyModel(out)

    def layer_dims(self) -> list[tuple[int, int]]:
        return [(layer.d_out, layer.d_in) for layer in self.layers]


def build_toy_model(dims, rng: np.random.Generator, decay_alpha: float = 1.0, gain: float = 1.0,
                    lora_rank: int = 4, alpha: float = 32.0) -> ToyModel:
    """Layers ``dims[0] -> dims[1] -> ...`` with Haar directions and ``sigma_i = gain * i^(-alpha/2)``."""
    if len(dims) < 2:
        raise ContractError("dims must list at least input and output sizes")
    layers = []
    for li, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        r = min(d_in, d_out)
        u = haar_orthogonal(d_out, rng)[:, :r]
        v = haar_orthogonal(d_in, rng)[:, :r]
        base = svd((u * (gain * decayed_spectrum(r, decay_alpha))) @ v.T)
        layers.append(AdaptedLayer(
            base_svd=base, svf=SvfAdapter.identity(r),
            lora=LoraAdapter.init(d_out, d_in, lora_rank, alpha, rng), name=f"layer{li}",
        ))
    return ToyModel(layers)


def build_circuit_model(dims, rng: np.random.Generator, k: int, hub_width: int, tail_width: int,
                        decay_alpha: float = 1.0, gain: float = 1.0, lora_rank: int = 4,
                        alpha: float = 32.0) -> tuple[ToyModel, list[tuple[int, ...]]]:
    """Toy model with a planted skill circuit.

    Each layer gets a support of ``hub_width`` indices drawn from its top ``k``
    components and ``tail_width`` indices drawn from the rest. The right singular
    vectors of layer ``l + 1`` on its support equal the left singular vectors of
    layer ``l`` on its support, so signal written by one layer's circuit
    components is read by the next layer's. All other directions are Haar.
    Returns the model and the per-layer supports (sorted, hubs first in rank).
    """
    if len(dims) < 2:
        raise ContractError("dims must list at least input and output sizes")
    width = hub_width + tail_width
    ranks = [min(a, b) for a, b in zip(dims, dims[1:])]
    if hub_width > k or any(tail_width > r - k for r in ranks):
        raise ContractError("circuit does not fit: need hub_width <= k and tail_width <= rank - k")
    supports = []
    for r in ranks:
        hubs = rng.choice(k, size=hub_width, replace=False)
        tails = k + rng.choice(r - k, size=tail_width, replace=False)
        supports.append(tuple(sorted(int(i) for i in np.concatenate([hubs, tails]))))
    layers = []
    prev_u = None
    for li, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        r = ranks[li]
        u = haar_orthogonal(d_out, rng)[:, :r]
        v = haar_orthogonal(d_in, rng)[:, :r]
        if prev_u is not None:
            fixed = prev_u[:, list(supports[li - 1])]
            v = _plant_columns(v, list(supports[li]), fixed, rng)
        base = svd((u * (gain * decayed_spectrum(r, decay_alpha))) @ v.T)
        layers.append(AdaptedLayer(
            base_svd=base, svf=SvfAdapter.identity(r),
            lora=LoraAdapter.init(d_out, d_in, lora_rank, alpha, rng), name=f"layer{li}",
        ))
        prev_u = base.u
    if width == 0:
        raise ContractError("circuit must have at least one component")
    return ToyModel(layers), supports


def _plant_columns(v: np.ndarray, where: list[int], fixed: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal columns with ``fixed`` placed at ``where`` and a random completion elsewhere."""
    n, r = v.shape
    rest = rng.standard_normal((n, r - len(where)))
    rest -= fixed @ (fixed.T @ rest)
    rest = np.linalg.qr(rest)[0]
    out = np.empty((n, r))
    others = [i for i in range(r) if i not in set(where)]
    out[:, where] = fixed
    out[:, others] = rest
    return out


@dataclass
class SkillTask:
    """Skill read out as ``readout^T f(x)`` on inputs from ``span(v_task)``.

    Targets come from a teacher network: the same base weights under different
    spectral scales, applied to ``P_T x``. The skill is therefore exactly
    reachable by spectral scaling of the student.
    """

    v_task: np.ndarray  # in_dim x s, orthonormal
    readout: np.ndarray  # out_dim x s_out, orthonormal
    teacher: ToyModel
    sample_count: int = 256
    noise_scale: float = 0.0
    input_scale: float = 1.0

    def sample(self, rng: np.random.Generator, count: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        count = self.sample_count if count is None else count
        coords = self.input_scale * rng.standard_normal((count, self.v_task.shape[1]))
        x = coords @ self.v_task.T
        if self.noise_scale:
            xi = rng.standard_normal((count, self.v_task.shape[0]))
            x = x + self.noise_scale * (xi - (xi @ self.v_task) @ self.v_task.T)
        return x, self.targets(x)

    def targets(self, x: np.ndarray) -> np.ndarray:
        proj = (x @ self.v_task) @ self.v_task.T
        return self.teacher.forward(proj) @ self.readout

    def predict(self, model: ToyModel, x: np.ndarray) -> np.ndarray:
        return model.forward(x) @ self.readout


def make_skill_task(model: ToyModel, supports, s: int, s_out: int, rng: np.random.Generator,
                    teacher_spread: float = 0.5, sample_count: int = 256,
                    input_scale: float = 1.0) -> SkillTask:
    """Skill carried by the planted circuit ``supports``.

    The input subspace is a random ``s``-dim subspace of the first layer's right
    singular vectors on its support; the readout is a random ``s_out``-dim
    subspace of the last layer's left singular vectors on its support. The
    teacher rescales the circuit components by ``1 + teacher_spread * N(0, 1)``.
    """
    first, last = model.layers[0].base_svd, model.layers[-1].base_svd
    if s > len(supports[0]) or s_out > len(supports[-1]):
        raise ContractError("skill dimension exceeds the circuit width")
    v_task = first.v[:, list(supports[0])] @ haar_orthogonal(len(supports[0]), rng)[:, :s]
    readout = last.u[:, list(supports[-1])] @ haar_orthogonal(len(supports[-1]), rng)[:, :s_out]
    teacher = model.copy()
    zs = []
    for layer, sup in zip(model.layers, supports):
        z = np.ones(layer.base_svd.rank)
        z[list(sup)] += teacher_spread * rng.standard_normal(len(sup))
        zs.append(z)
    teacher.set_z(zs)
    return SkillTask(v_task=v_task, readout=readout, teacher=teacher,
                     sample_count=sample_count, input_scale=input_scale)


@dataclass
class FactSet:
    keys: np.ndarray  # count x in_dim, unit rows
    values: np.ndarray  # count x out_dim

    @property
    def count(self) -> int:
        return self.keys.shape[0]


def make_fact_set(model: ToyModel, count: int, rng: np.random.Generator, fact_rank: int = 2,
                  value_scale: float = 1.0, min_distance: float = 0.1) -> FactSet:
    """Isotropic unit keys mapped to values the model does not yet produce.

    Each value is the model's current output plus a new association ``D @ key``
    from a random rank-``fact_rank`` map ``D``, scaled so that on average the new
    part has ``value_scale`` times the norm of the current output.
    """
    keys = []
    while len(keys) < count:
        k = rng.standard_normal(model.in_dim)
        k /= np.linalg.norm(k)
        if all(np.linalg.norm(k - other) > min_distance for other in keys):
            keys.append(k)
    keys = np.array(keys)
    current = model.forward(keys)
    if fact_rank == 0 or value_scale == 0.0:
        return FactSet(keys, current)
    left = np.linalg.qr(rng.standard_normal((model.out_dim, fact_rank)))[0]
    right = np.linalg.qr(rng.standard_normal((model.in_dim, fact_rank)))[0]
    d = left @ right.T
    new = keys @ d.T
    new *= value_scale * np.mean(np.linalg.norm(current, axis=1)) / np.mean(np.linalg.norm(new, axis=1))
    return FactSet(keys, current + new)
