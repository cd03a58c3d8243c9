"""Reading skill relevance out of the spectrum.

Critical-index selection from a trained scaling vector, spectral loading
coefficients of a gradient, the analytic gradient with respect to the SVF
scales, skill-relevant sets, and index-set overlap diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapters import SvfAdapter
from .linalg import ContractError, SvdFactors, as_matrix


@dataclass(frozen=True, eq=False)
class CriticalSubspace:
    indices: tuple[int, ...]
    u_crit: np.ndarray  # d_out x k
    v_crit: np.ndarray  # d_in x k, kept for diagnostics only
    source_layer: str = ""

    @property
    def k(self) -> int:
        return len(self.indices)


@dataclass(frozen=True, eq=False)
class GammaSpectrum:
    gamma: np.ndarray
    source: str = ""


@dataclass(frozen=True)
class SkillRelevantSet:
    indices: frozenset[int]
    epsilon: float


def critical_indices(svf: SvfAdapter, k: int) -> tuple[int, ...]:
    """Indices of the ``k`` largest ``|z_i - 1|``, lower index first on ties, returned sorted."""
    n = svf.z.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"k={k} outside [1, {n}]")
    dev = np.abs(svf.z - 1.0)
    # stable sort on -dev keeps lower indices ahead among equal deviations
    order = np.argsort(-dev, kind="stable")
    return tuple(sorted(int(i) for i in order[:k]))


def subspace_from_indices(base_svd: SvdFactors, indices, source_layer: str = "") -> CriticalSubspace:
    idx = tuple(sorted(int(i) for i in indices))
    if len(set(idx)) != len(idx) or (idx and (idx[0] < 0 or idx[-1] >= base_svd.rank)):
        raise ContractError(f"invalid index set {idx} for rank {base_svd.rank}")
    sel = list(idx)
    return CriticalSubspace(
        indices=idx,
        u_crit=np.ascontiguousarray(base_svd.u[:, sel]),
        v_crit=np.ascontiguousarray(base_svd.vt[sel, :].T),
        source_layer=source_layer,
    )


def build_critical_subspace(base_svd: SvdFactors, svf: SvfAdapter, k: int,
                            source_layer: str = "") -> CriticalSubspace:
    return subspace_from_indices(base_svd, critical_indices(svf, k), source_layer)


def gamma_spectrum(grad, base_svd: SvdFactors, source: str = "") -> GammaSpectrum:
    """``gamma_i = u_i^T grad v_i`` for every retained component."""
    grad = as_matrix(grad, "grad")
    if grad.shape != base_svd.shape:
        raise ContractError(f"gradient shape {grad.shape} != base shape {base_svd.shape}")
    gamma = np.einsum("mi,mn,in->i", base_svd.u, grad, base_svd.vt)
    return GammaSpectrum(gamma=gamma, source=source)


def svf_loss_gradient(grad_w, base_svd: SvdFactors) -> np.ndarray:
    """dL/dz_i = sigma_i * u_i^T (dL/dW) v_i, exact when ``grad_w`` is taken at W_z."""
    return base_svd.sigma * gamma_spectrum(grad_w, base_svd).gamma


def skill_relevant_set(svf_trained: SvfAdapter, epsilon: float) -> SkillRelevantSet:
    if not epsilon > 0:
        raise ContractError("epsilon must be positive")
    dev = np.abs(svf_trained.z - 1.0)
    return SkillRelevantSet(frozenset(int(i) for i in np.flatnonzero(dev > epsilon)), float(epsilon))


def median_epsilon(svf: SvfAdapter) -> float:
    """Data-driven threshold for trained probes: the median of ``|z - 1|``."""
    return float(np.median(np.abs(svf.z - 1.0)))


@dataclass(frozen=True)
class Overlap:
    overlap: float
    jaccard: float
    per_layer: tuple[tuple[float, float], ...] = ()


def _layer_counts(a: set, b: set) -> tuple[int, int, int]:
    return len(a & b), len(a | b), min(len(a), len(b))


def index_set_overlap(a, b) -> Overlap:
    """Overlap ``|a & b| / min(|a|, |b|)`` and Jaccard ``|a & b| / |a | b|``.

    ``a`` and ``b`` are either two index sets, or two equal-length sequences of
    per-layer index sets; in the latter case the counts are pooled across
    layers (micro average) and the per-layer values are returned as well.
    """
    layered = _is_layered(a) and _is_layered(b)
    if not layered:
        a, b = [a], [b]
    if len(a) != len(b):
        raise ContractError("per-layer index set lists differ in length")
    inter = union = smaller = 0
    per_layer = []
    for la, lb in zip(a, b):
        i, u, m = _layer_counts(set(la), set(lb))
        inter, union, smaller = inter + i, union + u, smaller + m
        per_layer.append((i / m if m else 0.0, i / u if u else 0.0))
    return Overlap(
        overlap=inter / smaller if smaller else 0.0,
        jaccard=inter / union if union else 0.0,
        per_layer=tuple(per_layer) if layered else (),
    )


def _is_layered(x) -> bool:
    if isinstance(x, (set, frozenset)):
        return False
    items = list(x)
    return bool(items) and all(isinstance(i, (set, frozenset, tuple, list)) for i in items)
