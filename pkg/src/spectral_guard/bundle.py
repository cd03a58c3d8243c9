"""Artifact bundles: one human-readable JSON manifest per saved run.

Matrices are stored inline as ``{"shape": [...], "data": [...]}`` with every
float written to 17 significant digits, which round-trips any float64 exactly.
Non-finite values are written as the JSON extensions ``NaN``/``Infinity``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .adapters import AdaptedLayer, LoraAdapter, SvfAdapter
from .linalg import SvdFactors
from .probe import CriticalSubspace

FORMAT_VERSION = "spectral-guard-bundle/1"


class BundleError(OSError):
    """A bundle file is missing, unreadable or malformed; names the payload at fault."""


class BundleVersionError(BundleError):
    pass


@dataclass
class LayerState:
    name: str
    base: SvdFactors
    z: np.ndarray
    lora_b: np.ndarray | None = None
    lora_a: np.ndarray | None = None
    lora_alpha: float = 32.0

    @classmethod
    def from_layer(cls, layer: AdaptedLayer) -> "LayerState":
        return cls(name=layer.name, base=layer.base_svd, z=layer.svf.z.copy(),
                   lora_b=layer.lora.b.copy(), lora_a=layer.lora.a.copy(), lora_alpha=layer.lora.alpha)

    def to_layer(self) -> AdaptedLayer:
        lora = LoraAdapter(self.lora_b, self.lora_a, self.lora_alpha)
        return AdaptedLayer(base_svd=self.base, svf=SvfAdapter(self.z.copy()), lora=lora, name=self.name)


@dataclass
class ArtifactBundle:
    config: dict
    root_seed: int
    layers: list[LayerState] = field(default_factory=list)
    subspaces: list[CriticalSubspace] = field(default_factory=list)
    tables: dict[str, list[dict]] = field(default_factory=dict)
    library_version: str = ""
    version: str = FORMAT_VERSION


# ---------------------------------------------------------------- encoding

def _num(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    text = format(x, ".17g")
    # keep a float marker so -0.0 and integral floats come back as floats
    return text if any(c in text for c in ".en") else text + ".0"


def _matrix(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": np.asarray(a, dtype=np.float64).ravel().tolist()}


def _emit(obj, indent: int = 0) -> str:
    """Deterministic JSON with 17-digit floats; flat numeric lists stay on one line."""
    pad = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_emit(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    if isinstance(obj, (list, tuple)):
        if all(isinstance(v, (int, float, bool)) or v is None for v in obj):
            return "[" + ", ".join(_emit(v) for v in obj) + "]"
        items = [pad + _emit(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + "  " * indent + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(float(obj))
    return json.dumps(str(obj))


def bundle_to_text(bundle: ArtifactBundle) -> str:
    manifest = {
        "version": bundle.version,
        "library_version": bundle.library_version,
        "root_seed": int(bundle.root_seed),
        "config": bundle.config,
        "layers": [{
            "name": st.name,
            "u": _matrix(st.base.u), "sigma": _matrix(st.base.sigma), "vt": _matrix(st.base.vt),
            "z": _matrix(st.z),
            "lora": None if st.lora_b is None else {
                "b": _matrix(st.lora_b), "a": _matrix(st.lora_a), "alpha": float(st.lora_alpha)},
        } for st in bundle.layers],
        "subspaces": [{
            "source_layer": c.source_layer, "indices": list(c.indices),
            "u_crit": _matrix(c.u_crit), "v_crit": _matrix(c.v_crit),
        } for c in bundle.subspaces],
        "tables": {name: [_row(r) for r in rows] for name, rows in bundle.tables.items()},
    }
    return _emit(manifest) + "\n"


def _row(r: dict) -> dict:
    return {str(k): (list(v) if isinstance(v, tuple) else v) for k, v in r.items()}


def save_bundle(bundle: ArtifactBundle, path) -> str:
    path = os.fspath(path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(bundle_to_text(bundle))
    os.replace(tmp, path)
    return path


# ---------------------------------------------------------------- decoding

def _decode_matrix(obj, where: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        data = np.array(obj["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"payload '{where}' is malformed: {exc}") from None
    if data.size != int(np.prod(shape)):
        raise BundleError(f"payload '{where}' has {data.size} values for shape {shape}")
    return data.reshape(shape)


def _get(obj, key, where):
    try:
        return obj[key]
    except (KeyError, TypeError, IndexError):
        raise BundleError(f"payload '{where}.{key}' is missing") from None


def load_bundle(path) -> ArtifactBundle:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise BundleError(f"cannot read bundle '{path}': {exc.strerror or exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BundleError(f"bundle '{path}' is not valid JSON (line {exc.lineno}: {exc.msg})") from None
    version = doc.get("version") if isinstance(doc, dict) else None
    if version != FORMAT_VERSION:
        raise BundleVersionError(f"bundle '{path}' has format {version!r}, expected {FORMAT_VERSION!r}")

    layers = []
    for i, st in enumerate(_get(doc, "layers", "manifest")):
        where = f"layers[{i}]"
        base = SvdFactors(_decode_matrix(_get(st, "u", where), f"{where}.u"),
                          _decode_matrix(_get(st, "sigma", where), f"{where}.sigma"),
                          _decode_matrix(_get(st, "vt", where), f"{where}.vt"))
        lora = st.get("lora")
        layers.append(LayerState(
            name=_get(st, "name", where), base=base,
            z=_decode_matrix(_get(st, "z", where), f"{where}.z"),
            lora_b=None if lora is None else _decode_matrix(_get(lora, "b", where + ".lora"), f"{where}.lora.b"),
            lora_a=None if lora is None else _decode_matrix(_get(lora, "a", where + ".lora"), f"{where}.lora.a"),
            lora_alpha=32.0 if lora is None else float(_get(lora, "alpha", where + ".lora")),
        ))
    subspaces = []
    for i, c in enumerate(_get(doc, "subspaces", "manifest")):
        where = f"subspaces[{i}]"
        subspaces.append(CriticalSubspace(
            indices=tuple(int(x) for x in _get(c, "indices", where)),
            u_crit=_decode_matrix(_get(c, "u_crit", where), f"{where}.u_crit"),
            v_crit=_decode_matrix(_get(c, "v_crit", where), f"{where}.v_crit"),
            source_layer=str(c.get("source_layer", "")),
        ))
    return ArtifactBundle(
        config=_get(doc, "config", "manifest"), root_seed=int(_get(doc, "root_seed", "manifest")),
        layers=layers, subspaces=subspaces, tables=dict(_get(doc, "tables", "manifest")),
        library_version=str(doc.get("library_version", "")), version=version,
    )
