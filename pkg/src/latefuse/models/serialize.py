"""Versioned JSON model documents.

``{"schema_version": 1, "family", "hyperparams", "seed", "params", ...}``.
Floats are written with ``repr`` (shortest round-trip form), so a decoded
model predicts bit-identically to the original.
"""

from __future__ import annotations

import json

import numpy as np

from ..core import ContractError
from . import TrainedModel
from .ensemble import EnsembleKind, StackedEnsemble
from .spec import ModelSpec
from .trees import Tree

SCHEMA_VERSION = 1


class SchemaVersionError(ContractError):
    pass


def _encode(obj):
    if isinstance(obj, Tree):
        return {"__tree__": {k: _encode(v) for k, v in obj.items()}}
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype), "shape": list(obj.shape)}
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__tree__" in obj:
            return Tree({k: _decode(v) for k, v in obj["__tree__"].items()})
        if "__ndarray__" in obj:
            arr = np.array(obj["__ndarray__"], dtype=obj["dtype"])
            return arr.reshape(obj["shape"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def to_document(model) -> dict:
    if isinstance(model, StackedEnsemble):
        return {
            "schema_version": SCHEMA_VERSION,
            "family": StackedEnsemble.family,
            "hyperparams": {"kind": model.kind.value},
            "seed": 0,
            "n_features": model.n_features,
            "params": {
                "base_models": [to_document(m) for m in model.base_models],
                "meta": to_document(model.meta),
            },
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "family": model.spec.family.value,
        "hyperparams": dict(model.spec.hyperparams),
        "seed": model.spec.seed,
        "n_features": model.n_features,
        "params": _encode(model.params),
        "train_meta": _encode(model.train_meta),
    }


def from_document(doc: dict):
    if not isinstance(doc, dict):
        raise ContractError("model document must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported model schema_version {version!r} (expected {SCHEMA_VERSION})"
        )
    try:
        if doc["family"] == StackedEnsemble.family:
            p = doc["params"]
            return StackedEnsemble(
                EnsembleKind(doc["hyperparams"]["kind"]),
                tuple(from_document(d) for d in p["base_models"]),
                from_document(p["meta"]),
            )
        spec = ModelSpec(doc["family"], doc["hyperparams"], doc["seed"])
        return TrainedModel(spec, _decode(doc["params"]), int(doc["n_features"]),
                            _decode(doc.get("train_meta", {})))
    except (KeyError, TypeError, ValueError) as exc:
        raise ContractError(f"malformed model document: {exc}") from exc


def serialize(model, **extra) -> bytes:
    """Encode a fitted model; ``extra`` adds top-level fields (e.g. input encoding)."""
    doc = to_document(model)
    doc.update(extra)
    return json.dumps(doc, separators=(",", ":")).encode("utf-8")


def deserialize(data: bytes | str):
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ContractError(f"model document is not valid JSON: {exc}") from exc
    return from_document(doc)
