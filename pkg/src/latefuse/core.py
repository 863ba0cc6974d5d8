"""Shared domain types, dataset splits and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Optional, Sequence

import numpy as np

N_CLASSES = 3
PROB_ATOL = 1e-6


class ContractError(ValueError):
    """Raised when an operation's preconditions are violated."""


class Polarity(IntEnum):
    NEGATIVE = 0
    NEUTRAL = 1
    POSITIVE = 2


def check_probs(probs, what: str = "class vector") -> np.ndarray:
    """Validate a length-3 probability vector and return it as float64."""
    arr = np.asarray(probs, dtype=np.float64)
    if arr.shape != (N_CLASSES,):
        raise ContractError(f"{what} must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{what} has non-finite components: {arr.tolist()}")
    if np.any(arr < 0):
        raise ContractError(f"{what} has negative components: {arr.tolist()}")
    if abs(arr.sum() - 1.0) > PROB_ATOL:
        raise ContractError(f"{what} sums to {arr.sum()!r}, expected 1")
    return arr


@dataclass(frozen=True)
class ClassVector:
    """Probability distribution over (negative, neutral, positive)."""

    probs: tuple

    def __post_init__(self):
        arr = check_probs(self.probs)
        object.__setattr__(self, "probs", tuple(float(p) for p in arr))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def argmax(self) -> Polarity:
        return argmax_class(self.probs)


@dataclass(frozen=True)
class FusedFeature:
    """Concatenation of the image and text class vectors for one sample."""

    id: str
    x: tuple
    label: Optional[Polarity] = None

    def __post_init__(self):
        arr = np.asarray(self.x, dtype=np.float64)
        if arr.shape != (2 * N_CLASSES,):
            raise ContractError(f"fused feature {self.id!r} must have 6 components")
        check_probs(arr[:3], f"image block of {self.id!r}")
        check_probs(arr[3:], f"text block of {self.id!r}")
        object.__setattr__(self, "x", tuple(float(v) for v in arr))
        if self.label is not None:
            object.__setattr__(self, "label", Polarity(int(self.label)))


def to_arrays(features: Sequence[FusedFeature]) -> tuple[np.ndarray, np.ndarray]:
    """Stack features into ``(X, y)``; ``y`` is -1 where a label is missing."""
    X = np.array([f.x for f in features], dtype=np.float64).reshape(-1, 2 * N_CLASSES)
    y = np.array([-1 if f.label is None else int(f.label) for f in features], dtype=np.int64)
    return X, y


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    valid: tuple
    test: tuple

    def __post_init__(self):
        seen: dict[str, str] = {}
        for name in ("train", "valid", "test"):
            part = tuple(getattr(self, name))
            object.__setattr__(self, name, part)
            for f in part:
                if f.id in seen:
                    raise ContractError(
                        f"id {f.id!r} appears in both {seen[f.id]} and {name}"
                    )
                seen[f.id] = name

    def arrays(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return to_arrays(getattr(self, name))


def check_fit_ready(y: np.ndarray, what: str = "training set") -> None:
    """Every polarity must be present in a partition used for fitting."""
    y = np.asarray(y)
    if y.size == 0:
        raise ContractError(f"{what} is empty")
    if np.any(y < 0):
        raise ContractError(f"{what} contains unlabeled examples")
    missing = [Polarity(k).name for k in range(N_CLASSES) if not np.any(y == k)]
    if missing:
        raise ContractError(f"{what} has no examples of {', '.join(missing)}")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = gold class, columns = predicted class."""

    counts: tuple

    @property
    def array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.array.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.array))

    def accuracy(self) -> float:
        return self.trace / self.total

    def to_list(self) -> list:
        return [list(row) for row in self.counts]


def _paired(predictions: Iterable, gold: Iterable) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(list(predictions), dtype=np.int64)
    g = np.asarray(list(gold), dtype=np.int64)
    if p.shape != g.shape:
        raise ContractError(f"length mismatch: {p.size} predictions vs {g.size} gold labels")
    if p.size == 0:
        raise ContractError("cannot evaluate an empty prediction list")
    return p, g


def accuracy(predictions: Iterable, gold: Iterable) -> float:
    p, g = _paired(predictions, gold)
    return int(np.count_nonzero(p == g)) / p.size


def confusion(predictions: Iterable, gold: Iterable) -> ConfusionMatrix:
    p, g = _paired(predictions, gold)
    counts = np.bincount(g * N_CLASSES + p, minlength=N_CLASSES * N_CLASSES)
    counts = counts.reshape(N_CLASSES, N_CLASSES)
    return ConfusionMatrix(tuple(tuple(int(c) for c in row) for row in counts))


def argmax_class(v) -> Polarity:
    """Index of the largest component, lowest index on ties."""
    arr = np.asarray(v.probs if isinstance(v, ClassVector) else v, dtype=np.float64)
    return Polarity(int(np.argmax(arr)))


def argmax_rows(P: np.ndarray) -> np.ndarray:
    """Row-wise :func:`argmax_class` for an ``(n, 3)`` array."""
    return np.argmax(np.asarray(P), axis=1).astype(np.int64)
