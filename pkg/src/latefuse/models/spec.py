"""Model families, their hyperparameter schemas and :class:`ModelSpec`.

Each hyperparameter has a *valid* range (what :class:`ModelSpec` accepts) and
a *search* range (what the random search draws from).  They differ only where
degenerate settings are useful outside the search, e.g. a one-tree forest or a
zero learning rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional

import numpy as np

from ..core import ContractError

MAX_SEED = 2**64 - 1


class Family(str, Enum):
    CART = "CART"
    RANDOM_FOREST = "RandomForest"
    EXTRA_TREES = "ExtraTrees"
    GLM = "GLM"
    GBM_FIRST_ORDER = "GBM_FirstOrder"
    GBM_SECOND_ORDER = "GBM_SecondOrder"
    MLP = "MLP"
    LINEAR_SVM = "LinearSVM"


# The six families the random search draws from; CART and the SVM baseline are
# usable directly but are not part of the search space.
SEARCH_FAMILIES = (
    Family.RANDOM_FOREST,
    Family.EXTRA_TREES,
    Family.GLM,
    Family.GBM_SECOND_ORDER,
    Family.GBM_FIRST_ORDER,
    Family.MLP,
)


@dataclass(frozen=True)
class Param:
    kind: str  # "int", "float", "choice" or "bool"
    default: Any
    low: Optional[float] = None
    high: Optional[float] = None
    search_low: Optional[float] = None
    search_high: Optional[float] = None
    log: bool = False
    choices: tuple = ()

    def validate(self, name: str, value):
        if self.kind == "bool":
            if not isinstance(value, (bool, np.bool_)):
                raise ContractError(f"{name} must be a boolean, got {value!r}")
            return bool(value)
        if self.kind == "choice":
            for c in self.choices:
                if value == c and type(value) is not bool:
                    return c
            raise ContractError(f"{name} must be one of {self.choices}, got {value!r}")
        if isinstance(value, (bool, np.bool_)) or not isinstance(value, (int, float, np.number)):
            raise ContractError(f"{name} must be numeric, got {value!r}")
        if self.kind == "int":
            if float(value) != int(value):
                raise ContractError(f"{name} must be an integer, got {value!r}")
            value = int(value)
        else:
            value = float(value)
            if not math.isfinite(value):
                raise ContractError(f"{name} must be finite")
        if not self.low <= value <= self.high:
            raise ContractError(f"{name}={value!r} outside [{self.low}, {self.high}]")
        return value

    def sample(self, rng: np.random.Generator):
        if self.kind == "bool":
            return bool(rng.integers(2))
        if self.kind == "choice":
            return self.choices[int(rng.integers(len(self.choices)))]
        lo = self.low if self.search_low is None else self.search_low
        hi = self.high if self.search_high is None else self.search_high
        if self.kind == "int":
            if self.log:
                v = math.exp(rng.uniform(math.log(lo), math.log(hi + 1)))
                return int(min(max(math.floor(v), lo), hi))
            return int(rng.integers(lo, hi + 1))
        if self.log:
            return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        return float(rng.uniform(lo, hi))


def _forest_schema(bootstrap: bool) -> dict:
    return {
        "n_trees": Param("int", 50, 1, 200, 10, 200, log=True),
        "max_depth": Param("int", 12, 1, 12, 2, 12),
        "feature_subsample": Param("choice", "sqrt", choices=("sqrt", 0.5, 1.0)),
        "bootstrap": Param("bool", bootstrap),
    }


def _gbm_schema(second_order: bool) -> dict:
    schema = {
        "n_rounds": Param("int", 100, 1, 300, 10, 300, log=True),
        "learning_rate": Param("float", 0.1, 0.0, 1.0, 0.01, 0.3, log=True),
        "max_depth": Param("int", 3, 1, 6),
        "subsample": Param("float", 1.0, 0.5, 1.0),
    }
    if second_order:
        schema["reg_lambda"] = Param("float", 1.0, 0.0, 10.0)
    return schema


SCHEMAS: dict[Family, dict[str, Param]] = {
    Family.CART: {
        "max_depth": Param("int", 6, 1, 12),
        "min_samples_leaf": Param("int", 1, 1, 20),
        "criterion": Param("choice", "gini", choices=("gini",)),
    },
    Family.RANDOM_FOREST: _forest_schema(bootstrap=True),
    Family.EXTRA_TREES: _forest_schema(bootstrap=False),
    Family.GLM: {
        "reg_lambda": Param("float", 1e-3, 0.0, 10.0, 1e-5, 1e-1, log=True),
        "alpha": Param("float", 0.0, 0.0, 1.0),
        "epochs": Param("int", 300, 1, 2000, 100, 1000, log=True),
        "lr": Param("float", 0.05, 0.0, 1.0, 0.005, 0.3, log=True),
    },
    Family.GBM_FIRST_ORDER: _gbm_schema(second_order=False),
    Family.GBM_SECOND_ORDER: _gbm_schema(second_order=True),
    Family.MLP: {
        "layers": Param("int", 1, 1, 2),
        "width": Param("choice", 16, choices=(8, 16, 32)),
        "activation": Param("choice", "relu", choices=("relu", "tanh")),
        "lr": Param("float", 0.01, 0.0, 1.0, 1e-3, 3e-2, log=True),
        "epochs": Param("int", 40, 1, 500, 10, 80, log=True),
    },
    Family.LINEAR_SVM: {
        "reg_lambda": Param("float", 1e-4, 0.0, 1e4, 1e-5, 1.0, log=True),
        "epochs": Param("int", 300, 1, 5000),
        "lr": Param("float", 0.5, 0.0, 10.0),
    },
}


@dataclass(frozen=True, eq=True)
class ModelSpec:
    """A model family, its hyperparameters and the seed driving all randomness."""

    family: Family
    hyperparams: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        try:
            family = Family(self.family)
        except ValueError:
            raise ContractError(f"unknown model family {self.family!r}") from None
        schema = SCHEMAS[family]
        unknown = sorted(set(self.hyperparams) - set(schema))
        if unknown:
            raise ContractError(f"unknown hyperparameters for {family.value}: {unknown}")
        params = {}
        for name, p in schema.items():
            params[name] = p.validate(name, self.hyperparams.get(name, p.default))
        seed = self.seed
        if isinstance(seed, bool) or int(seed) != seed or not 0 <= int(seed) <= MAX_SEED:
            raise ContractError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "hyperparams", params)
        object.__setattr__(self, "seed", int(seed))

    def to_dict(self) -> dict:
        return {"family": self.family.value, "hyperparams": dict(self.hyperparams), "seed": self.seed}


def sample_hyperparams(family: Family, rng: np.random.Generator) -> dict:
    """Draw every hyperparameter of ``family`` from its search range."""
    return {name: p.sample(rng) for name, p in SCHEMAS[Family(family)].items()}


def stream(seed: int, *key: int) -> np.random.SeedSequence:
    """Named child stream: identical for identical ``(seed, key)``."""
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(stream(seed, *key))


def stream_u32(seed: int, *key: int) -> int:
    return int(stream(seed, *key).generate_state(1, dtype=np.uint32)[0])
