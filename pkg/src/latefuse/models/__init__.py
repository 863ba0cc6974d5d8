"""The classifier zoo behind a single fit / predict-probabilities interface."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import N_CLASSES, ContractError
from . import gbm, linear, mlp, trees
from .spec import SCHEMAS, SEARCH_FAMILIES, Family, ModelSpec, sample_hyperparams


@dataclass(frozen=True)
class TrainedModel:
    spec: ModelSpec
    params: dict
    n_features: int
    train_meta: dict = field(default_factory=dict)

    @property
    def family(self) -> str:
        return self.spec.family.value

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self, X)


def _check_training_data(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractError("training set is empty")
    if y.shape != (X.shape[0],):
        raise ContractError(f"{X.shape[0]} feature rows but {y.size} labels")
    if not np.all(np.isfinite(X)):
        raise ContractError("training features must be finite")
    if np.any((y < 0) | (y >= N_CLASSES)):
        raise ContractError("labels must be 0, 1 or 2")
    return X, y


def fit(spec: ModelSpec, X, y) -> TrainedModel:
    """Fit ``spec`` on ``(X, y)``; deterministic given the spec's seed."""
    X, y = _check_training_data(X, y)
    fam, hp = spec.family, spec.hyperparams
    meta: dict = {}
    if fam is Family.CART:
        params = trees.fit_cart(spec, X, y)
    elif fam in (Family.RANDOM_FOREST, Family.EXTRA_TREES):
        params = trees.fit_forest(spec, X, y)
    elif fam in (Family.GBM_FIRST_ORDER, Family.GBM_SECOND_ORDER):
        params, meta = gbm.fit_gbm(spec, X, y)
    elif fam is Family.GLM:
        params, meta = linear.fit_glm(hp, X, y)
    elif fam is Family.MLP:
        params, meta = mlp.fit_mlp(hp, spec.seed, X, y)
    elif fam is Family.LINEAR_SVM:
        params, meta = linear.fit_svm(hp, X, y)
    else:  # pragma: no cover - Family is closed
        raise ContractError(f"unsupported family {fam}")
    return TrainedModel(spec, params, X.shape[1], meta)


def predict_proba(model, X) -> np.ndarray:
    """Class probabilities for a batch ``(n, d)`` or a single vector ``(d,)``."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = np.ascontiguousarray(X[None, :] if single else X)
    if X2.ndim != 2 or X2.shape[1] != model.n_features:
        raise ContractError(
            f"expected {model.n_features} features per row, got shape {X.shape}"
        )
    if hasattr(model, "spec"):
        P = _predict_family(model, X2)
    else:
        P = model.predict_proba(X2)
    return P[0] if single else P


def _predict_family(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    fam, p = model.spec.family, model.params
    if fam is Family.CART:
        return trees.predict_cart(p, X)
    if fam in (Family.RANDOM_FOREST, Family.EXTRA_TREES):
        return trees.predict_forest(p, X)
    if fam in (Family.GBM_FIRST_ORDER, Family.GBM_SECOND_ORDER):
        return gbm.predict_gbm(p, model.spec.hyperparams["learning_rate"], X)
    if fam is Family.GLM:
        return linear.predict_glm(p, X)
    if fam is Family.MLP:
        return mlp.predict_mlp(p, X)
    return linear.predict_svm(p, X)


def predict(model, X) -> np.ndarray:
    """Predicted class per row (argmax, lowest index on ties)."""
    return np.argmax(predict_proba(model, np.atleast_2d(X)), axis=1)


__all__ = [
    "Family",
    "ModelSpec",
    "SCHEMAS",
    "SEARCH_FAMILIES",
    "TrainedModel",
    "fit",
    "predict",
    "predict_proba",
    "sample_hyperparams",
]
