"""Stacked ensembles: a GLM meta-learner over base-model probabilities."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import TrainedModel, predict_proba


class EnsembleKind(str, Enum):
    ALL_MODELS = "AllModels"
    BEST_OF_FAMILY = "BestOfFamily"


@dataclass(frozen=True)
class StackedEnsemble:
    kind: EnsembleKind
    base_models: tuple
    meta: TrainedModel

    family = "StackedEnsemble"

    @property
    def n_features(self) -> int:
        return self.base_models[0].n_features

    def meta_features(self, X) -> np.ndarray:
        """Base-model probabilities side by side: width ``3 * len(base_models)``."""
        return np.hstack([predict_proba(m, X) for m in self.base_models])

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self.meta, self.meta_features(X))
