"""Late fusion of per-modality class vectors.

Joins image and text prediction files by id into 6-dim features
``x = img ⊕ text``, searches a fusion classifier with :mod:`latefuse.automl`,
and evaluates it against single-modality, weighted-average and linear SVM
baselines.  Also hosts a synthetic two-modality generator whose noise model is
known exactly, so the Bayes-optimal fused accuracy can be computed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy import integrate, optimize, special, stats

from .automl import Leaderboard, SearchBudget, random_search, select_best
from .core import (
    N_CLASSES,
    ClassVector,
    ContractError,
    DatasetSplit,
    FusedFeature,
    Polarity,
    accuracy,
    argmax_rows,
    check_probs,
    confusion,
)
from .models import Family, ModelSpec, fit, predict_proba
from .models.spec import stream_rng

log = logging.getLogger(__name__)

MODALITIES = ("image", "text")
SPLITS = ("train", "valid", "test")
WEIGHT_GRID = np.arange(101) / 100.0


class InputError(ContractError):
    """A malformed input file, with the offending line when known."""

    def __init__(self, path, message: str, line: Optional[int] = None):
        self.path, self.line = str(path), line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")


# --- files -------------------------------------------------------------------

def iter_jsonl(path) -> Iterable[tuple[int, dict]]:
    """``(line_number, object)`` for each non-blank line of a JSON Lines file."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(path, f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise InputError(path, "expected a JSON object", lineno)
            yield lineno, obj


def _record_id(path, lineno: int, obj: dict) -> str:
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise InputError(path, 'missing or non-string "id"', lineno)
    return rid


@dataclass
class ModalityPredictions:
    modality: str
    rows: dict = field(default_factory=dict)
    gold: Optional[dict] = None

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ContractError(f"unknown modality {self.modality!r}")
        self.rows = {k: v if isinstance(v, ClassVector) else ClassVector(tuple(v))
                     for k, v in self.rows.items()}

    @classmethod
    def read_jsonl(cls, path, modality: str) -> "ModalityPredictions":
        rows: dict = {}
        for lineno, obj in iter_jsonl(path):
            rid = _record_id(path, lineno, obj)
            if rid in rows:
                raise InputError(path, f"duplicate id {rid!r}", lineno)
            probs = obj.get("probs")
            if not isinstance(probs, list) or len(probs) != N_CLASSES or not all(
                isinstance(p, (int, float)) and not isinstance(p, bool) for p in probs
            ):
                raise InputError(path, '"probs" must be a list of 3 numbers', lineno)
            try:
                rows[rid] = ClassVector(tuple(float(p) for p in probs))
            except ContractError as exc:
                raise InputError(path, str(exc), lineno) from None
        return cls(modality, rows)

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rid, vec in self.rows.items():
                fh.write(json.dumps({"id": rid, "probs": list(vec.probs)}) + "\n")


def read_gold(path) -> dict:
    gold: dict = {}
    for lineno, obj in iter_jsonl(path):
        rid = _record_id(path, lineno, obj)
        if rid in gold:
            raise InputError(path, f"duplicate id {rid!r}", lineno)
        label = obj.get("label")
        if isinstance(label, bool) or label not in (0, 1, 2):
            raise InputError(path, '"label" must be 0, 1 or 2', lineno)
        gold[rid] = Polarity(label)
    return gold


def write_gold(gold: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rid, label in gold.items():
            fh.write(json.dumps({"id": rid, "label": int(label)}) + "\n")


def read_splits(path) -> dict:
    """Split file: ``{"train": [ids], "valid": [ids], "test": [ids]}``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(path, f"invalid JSON ({exc.msg})", exc.lineno) from None
    if not isinstance(doc, dict) or any(
        not isinstance(doc.get(k), list) or not all(isinstance(i, str) for i in doc[k])
        for k in SPLITS
    ):
        raise InputError(path, 'expected {"train": [...], "valid": [...], "test": [...]} of ids')
    return {k: list(doc[k]) for k in SPLITS}


def write_splits(splits: dict, path) -> None:
    Path(path).write_text(json.dumps({k: list(splits[k]) for k in SPLITS}) + "\n",
                          encoding="utf-8")


# --- joining and baselines ---------------------------------------------------

def join_modalities(img: ModalityPredictions, text: ModalityPredictions,
                    gold: Optional[dict] = None) -> tuple[list, int]:
    """Fused features for ids present in both modalities, plus the count of unmatched ids.

    Image probabilities occupy ``x[0:3]`` and text ``x[3:6]``.  Order follows
    the image file.  Labels come from ``gold`` when given.
    """
    shared = [rid for rid in img.rows if rid in text.rows]
    if not shared:
        raise ContractError("image and text predictions share no ids")
    missing = len(img.rows) + len(text.rows) - 2 * len(shared)
    if missing:
        log.warning("%d ids present in only one modality were skipped", missing)
    feats = []
    for rid in shared:
        label = gold.get(rid) if gold is not None else None
        feats.append(FusedFeature(rid, img.rows[rid].probs + text.rows[rid].probs, label))
    return feats, missing


def build_split(features: list, splits: dict) -> DatasetSplit:
    """Partition joined features by a split file; ids absent from the join are skipped."""
    by_id = {f.id: f for f in features}
    parts = {}
    for name in SPLITS:
        chosen = [by_id[i] for i in splits[name] if i in by_id]
        unlabeled = [f.id for f in chosen if f.label is None]
        if unlabeled:
            raise ContractError(f"{name} split has {len(unlabeled)} ids without a gold label, "
                                f"first {unlabeled[0]!r}")
        parts[name] = chosen
    return DatasetSplit(**parts)


def _check_weight(w: float) -> float:
    if not 0.0 <= w <= 1.0:
        raise ContractError(f"fusion weight must lie in [0, 1], got {w}")
    return float(w)


def weighted_average_fuse(img, text, w: float) -> ClassVector:
    """``w * img + (1 - w) * text``."""
    w = _check_weight(w)
    v = w * check_probs(img) + (1.0 - w) * check_probs(text)
    return ClassVector(tuple(v))


def weighted_average_predict(X: np.ndarray, w: float) -> np.ndarray:
    """Argmax class of the weighted average for each fused row."""
    w = _check_weight(w)
    X = np.asarray(X, dtype=np.float64)
    return argmax_rows(w * X[:, :3] + (1.0 - w) * X[:, 3:])


def tune_weight(X, y) -> float:
    """Grid ``w in {0.00, ..., 1.00}`` maximizing accuracy; the smallest ``w`` wins ties."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ContractError("cannot tune the fusion weight on an empty validation set")
    scores = [accuracy(weighted_average_predict(X, w), y) for w in WEIGHT_GRID]
    return float(WEIGHT_GRID[int(np.argmax(scores))])


def one_hot_inputs(X) -> np.ndarray:
    """Replace each modality's probabilities by the one-hot of its argmax."""
    X = np.asarray(X, dtype=np.float64)
    eye = np.eye(N_CLASSES)
    return np.hstack([eye[argmax_rows(X[:, :3])], eye[argmax_rows(X[:, 3:])]])


# --- synthetic modalities ----------------------------------------------------

DEFAULT_CONCENTRATION = 4.0


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 6000
    n_valid: int = 2000
    n_test: int = 2000
    acc_img: float = 0.70
    acc_text: float = 0.70
    concentration: float = DEFAULT_CONCENTRATION
    seed: int = 0

    def __post_init__(self):
        for name in ("acc_img", "acc_text"):
            acc = getattr(self, name)
            if not 1.0 / 3.0 < acc <= 1.0:
                raise ContractError(f"{name} must lie in (1/3, 1], got {acc}")
        for name in ("n_train", "n_valid", "n_test"):
            n = getattr(self, name)
            if isinstance(n, bool) or int(n) != n or n < 30 * N_CLASSES:
                raise ContractError(f"{name} must be an integer >= {30 * N_CLASSES}, got {n}")
        if not self.concentration > 0 or not np.isfinite(self.concentration):
            raise ContractError(f"concentration must be positive, got {self.concentration}")
        if isinstance(self.seed, bool) or int(self.seed) != self.seed or self.seed < 0:
            raise ContractError(f"seed must be a non-negative integer, got {self.seed}")

    @property
    def sizes(self) -> dict:
        return {"train": self.n_train, "valid": self.n_valid, "test": self.n_test}

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def top_probability(mass: float, concentration: float) -> float:
    """P(component 0 is the largest) for ``Dirichlet(k*m, k*(1-m)/2, k*(1-m)/2)``.

    With independent gammas ``G0 ~ Gamma(a)``, ``G1, G2 ~ Gamma(b)`` this is
    ``integral f_a(x) F_b(x)^2 dx``.
    """
    a = concentration * mass
    b = concentration * (1.0 - mass) / 2.0
    if b <= 0:
        return 1.0
    lo, hi = stats.gamma.ppf([1e-14, 1.0 - 1e-14], a)
    val, _ = integrate.quad(lambda x: stats.gamma.pdf(x, a) * stats.gamma.cdf(x, b) ** 2,
                            lo, hi, limit=200, epsabs=1e-13, epsrel=1e-11)
    return float(val)


# Largest top-class probability the mean is calibrated to; a target accuracy of
# 1 is met by the conditioning step instead.
_MAX_CALIBRATED = 0.999


@lru_cache(maxsize=64)
def calibrate_mass(acc: float, concentration: float) -> float:
    """Dirichlet mean mass ``m`` on the gold class whose argmax hit rate equals ``acc``."""
    target = min(acc, _MAX_CALIBRATED)
    return float(optimize.brentq(lambda m: top_probability(m, concentration) - target,
                                 1.0 / 3.0, 1.0 - 1e-12, xtol=1e-14))


@dataclass(frozen=True)
class NoiseModel:
    """One modality's emission law given the gold class ``y``.

    The emitted argmax ``c`` equals ``y`` with probability ``acc`` and is
    otherwise uniform over the two other classes.  The vector is then drawn from
    ``Dirichlet(kappa * mu_y)`` conditioned on its argmax being ``c``, where
    ``mu_y`` puts mass ``m`` on ``y`` and splits the rest evenly.  ``m`` is
    calibrated so the unconditioned argmax already hits ``y`` at rate ``acc``.
    Centering on the gold class keeps information about ``y`` in the full
    vector, which is what lets two modalities fuse above either alone.
    """

    acc: float
    concentration: float

    @property
    def mass(self) -> float:
        return calibrate_mass(self.acc, self.concentration)

    @property
    def top_rate(self) -> float:
        return top_probability(self.mass, self.concentration)

    def alphas(self, y: int) -> np.ndarray:
        m, k = self.mass, self.concentration
        a = np.full(N_CLASSES, k * (1.0 - m) / 2.0)
        a[y] = k * m
        return a

    def sample(self, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        n = len(y)
        wrong = rng.random(n) >= self.acc
        shift = rng.integers(1, N_CLASSES, size=n)
        target = np.where(wrong, (y + shift) % N_CLASSES, y)
        alpha = np.stack([self.alphas(k) for k in range(N_CLASSES)])[y]
        out = np.empty((n, N_CLASSES))
        todo = np.arange(n)
        while todo.size:
            g = rng.standard_gamma(alpha[todo])
            s = g.sum(axis=1)
            ok = (s > 0) & (np.argmax(g, axis=1) == target[todo])
            out[todo[ok]] = g[ok] / s[ok, None]
            todo = todo[~ok]
        return out

    def log_likelihood(self, V: np.ndarray) -> np.ndarray:
        """``log p(v | y)`` up to a term constant in ``y``; shape ``(n, 3)``."""
        V = np.asarray(V, dtype=np.float64)
        logv = np.log(np.maximum(V, np.finfo(float).tiny))
        c = argmax_rows(V)
        q = self.top_rate
        out = np.empty((len(V), N_CLASSES))
        with np.errstate(divide="ignore"):
            hit = np.log(self.acc) - np.log(q)
            miss = np.log(1.0 - self.acc) - np.log(1.0 - q)
        for y in range(N_CLASSES):
            alpha = self.alphas(y)
            dens = logv @ (alpha - 1.0) - special.gammaln(alpha).sum()
            out[:, y] = dens + np.where(c == y, hit, miss)
        return out


@dataclass
class SyntheticData:
    config: SynthConfig
    image: ModalityPredictions
    text: ModalityPredictions
    gold: dict
    splits: dict

    def features(self) -> list:
        feats, _ = join_modalities(self.image, self.text, self.gold)
        return feats

    def split(self) -> DatasetSplit:
        return build_split(self.features(), self.splits)

    def write(self, out_dir) -> dict:
        """Write ``image.jsonl``, ``text.jsonl``, ``gold.jsonl`` and ``splits.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "image": out / "image.jsonl",
            "text": out / "text.jsonl",
            "gold": out / "gold.jsonl",
            "splits": out / "splits.json",
        }
        self.image.write_jsonl(paths["image"])
        self.text.write_jsonl(paths["text"])
        write_gold(self.gold, paths["gold"])
        write_splits(self.splits, paths["splits"])
        return paths


def noise_models(config: SynthConfig) -> tuple[NoiseModel, NoiseModel]:
    return (NoiseModel(config.acc_img, config.concentration),
            NoiseModel(config.acc_text, config.concentration))


def generate_synthetic(config: SynthConfig) -> SyntheticData:
    """Labels balanced within each split, modalities drawn independently given the label."""
    img_noise, text_noise = noise_models(config)
    img_rows, text_rows, gold, splits = {}, {}, {}, {}
    for s, (name, n) in enumerate(config.sizes.items()):
        y = stream_rng(config.seed, s, 0).permutation(np.arange(n) % N_CLASSES)
        V_img = img_noise.sample(y, stream_rng(config.seed, s, 1))
        V_text = text_noise.sample(y, stream_rng(config.seed, s, 2))
        ids = [f"{name}-{i:06d}" for i in range(n)]
        splits[name] = ids
        for i, rid in enumerate(ids):
            img_rows[rid] = ClassVector(tuple(V_img[i]))
            text_rows[rid] = ClassVector(tuple(V_text[i]))
            gold[rid] = Polarity(int(y[i]))
    return SyntheticData(config, ModalityPredictions("image", img_rows),
                         ModalityPredictions("text", text_rows), gold, splits)


def bayes_posterior(X, config: SynthConfig) -> np.ndarray:
    """Exact posterior over the gold class under the generator's noise model."""
    X = np.asarray(X, dtype=np.float64)
    img_noise, text_noise = noise_models(config)
    logp = img_noise.log_likelihood(X[:, :3]) + text_noise.log_likelihood(X[:, 3:])
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    return p / p.sum(axis=1, keepdims=True)


def bayes_accuracy(X, y, config: SynthConfig) -> float:
    """Accuracy of the Bayes-optimal fused decision on ``(X, y)``."""
    return accuracy(argmax_rows(bayes_posterior(X, config)), y)


# --- end-to-end --------------------------------------------------------------

SVM_BASELINE = {"reg_lambda": 1e-4, "epochs": 300, "lr": 0.5}


@dataclass
class FusionResult:
    report: dict
    leaderboard: Leaderboard
    model: object
    svm: object

    def report_json(self) -> str:
        return json.dumps(self.report, indent=2) + "\n"


def fuse_train_evaluate(split: DatasetSplit, budget: SearchBudget = SearchBudget(),
                        seed: int = 0, *, one_hot: bool = False,
                        workers: Optional[int] = None) -> FusionResult:
    """Search a fusion model on train/valid, then score it and the baselines once on test."""
    X_tr, y_tr = split.arrays("train")
    X_va, y_va = split.arrays("valid")
    encode = one_hot_inputs if one_hot else (lambda X: X)
    board = random_search(encode(X_tr), y_tr, encode(X_va), y_va, budget, seed, workers)
    best = select_best(board)
    w_star = tune_weight(X_va, y_va)
    svm = fit(ModelSpec(Family.LINEAR_SVM, SVM_BASELINE, seed), encode(X_tr), y_tr)

    # selection is frozen; the test split is read only from here on
    X_te, y_te = split.arrays("test")
    preds = {
        "selected": argmax_rows(predict_proba(best.model, encode(X_te))),
        "image_only": argmax_rows(X_te[:, :3]),
        "text_only": argmax_rows(X_te[:, 3:]),
        "weighted_avg": weighted_average_predict(X_te, w_star),
        "svm": argmax_rows(predict_proba(svm, encode(X_te))),
    }
    report = {
        "test_accuracy": {k: accuracy(p, y_te) for k, p in preds.items()},
        "confusion": {k: confusion(p, y_te).to_list() for k, p in preds.items()},
        "selected_trial": {
            "index": best.index,
            "family": best.family,
            "hyperparams": best.hyperparams,
            "objective": best.objective,
        },
        "w_star": w_star,
        "input_encoding": "one_hot" if one_hot else "probabilities",
        "master_seed": seed,
        "n": {"train": len(y_tr), "valid": len(y_va), "test": len(y_te)},
    }
    return FusionResult(report, board, best.model, svm)


# --- bundled dataset ---------------------------------------------------------

BUNDLED_CONFIG = SynthConfig(n_train=300, n_valid=150, n_test=150, acc_img=0.7, acc_text=0.7,
                             seed=2024)
BUNDLED_FILE = "bundled_fusion.jsonl"


def bundled_rows(data: SyntheticData) -> list:
    """One JSON object per example: id, split, both class vectors and the label."""
    split_of = {rid: name for name, ids in data.splits.items() for rid in ids}
    return [{"id": rid, "split": split_of[rid], "image": list(vec.probs),
             "text": list(data.text.rows[rid].probs), "label": int(data.gold[rid])}
            for rid, vec in data.image.rows.items()]


def load_bundled() -> DatasetSplit:
    """The small dataset shipped with the package (generated from ``BUNDLED_CONFIG``)."""
    from importlib import resources

    text = resources.files("latefuse").joinpath("data", BUNDLED_FILE).read_text("utf-8")
    parts: dict = {name: [] for name in SPLITS}
    for line in text.splitlines():
        row = json.loads(line)
        parts[row["split"]].append(
            FusedFeature(row["id"], tuple(row["image"]) + tuple(row["text"]), row["label"]))
    return DatasetSplit(**parts)
