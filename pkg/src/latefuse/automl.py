"""Random search over the model zoo, stacked ensembles and best-model selection.

Every trial's randomness derives from ``(master_seed, trial_index)`` alone and
results are assembled in index order, so a trial-count budget gives the same
leaderboard no matter how many worker processes run the trials.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import N_CLASSES, ContractError, accuracy, check_fit_ready
from .models import SEARCH_FAMILIES, Family, ModelSpec, TrainedModel, fit, predict_proba
from .models.ensemble import EnsembleKind, StackedEnsemble
from .models.spec import MAX_SEED, sample_hyperparams, stream_rng

log = logging.getLogger(__name__)

LEADERBOARD_SCHEMA_VERSION = 1
N_FOLDS = 5
FAILED = -1.0
# Meta-learner: multinomial GLM with a light L2 penalty.
META_SPEC = ModelSpec(Family.GLM, {"reg_lambda": 1e-3, "alpha": 0.0, "epochs": 400, "lr": 0.05})
# Stream keys below the trial indices' range, reserved for fold assignment.
_FOLD_STREAM = 2**32


@dataclass(frozen=True)
class SearchBudget:
    max_trials: Optional[int] = 60
    max_wall_clock: Optional[float] = None

    def __post_init__(self):
        if self.max_trials is None and self.max_wall_clock is None:
            raise ContractError("a search budget needs max_trials or max_wall_clock")
        if self.max_trials is not None and self.max_trials < 1:
            raise ContractError("max_trials must be positive")
        if self.max_wall_clock is not None and not self.max_wall_clock > 0:
            raise ContractError("max_wall_clock must be positive")

    def to_dict(self) -> dict:
        return {"max_trials": self.max_trials, "max_wall_clock": self.max_wall_clock}


@dataclass
class Trial:
    index: int
    family: str
    hyperparams: dict
    seed: int
    objective: float
    fit_seconds: float
    model: object = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.objective >= 0

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "index": self.index,
            "family": self.family,
            "hyperparams": dict(self.hyperparams),
            "seed": self.seed,
            "objective": self.objective,
            "fit_seconds": self.fit_seconds if include_timing else None,
        }
        if self.error is not None:
            out["error"] = self.error
        return out


@dataclass
class Leaderboard:
    master_seed: int
    budget: SearchBudget
    trials: list = field(default_factory=list)
    ensembles: list = field(default_factory=list)

    @property
    def all_trials(self) -> list:
        return list(self.trials) + list(self.ensembles)

    def to_dict(self, include_timing: bool = False) -> dict:
        best = select_best(self)
        return {
            "schema_version": LEADERBOARD_SCHEMA_VERSION,
            "master_seed": self.master_seed,
            "budget": self.budget.to_dict(),
            "trials": [t.to_dict(include_timing) for t in self.all_trials],
            "selected_index": best.index,
        }

    def to_json(self, include_timing: bool = False) -> str:
        """Leaderboard file contents.

        Timings are written as ``null`` unless requested, since wall-clock
        durations would make otherwise identical runs differ.
        """
        return json.dumps(self.to_dict(include_timing), indent=2) + "\n"


def sample_spec(master_seed: int, trial_index: int) -> ModelSpec:
    """Draw a family uniformly from the search space, then its hyperparameters."""
    rng = stream_rng(master_seed, trial_index)
    family = SEARCH_FAMILIES[int(rng.integers(len(SEARCH_FAMILIES)))]
    hp = sample_hyperparams(family, rng)
    seed = int(rng.integers(0, MAX_SEED, dtype=np.uint64, endpoint=True))
    return ModelSpec(family, hp, seed)


def select_best(board) -> Trial:
    """Highest objective; earliest index on ties.  Failed trials never win."""
    trials = board.all_trials if isinstance(board, Leaderboard) else list(board)
    ok = [t for t in trials if t.ok]
    if not ok:
        raise ContractError("no successful trial to select")
    return max(ok, key=lambda t: (t.objective, -t.index))


def stratified_folds(y: np.ndarray, n_folds: int, seed: int) -> np.ndarray:
    """Fold id per example, shuffling each class separately."""
    y = np.asarray(y)
    folds = np.empty(len(y), dtype=np.int64)
    rng = stream_rng(seed, _FOLD_STREAM)
    for k in range(N_CLASSES):
        idx = np.flatnonzero(y == k)
        if len(idx) < n_folds:
            raise ContractError(
                f"stacking needs at least {n_folds} training examples of class {k}, "
                f"found {len(idx)}"
            )
        folds[rng.permutation(idx)] = np.arange(len(idx)) % n_folds
    return folds


# --- worker-side state -------------------------------------------------------

_DATA: dict = {}


def _init_worker(X, y, Xv, yv):
    _DATA.update(X=X, y=y, Xv=Xv, yv=yv)


def _fit_trial(index: int, spec: ModelSpec):
    start = time.perf_counter()
    try:
        model = fit(spec, _DATA["X"], _DATA["y"])
        pred = np.argmax(predict_proba(model, _DATA["Xv"]), axis=1)
        objective = accuracy(pred, _DATA["yv"])
        error = None
    except (ContractError, FloatingPointError, ValueError) as exc:
        model, objective, error = None, FAILED, f"{type(exc).__name__}: {exc}"
    return index, model, objective, time.perf_counter() - start, error


def _oof_fold(key, spec: ModelSpec, folds: np.ndarray, fold: int):
    X, y = _DATA["X"], _DATA["y"]
    train = folds != fold
    try:
        model = fit(spec, X[train], y[train])
        return key, fold, predict_proba(model, X[~train])
    except (ContractError, FloatingPointError, ValueError):
        return key, fold, None


class _Runner:
    """Runs tasks in-process or on a process pool, returning results in submission order."""

    def __init__(self, workers: int, data: tuple):
        self.workers = workers
        self.pool = None
        if workers > 1:
            self.pool = ProcessPoolExecutor(workers, initializer=_init_worker, initargs=data)
        else:
            _init_worker(*data)

    def map(self, fn, arg_lists, deadline: Optional[float] = None) -> list:
        if self.pool is None:
            out = []
            for args in arg_lists:
                if deadline is not None and time.monotonic() >= deadline:
                    break
                out.append(fn(*args))
            return out
        pending, out = [], []
        for args in arg_lists:
            if deadline is not None and time.monotonic() >= deadline:
                break
            pending.append(self.pool.submit(fn, *args))
            while len(pending) >= 2 * self.workers:
                out.append(pending.pop(0).result())
        out.extend(f.result() for f in pending)
        return out

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def resolve_workers(workers: Optional[int] = None) -> int:
    """Explicit count, else ``LATEFUSE_THREADS`` (0 = one per CPU)."""
    if workers is None:
        workers = int(os.environ.get("LATEFUSE_THREADS", "1") or 1)
    if workers <= 0:
        workers = os.cpu_count() or 1
    return workers


def oof_predictions(specs: dict, X, y, folds: np.ndarray, runner: _Runner) -> dict:
    """Out-of-fold class probabilities for each ``{key: spec}``; ``None`` if any fold failed."""
    tasks = [(key, spec, folds, k) for key, spec in specs.items() for k in range(N_FOLDS)]
    oof = {key: np.zeros((len(y), N_CLASSES)) for key in specs}
    failed = set()
    for key, fold, P in runner.map(_oof_fold, tasks):
        if P is None:
            failed.add(key)
        else:
            oof[key][folds == fold] = P
    return {key: (None if key in failed else oof[key]) for key in specs}


def build_stacked_ensemble(base_models: Sequence[TrainedModel], X, y, kind,
                           *, fold_seed: int = 0, oof: Optional[Sequence[np.ndarray]] = None,
                           workers: Optional[int] = None) -> StackedEnsemble:
    """Fit a GLM meta-learner on 5-fold out-of-fold base-model probabilities.

    ``oof`` may supply precomputed out-of-fold matrices (one per base model,
    built with :func:`stratified_folds` on ``fold_seed``).
    """
    if not base_models:
        raise ContractError("a stacked ensemble needs at least one base model")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if oof is None:
        folds = stratified_folds(y, N_FOLDS, fold_seed)
        runner = _Runner(resolve_workers(workers), (X, y, None, None))
        try:
            by_key = oof_predictions({i: m.spec for i, m in enumerate(base_models)}, X, y,
                                     folds, runner)
        finally:
            runner.close()
        oof = [by_key[i] for i in range(len(base_models))]
        if any(o is None for o in oof):
            raise ContractError("a base model failed to refit on a cross-validation fold")
    Z = np.hstack(list(oof))
    meta = fit(META_SPEC, Z, y)
    return StackedEnsemble(EnsembleKind(kind), tuple(base_models), meta)


def _best_of_family(trials: list) -> list:
    best: dict[str, Trial] = {}
    for t in trials:
        cur = best.get(t.family)
        if cur is None or t.objective > cur.objective:
            best[t.family] = t
    return sorted(best.values(), key=lambda t: t.index)


def random_search(X_train, y_train, X_valid, y_valid, budget: SearchBudget = SearchBudget(),
                  master_seed: int = 0, workers: Optional[int] = None) -> Leaderboard:
    """Fit sampled specs on train, score validation accuracy, then add two stacked ensembles."""
    X_train = np.ascontiguousarray(X_train, dtype=np.float64)
    X_valid = np.ascontiguousarray(X_valid, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    y_valid = np.asarray(y_valid, dtype=np.int64)
    check_fit_ready(y_train, "training split")
    check_fit_ready(y_valid, "validation split")
    n_trials = budget.max_trials if budget.max_trials is not None else 10**9
    deadline = None
    if budget.max_wall_clock is not None:
        deadline = time.monotonic() + budget.max_wall_clock

    board = Leaderboard(master_seed, budget)
    runner = _Runner(resolve_workers(workers), (X_train, y_train, X_valid, y_valid))
    try:
        specs = (sample_spec(master_seed, i) for i in range(n_trials))
        results = runner.map(_fit_trial, ((i, s) for i, s in enumerate(specs)), deadline)
        for index, model, objective, seconds, error in results:
            spec = sample_spec(master_seed, index)
            board.trials.append(Trial(index, spec.family.value, dict(spec.hyperparams),
                                      spec.seed, objective, seconds, model, error))
            if error:
                log.warning("trial %d (%s) failed: %s", index, spec.family.value, error)
        ok = [t for t in board.trials if t.ok]
        if not ok:
            raise ContractError("every search trial failed")

        start = time.perf_counter()
        folds = stratified_folds(y_train, N_FOLDS, master_seed)
        oof = oof_predictions({t.index: t.model.spec for t in ok}, X_train, y_train, folds,
                              runner)
        oof_seconds = time.perf_counter() - start
    finally:
        runner.close()

    stackable = [t for t in ok if oof[t.index] is not None]
    members = {
        EnsembleKind.ALL_MODELS: stackable,
        EnsembleKind.BEST_OF_FAMILY: _best_of_family(stackable),
    }
    next_index = len(board.trials)
    for kind, chosen in members.items():
        start = time.perf_counter()
        try:
            ens = build_stacked_ensemble([t.model for t in chosen], X_train, y_train, kind,
                                         oof=[oof[t.index] for t in chosen])
            pred = np.argmax(ens.predict_proba(X_valid), axis=1)
            objective, error = accuracy(pred, y_valid), None
        except ContractError as exc:
            ens, objective, error = None, FAILED, str(exc)
        seconds = time.perf_counter() - start + oof_seconds
        board.ensembles.append(Trial(
            next_index, StackedEnsemble.family,
            {"kind": kind.value, "base_indices": [t.index for t in chosen]},
            0, objective, seconds, ens, error))
        next_index += 1
    return board
