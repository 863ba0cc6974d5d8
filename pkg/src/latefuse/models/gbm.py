"""Multiclass gradient boosting with first- or second-order leaf solvers.

Each round fits one regression tree per class to the multinomial deviance
gradient ``g = p - y``.  The first-order variant uses ``h = 1`` and no
regularization, so leaves hold the mean negative gradient.  The second-order
variant uses ``h = p (1 - p)`` and leaves ``-G / (H + lambda)``.  Scores are
updated with shrinkage ``learning_rate`` and mapped to probabilities by softmax.

Trees split on quantile-binned features (at most ``MAX_BINS`` bins per
feature); thresholds are stored as raw feature values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .spec import Family, ModelSpec, stream_rng
from .trees import SPLIT_TOL, Tree

MAX_BINS = 128
# Smallest hessian sum a second-order child may carry (XGBoost's default).
MIN_CHILD_WEIGHT = 1.0
PRIOR_FLOOR = 1e-6


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    """Newton leaf value ``-G / (H + lambda)``."""
    return -G / (H + reg_lambda)


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def deviance(scores: np.ndarray, y: np.ndarray) -> float:
    """Mean multinomial deviance (cross-entropy) of softmax scores."""
    z = scores - scores.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(y)), y].mean())


def make_bins(X: np.ndarray, max_bins: int = MAX_BINS) -> tuple[np.ndarray, list[np.ndarray]]:
    """Quantile bin edges per feature and the binned matrix.

    Bin ``b`` holds values in ``(edges[b-1], edges[b]]``.  With few distinct
    values the edges are the midpoints between them, so splits stay exact.
    """
    edges = []
    binned = np.empty(X.shape, dtype=np.int64)
    for f in range(X.shape[1]):
        u = np.unique(X[:, f])
        if len(u) <= max_bins:
            e = u[:-1] + (u[1:] - u[:-1]) / 2
        else:
            e = np.unique(np.quantile(X[:, f], np.arange(1, max_bins) / max_bins))
            e = e[e < u[-1]]
        edges.append(e)
        binned[:, f] = np.searchsorted(e, X[:, f], side="left")
    return binned, edges


@numba.njit(cache=True)
def _hist_tree(binned, n_bins, rows, g, h, max_depth, lam, min_child_weight):
    n_feat = binned.shape[1]
    max_b = 1
    for f in range(n_feat):
        max_b = max(max_b, n_bins[f])
    cap = 2 ** (max_depth + 1)
    feature = np.full(cap, -1, dtype=np.int64)
    split_bin = np.zeros(cap, dtype=np.int64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    node_of = np.zeros(rows.shape[0], dtype=np.int64)
    n_nodes = 1
    level_lo = 0
    for depth in range(max_depth + 1):
        level_hi = n_nodes
        n_level = level_hi - level_lo
        if depth == max_depth:
            # deepest level: leaf values only, no split search
            tot = np.zeros((n_level, 2))
            for r in range(rows.shape[0]):
                slot = node_of[r] - level_lo
                if slot >= 0:
                    tot[slot, 0] += g[rows[r]]
                    tot[slot, 1] += h[rows[r]]
            for slot in range(n_level):
                G = tot[slot, 0]
                H = tot[slot, 1]
                value[level_lo + slot] = -G / (H + lam) if H + lam > 0 else 0.0
            break
        # (gradient, hessian, count) sums per node, feature and bin
        hist = np.zeros((n_level, n_feat, max_b, 3))
        for r in range(rows.shape[0]):
            slot = node_of[r] - level_lo
            if slot < 0:
                continue
            j = rows[r]
            gj = g[j]
            hj = h[j]
            for f in range(n_feat):
                cell = hist[slot, f, binned[j, f]]
                cell[0] += gj
                cell[1] += hj
                cell[2] += 1.0
        split_any = False
        for slot in range(n_level):
            node = level_lo + slot
            G = 0.0
            H = 0.0
            C = 0.0
            for b in range(n_bins[0]):
                G += hist[slot, 0, b, 0]
                H += hist[slot, 0, b, 1]
                C += hist[slot, 0, b, 2]
            value[node] = -G / (H + lam) if H + lam > 0 else 0.0
            if C < 2:
                continue
            parent = G * G / (H + lam) if H + lam > 0 else 0.0
            best = parent
            best_f = -1
            best_b = 0
            for f in range(n_feat):
                GL = 0.0
                HL = 0.0
                CL = 0.0
                for b in range(n_bins[f] - 1):
                    GL += hist[slot, f, b, 0]
                    HL += hist[slot, f, b, 1]
                    CL += hist[slot, f, b, 2]
                    if CL < 1 or C - CL < 1:
                        continue
                    HR = H - HL
                    if HL < min_child_weight or HR < min_child_weight:
                        continue
                    GR = G - GL
                    score = GL * GL / (HL + lam) + GR * GR / (HR + lam)
                    if score > best + SPLIT_TOL * max(1.0, abs(best)):
                        best = score
                        best_f = f
                        best_b = b
            if best_f >= 0:
                feature[node] = best_f
                split_bin[node] = best_b
                left[node] = n_nodes
                right[node] = n_nodes + 1
                n_nodes += 2
                split_any = True
        if not split_any:
            break
        for r in range(rows.shape[0]):
            node = node_of[r]
            if node < level_lo:
                continue
            f = feature[node]
            if f < 0:
                node_of[r] = -1
            elif binned[rows[r], f] <= split_bin[node]:
                node_of[r] = left[node]
            else:
                node_of[r] = right[node]
        level_lo = level_hi
    return feature[:n_nodes], split_bin[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


def build_hist_tree(binned, edges, rows, g, h, *, max_depth, reg_lambda,
                    min_child_weight) -> tuple[Tree, np.ndarray]:
    """Regression tree on binned features; also returns each node's split bin."""
    n_bins = np.array([len(e) + 1 for e in edges], dtype=np.int64)
    feature, split_bin, left, right, value = _hist_tree(
        binned, n_bins, rows, g, h, max_depth, reg_lambda, min_child_weight)
    threshold = np.array([edges[f][b] if f >= 0 else 0.0 for f, b in zip(feature, split_bin)])
    return Tree.from_arrays(feature, threshold, left, right, value), split_bin


@dataclass
class BoostState:
    """Everything a boosting round reads and updates."""

    second_order: bool
    learning_rate: float
    max_depth: int
    subsample: float
    reg_lambda: float
    init: np.ndarray
    scores: np.ndarray
    binned: np.ndarray
    edges: list
    rng: np.random.Generator
    rounds: list = field(default_factory=list)
    trace: list = field(default_factory=list)


def init_state(spec: ModelSpec, X: np.ndarray, y: np.ndarray, n_classes: int = 3) -> BoostState:
    hp = spec.hyperparams
    prior = np.bincount(y, minlength=n_classes) / len(y)
    init = np.log(np.maximum(prior, PRIOR_FLOOR))
    binned, edges = make_bins(X)
    second = spec.family is Family.GBM_SECOND_ORDER
    return BoostState(
        second_order=second,
        learning_rate=hp["learning_rate"],
        max_depth=hp["max_depth"],
        subsample=hp["subsample"],
        reg_lambda=hp.get("reg_lambda", 0.0) if second else 0.0,
        init=init,
        scores=np.tile(init, (len(y), 1)),
        binned=binned,
        edges=edges,
        rng=stream_rng(spec.seed, 0),
    )


def gbm_round(state: BoostState, y: np.ndarray) -> BoostState:
    """Add one tree per class fitted at the current scores."""
    n, K = state.scores.shape
    p = softmax(state.scores)
    onehot = np.eye(K)[y]
    if state.subsample < 1.0:
        k = max(1, int(round(state.subsample * n)))
        rows = np.sort(state.rng.choice(n, size=k, replace=False))
    else:
        rows = np.arange(n)
    grad = p - onehot
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite boosting gradient")
    trees = []
    update = np.empty_like(state.scores)
    for c in range(K):
        g = np.ascontiguousarray(grad[:, c])
        if state.second_order:
            h = p[:, c] * (1.0 - p[:, c])
            mcw = MIN_CHILD_WEIGHT
        else:
            h = np.ones(n)
            mcw = 0.0
        tree, split_bin = build_hist_tree(state.binned, state.edges, rows, g, h,
                                          max_depth=state.max_depth,
                                          reg_lambda=state.reg_lambda, min_child_weight=mcw)
        trees.append(tree)
        # route training rows by bin index: same result as comparing raw values
        leaves = _apply_binned(state.binned, tree["feature"], split_bin, tree["left"],
                               tree["right"])
        update[:, c] = tree["value"][leaves, 0]
    state.scores = state.scores + state.learning_rate * update
    state.rounds.append(trees)
    return state


@numba.njit(cache=True)
def _apply_binned(binned, feature, split_bin, left, right):
    out = np.empty(binned.shape[0], dtype=np.int64)
    for r in range(binned.shape[0]):
        node = 0
        while feature[node] >= 0:
            if binned[r, feature[node]] <= split_bin[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out


def fit_gbm(spec: ModelSpec, X, y) -> tuple[dict, dict]:
    y = np.asarray(y, dtype=np.int64)
    state = init_state(spec, X, y)
    trace = [deviance(state.scores, y)]
    for _ in range(spec.hyperparams["n_rounds"]):
        gbm_round(state, y)
        trace.append(deviance(state.scores, y))
    params = {"init": state.init, "rounds": state.rounds}
    return params, {"deviance": trace}


def predict_scores(params: dict, learning_rate: float, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    scores = np.tile(params["init"], (X.shape[0], 1))
    for trees in params["rounds"]:
        for c, tree in enumerate(trees):
            scores[:, c] += learning_rate * tree.predict(X)[:, 0]
    return scores


def predict_gbm(params: dict, learning_rate: float, X) -> np.ndarray:
    return softmax(predict_scores(params, learning_rate, X))
