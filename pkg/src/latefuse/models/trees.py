"""Decision trees: exact CART splitting, random forests and extra-trees.

One breadth-first builder serves two criteria:

* classification - maximize ``sum(c_L**2)/n_L + sum(c_R**2)/n_R``, which is
  the same as minimizing the weighted Gini impurity of the children;
* regression on gradient statistics - maximize
  ``G_L**2/(H_L+lam) + G_R**2/(H_R+lam)``.  Boosting uses this with ``h = 1``
  (first order, squared error on the negative gradient) or ``h = p(1-p)``
  (second order).

Samples reach the left child when ``x[feature] <= threshold``.  Ties between
equally good splits go to the lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .spec import Family, ModelSpec, stream_rng, stream_u32

LEAF = -1
# Relative margin a candidate must beat the incumbent by to replace it.
SPLIT_TOL = 1e-10


@numba.njit(cache=True)
def _better(score, best):
    return score > best + SPLIT_TOL * max(1.0, abs(best))


@numba.njit(cache=True)
def _build(X, order_in, y, g, h, regression, n_out, max_depth, min_leaf,
           min_child_weight, lam, max_features, random_splits, seed):
    np.random.seed(seed)
    n_feat = X.shape[1]
    n = order_in.shape[1]
    # Per-feature sorted copies of the values and targets, partitioned in place
    # as nodes split, so every scan below reads memory sequentially.
    order = order_in.copy()
    vals = np.empty((n_feat, n))
    ys = np.empty((n_feat, n), dtype=np.int64)
    gs = np.empty((n_feat, n))
    hs = np.empty((n_feat, n))
    for f in range(n_feat):
        for i in range(n):
            j = order[f, i]
            vals[f, i] = X[j, f]
            if regression:
                gs[f, i] = g[j]
                hs[f, i] = h[j]
            else:
                ys[f, i] = y[j]
    go_left = np.zeros(X.shape[0], dtype=np.int64)
    buf_o = np.empty(n, dtype=np.int64)
    buf_v = np.empty(n)
    buf_y = np.empty(n, dtype=np.int64)
    buf_g = np.empty(n)
    buf_h = np.empty(n)
    cap = 2 * n + 1
    feature = np.empty(cap, dtype=np.int64)
    threshold = np.empty(cap)
    left = np.empty(cap, dtype=np.int64)
    right = np.empty(cap, dtype=np.int64)
    value = np.empty((cap, n_out))
    q_start = np.empty(cap, dtype=np.int64)
    q_end = np.empty(cap, dtype=np.int64)
    q_depth = np.empty(cap, dtype=np.int64)
    q_start[0] = 0
    q_end[0] = n
    q_depth[0] = 0
    n_nodes = 1
    feats = np.arange(n_feat)
    cand = np.arange(n_feat)
    cnt = np.zeros(n_out)
    cl = np.zeros(n_out)

    for node in range(cap):
        if node >= n_nodes:
            break
        s = q_start[node]
        e = q_end[node]
        m = e - s
        feature[node] = -1
        threshold[node] = 0.0
        left[node] = -1
        right[node] = -1
        G = 0.0
        H = 0.0
        parent = 0.0
        pure = False
        for k in range(n_out):
            cnt[k] = 0.0
        for i in range(s, e):
            if regression:
                G += gs[0, i]
                H += hs[0, i]
            else:
                cnt[ys[0, i]] += 1.0
        if regression:
            value[node, 0] = -G / (H + lam) if H + lam > 0 else 0.0
            parent = G * G / (H + lam) if H + lam > 0 else 0.0
        else:
            for k in range(n_out):
                value[node, k] = cnt[k] / m
                if cnt[k] == m:
                    pure = True
        if q_depth[node] >= max_depth or m < 2 * min_leaf:
            continue
        if not regression and pure:
            continue

        # candidate features: partial Fisher-Yates, then ascending order
        n_cand = n_feat
        if max_features < n_feat:
            n_cand = max_features
            for a in range(max_features):
                b = a + int(np.random.random() * (n_feat - a))
                if b >= n_feat:
                    b = n_feat - 1
                t = feats[a]
                feats[a] = feats[b]
                feats[b] = t
            cand[:n_cand] = np.sort(feats[:n_cand])

        best = -np.inf
        best_f = -1
        best_thr = 0.0
        thr = 0.0
        for c in range(n_cand):
            f = cand[c]
            if random_splits:
                lo = vals[f, s]
                hi = vals[f, e - 1]
                u = np.random.random()
                if not hi > lo:
                    continue
                thr = lo + u * (hi - lo)
                if thr >= hi:
                    thr = lo
            GL = 0.0
            HL = 0.0
            for k in range(n_out):
                cl[k] = 0.0
            for i in range(s, e - 1):
                xj = vals[f, i]
                if random_splits and xj > thr:
                    break
                if regression:
                    GL += gs[f, i]
                    HL += hs[f, i]
                else:
                    cl[ys[f, i]] += 1.0
                xn = vals[f, i + 1]
                if random_splits:
                    if xn <= thr:
                        continue
                elif not xn > xj:
                    continue
                nl = i - s + 1
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                if regression:
                    HR = H - HL
                    if HL < min_child_weight or HR < min_child_weight:
                        continue
                    GR = G - GL
                    score = GL * GL / (HL + lam) + GR * GR / (HR + lam)
                else:
                    sl = 0.0
                    sr = 0.0
                    for k in range(n_out):
                        cr = cnt[k] - cl[k]
                        sl += cl[k] * cl[k]
                        sr += cr * cr
                    score = sl / nl + sr / nr
                if best_f < 0 or _better(score, best):
                    best = score
                    best_f = f
                    if random_splits:
                        best_thr = thr
                    else:
                        mid = xj + (xn - xj) / 2.0
                        best_thr = mid if mid < xn else xj

        if best_f < 0:
            continue
        if regression and not _better(best, parent):
            continue

        for i in range(s, e):
            go_left[order[best_f, i]] = vals[best_f, i] <= best_thr
        # stable, branch-free partition of every feature's arrays
        n_left = 0
        for f in range(n_feat):
            a = s
            b = 0
            for i in range(s, e):
                j = order[f, i]
                gl = go_left[j]
                order[f, a] = j
                buf_o[b] = j
                vals[f, a] = vals[f, i]
                buf_v[b] = vals[f, i]
                if regression:
                    gs[f, a] = gs[f, i]
                    buf_g[b] = gs[f, i]
                    hs[f, a] = hs[f, i]
                    buf_h[b] = hs[f, i]
                else:
                    ys[f, a] = ys[f, i]
                    buf_y[b] = ys[f, i]
                a += gl
                b += 1 - gl
            for i in range(b):
                order[f, a + i] = buf_o[i]
                vals[f, a + i] = buf_v[i]
                if regression:
                    gs[f, a + i] = buf_g[i]
                    hs[f, a + i] = buf_h[i]
                else:
                    ys[f, a + i] = buf_y[i]
            n_left = a - s
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        q_start[n_nodes] = s
        q_end[n_nodes] = s + n_left
        q_depth[n_nodes] = q_depth[node] + 1
        q_start[n_nodes + 1] = s + n_left
        q_end[n_nodes + 1] = e
        q_depth[n_nodes + 1] = q_depth[node] + 1
        n_nodes += 2

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy())


@numba.njit(cache=True)
def _apply(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out


def presort(X: np.ndarray) -> np.ndarray:
    """Per-feature sample orderings, shape ``(n_features, n_samples)``."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


def subset_order(order: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Restrict presorted orderings to a multiset of samples.

    ``counts[j]`` is how often sample ``j`` appears (0 drops it, >1 for
    bootstrap duplicates).
    """
    return np.ascontiguousarray(np.stack([np.repeat(row, counts[row]) for row in order]))


class Tree(dict):
    """Flat node arrays: ``feature`` (-1 at leaves), ``threshold``, ``left``, ``right``, ``value``."""

    @property
    def n_nodes(self) -> int:
        return len(self["feature"])

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _apply(np.ascontiguousarray(X, dtype=np.float64), self["feature"],
                      self["threshold"], self["left"], self["right"])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self["value"][self.apply(X)]

    @classmethod
    def from_arrays(cls, feature, threshold, left, right, value) -> "Tree":
        return cls(
            feature=np.asarray(feature, dtype=np.int64),
            threshold=np.asarray(threshold, dtype=np.float64),
            left=np.asarray(left, dtype=np.int64),
            right=np.asarray(right, dtype=np.int64),
            value=np.asarray(value, dtype=np.float64).reshape(len(feature), -1),
        )


_DUMMY_F = np.zeros(0)
_DUMMY_I = np.zeros(0, dtype=np.int64)


def build_classifier_tree(X, y, order, *, n_classes=3, max_depth=6, min_samples_leaf=1,
                          max_features=None, random_splits=False, seed=0) -> Tree:
    X = np.ascontiguousarray(X, dtype=np.float64)
    n_feat = X.shape[1]
    mf = n_feat if max_features is None else int(max_features)
    arrays = _build(X, order, np.asarray(y, dtype=np.int64), _DUMMY_F, _DUMMY_F, False,
                    n_classes, max_depth, min_samples_leaf, 0.0, 0.0, mf, random_splits,
                    seed)
    return Tree.from_arrays(*arrays)


def build_regression_tree(X, g, h, order, *, max_depth=3, min_child_weight=0.0, reg_lambda=0.0,
                          seed=0) -> Tree:
    X = np.ascontiguousarray(X, dtype=np.float64)
    arrays = _build(X, order, _DUMMY_I, np.asarray(g, dtype=np.float64),
                    np.asarray(h, dtype=np.float64), True, 1, max_depth, 1,
                    min_child_weight, reg_lambda, X.shape[1], False, seed)
    return Tree.from_arrays(*arrays)


def n_split_features(setting, n_features: int) -> int:
    if setting == "sqrt":
        return max(1, int(math.floor(math.sqrt(n_features))))
    return max(1, int(math.floor(float(setting) * n_features)))


def fit_cart(spec: ModelSpec, X, y) -> dict:
    hp = spec.hyperparams
    tree = build_classifier_tree(X, y, presort(X), max_depth=hp["max_depth"],
                                 min_samples_leaf=hp["min_samples_leaf"],
                                 seed=stream_u32(spec.seed, 0))
    return {"tree": tree}


def fit_forest(spec: ModelSpec, X, y) -> dict:
    """Random forest or extremely randomized trees; tree ``t`` draws only from stream ``(seed, t)``."""
    hp = spec.hyperparams
    n = X.shape[0]
    order = presort(X)
    mf = n_split_features(hp["feature_subsample"], X.shape[1])
    random_splits = spec.family is Family.EXTRA_TREES
    trees = []
    for t in range(hp["n_trees"]):
        if hp["bootstrap"]:
            rng = stream_rng(spec.seed, t, 0)
            counts = np.bincount(rng.integers(0, n, size=n), minlength=n)
            tree_order = subset_order(order, counts)
        else:
            tree_order = order
        trees.append(build_classifier_tree(
            X, y, tree_order, max_depth=hp["max_depth"], max_features=mf,
            random_splits=random_splits, seed=stream_u32(spec.seed, t, 1)))
    return {"trees": trees}


def predict_cart(params: dict, X) -> np.ndarray:
    return params["tree"].predict(X)


def predict_forest(params: dict, X) -> np.ndarray:
    total = np.zeros((X.shape[0], params["trees"][0]["value"].shape[1]))
    for tree in params["trees"]:
        total += tree.predict(X)
    return total / len(params["trees"])
