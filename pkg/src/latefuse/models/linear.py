"""Multinomial logistic regression (elastic net) and a one-vs-rest linear SVM."""

from __future__ import annotations

import numba
import numpy as np

from ..core import ContractError
from .optim import Adam


def _check_classes(y: np.ndarray, family: str) -> None:
    if len(np.unique(y)) < 2:
        raise ContractError(f"{family} needs at least two classes in the training set")


def log_softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    return Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))


def glm_loss(W, b, X, y, reg_lambda: float, alpha: float) -> float:
    """Mean cross-entropy plus ``lambda * ((1 - alpha)/2 ||W||^2 + alpha ||W||_1)``.

    The bias is not penalized.
    """
    logp = log_softmax(X @ W.T + b)
    ce = -logp[np.arange(len(y)), y].mean()
    penalty = reg_lambda * ((1 - alpha) / 2 * np.sum(W * W) + alpha * np.abs(W).sum())
    return float(ce + penalty)


@numba.njit(cache=True)
def _cross_entropy_pass(W, b, X, y):
    """Mean softmax cross-entropy and its gradient, one sweep over the rows."""
    n, d = X.shape
    k = W.shape[0]
    gW = np.zeros((k, d))
    gb = np.zeros(k)
    z = np.empty(k)
    ce = 0.0
    for i in range(n):
        zmax = -np.inf
        for c in range(k):
            acc = b[c]
            for j in range(d):
                acc += W[c, j] * X[i, j]
            z[c] = acc
            zmax = max(zmax, acc)
        tot = 0.0
        for c in range(k):
            z[c] = np.exp(z[c] - zmax)
            tot += z[c]
        ce -= np.log(z[y[i]] / tot)
        for c in range(k):
            r = z[c] / tot - (1.0 if c == y[i] else 0.0)
            gb[c] += r
            for j in range(d):
                gW[c, j] += r * X[i, j]
    return ce / n, gW / n, gb / n


def glm_loss_and_gradient(W, b, X, y, reg_lambda: float, alpha: float):
    """:func:`glm_loss` and its gradient w.r.t. ``(W, b)`` from one forward pass.

    The L1 term contributes ``sign(W)``, i.e. subgradient 0 at exactly 0.
    """
    ce, gW, gb = _cross_entropy_pass(W, b, X, y)
    loss = ce + reg_lambda * ((1 - alpha) / 2 * np.sum(W * W) + alpha * np.abs(W).sum())
    gW += reg_lambda * ((1 - alpha) * W + alpha * np.sign(W))
    return float(loss), gW, gb


def glm_gradient(W, b, X, y, reg_lambda: float, alpha: float):
    """Analytic gradient of :func:`glm_loss` w.r.t. ``(W, b)``."""
    _, gW, gb = glm_loss_and_gradient(W, b, X, y, reg_lambda, alpha)
    return gW, gb


def fit_glm(hp: dict, X, y, n_classes: int = 3):
    _check_classes(y, "GLM")
    W = np.zeros((n_classes, X.shape[1]))
    b = np.zeros(n_classes)
    opt = Adam([W, b], lr=hp["lr"])
    lam, alpha = hp["reg_lambda"], hp["alpha"]
    trace = []
    for _ in range(hp["epochs"]):
        loss, gW, gb = glm_loss_and_gradient(W, b, X, y, lam, alpha)
        opt.step([gW, gb])
        trace.append(loss)
    trace.append(glm_loss(W, b, X, y, lam, alpha))
    return {"W": W, "b": b}, {"loss": trace}


def predict_glm(params: dict, X) -> np.ndarray:
    return np.exp(log_softmax(X @ params["W"].T + params["b"]))


def svm_objective(W, b, X, y, reg_lambda: float) -> float:
    S = np.where(np.arange(W.shape[0]) == y[:, None], 1.0, -1.0)
    hinge = np.maximum(0.0, 1.0 - S * (X @ W.T + b))
    return float(hinge.mean(axis=0).sum() + reg_lambda / 2 * np.sum(W * W))


def fit_svm(hp: dict, X, y, n_classes: int = 3):
    """One-vs-rest hinge loss + L2, full-batch subgradient descent.

    Step size decays as ``lr / sqrt(t)``; the returned weights are the running
    average of the iterates, which is what converges for subgradient methods.
    """
    _check_classes(y, "LinearSVM")
    n, d = X.shape
    lam = hp["reg_lambda"]
    S = np.where(np.arange(n_classes) == y[:, None], 1.0, -1.0)
    W = np.zeros((n_classes, d))
    b = np.zeros(n_classes)
    W_avg = np.zeros_like(W)
    b_avg = np.zeros_like(b)
    trace = []
    for t in range(1, hp["epochs"] + 1):
        active = (S * (X @ W.T + b) < 1.0) * S
        gW = -(active.T @ X) / n + lam * W
        gb = -active.sum(axis=0) / n
        step = hp["lr"] / np.sqrt(t)
        W -= step * gW
        b -= step * gb
        W_avg += (W - W_avg) / t
        b_avg += (b - b_avg) / t
        trace.append(svm_objective(W_avg, b_avg, X, y, lam))
    return {"W": W_avg, "b": b_avg}, {"objective": trace}


def svm_margins(params: dict, X) -> np.ndarray:
    return X @ params["W"].T + params["b"]


def predict_svm(params: dict, X) -> np.ndarray:
    """Softmax over the one-vs-rest margins; the argmax is the max-margin class."""
    return np.exp(log_softmax(svm_margins(params, X)))
