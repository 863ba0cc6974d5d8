"""Small fully connected softmax classifiers trained with mini-batch Adam."""

from __future__ import annotations

import numpy as np

from ..core import ContractError
from .linear import log_softmax
from .optim import Adam
from .spec import stream_rng

BATCH_SIZE = 128


def _act(name: str, Z: np.ndarray) -> np.ndarray:
    return np.maximum(Z, 0.0) if name == "relu" else np.tanh(Z)


def _act_grad(name: str, Z: np.ndarray, A: np.ndarray) -> np.ndarray:
    return (Z > 0).astype(Z.dtype) if name == "relu" else 1.0 - A * A


def init_params(sizes: list[int], activation: str, rng: np.random.Generator) -> list[np.ndarray]:
    """He (relu) or Glorot (tanh) uniform weights, zero biases; ``[W1, b1, W2, b2, ...]``."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if activation == "relu":
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def forward(params, X, activation):
    """Return output logits and ``(input, pre-activation, output)`` per hidden layer."""
    hidden = []
    A = X
    n_layers = len(params) // 2
    for i in range(n_layers - 1):
        Z = A @ params[2 * i] + params[2 * i + 1]
        A_out = _act(activation, Z)
        if not np.all(np.isfinite(A_out)):
            raise FloatingPointError("non-finite hidden activations")
        hidden.append((A, Z, A_out))
        A = A_out
    return A @ params[-2] + params[-1], hidden


def mlp_forward_backward(params, X, y, activation: str):
    """Mean softmax cross-entropy and its exact gradients (same layout as ``params``)."""
    logits, hidden = forward(params, X, activation)
    logp = log_softmax(logits)
    n = len(y)
    loss = float(-logp[np.arange(n), y].mean())
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(params)
    last_in = hidden[-1][2] if hidden else X
    grads[-2] = last_in.T @ delta
    grads[-1] = delta.sum(axis=0)
    for i in range(len(hidden) - 1, -1, -1):
        A_in, Z, A_out = hidden[i]
        delta = (delta @ params[2 * i + 2].T) * _act_grad(activation, Z, A_out)
        grads[2 * i] = A_in.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
    return loss, grads


def sgd_epoch(params, X, y, activation, opt: Adam, rng: np.random.Generator) -> float:
    order = rng.permutation(len(y))
    total = 0.0
    for start in range(0, len(y), BATCH_SIZE):
        idx = order[start : start + BATCH_SIZE]
        loss, grads = mlp_forward_backward(params, X[idx], y[idx], activation)
        opt.step(grads)
        total += loss * len(idx)
    return total / len(y)


def fit_mlp(hp: dict, seed: int, X, y, n_classes: int = 3):
    if len(np.unique(y)) < 2:
        raise ContractError("MLP needs at least two classes in the training set")
    sizes = [X.shape[1]] + [hp["width"]] * hp["layers"] + [n_classes]
    params = init_params(sizes, hp["activation"], stream_rng(seed, 0))
    opt = Adam(params, lr=hp["lr"])
    rng = stream_rng(seed, 1)
    trace = [sgd_epoch(params, X, y, hp["activation"], opt, rng) for _ in range(hp["epochs"])]
    return {"layers": params, "activation": hp["activation"]}, {"loss": trace}


def predict_mlp(params: dict, X) -> np.ndarray:
    logits, _ = forward(params["layers"], X, params["activation"])
    return np.exp(log_softmax(logits))
