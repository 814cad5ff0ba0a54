"""Minimal dense-network kernel with reverse-mode gradients.

Everything is float64. A forward pass optionally records backward closures
on a :class:`GradTape`; replaying the tape in reverse accumulates gradients
of a scalar loss into per-parameter buffers keyed by array identity, so a
joint objective can be built by summing several chains into one gradient
dict before a single optimizer step.

The gradient reversal pair (:func:`grl_forward` / :func:`grl_backward`) is
the identity on the way forward and exact negation on the way back; it is
what turns a domain classifier into an adversary of the shared encoder.
"""

from __future__ import annotations

import enum
import math
from typing import Callable

import numpy as np

from .errors import NumericalError

# Probabilities are clamped into [PROB_EPS, 1 - PROB_EPS] before any log.
PROB_EPS = 1e-12


class Activation(enum.Enum):
    IDENTITY = "identity"
    RELU = "relu"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function (no overflow warnings)."""
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row max for stability."""
    shifted = z - z.max(axis=1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=1, keepdims=True)


class GradTape:
    """Ordered record of one forward chain plus per-parameter grad buffers.

    Each recorded closure maps the gradient w.r.t. its op's output to the
    gradient w.r.t. its op's input, accumulating parameter gradients into
    ``grads`` as a side effect. ``backward`` replays the chain last-to-first,
    seeding with ``loss_scale``.
    """

    def __init__(self) -> None:
        self._ops: list[Callable] = []
        self.grads: dict[int, np.ndarray] = {}

    def record(self, backward_fn: Callable) -> None:
        self._ops.append(backward_fn)

    def add_param_grad(self, param: np.ndarray, grad: np.ndarray) -> None:
        key = id(param)
        if key in self.grads:
            self.grads[key] += grad
        else:
            self.grads[key] = grad

    def backward(self, loss_scale: float = 1.0):
        """Run reverse-mode accumulation; returns the gradient dict."""
        if not self._ops:
            return self.grads
        upstream = loss_scale
        for fn in reversed(self._ops):
            upstream = fn(upstream)
        return self.grads


def merge_grads(total: dict[int, np.ndarray], grads: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Accumulate one chain's gradients into a running total (in place)."""
    for key, g in grads.items():
        if key in total:
            total[key] += g
        else:
            total[key] = g
    return total


class DenseLayer:
    """Fully connected layer: ``activation(x @ weights + bias)``."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray, activation: Activation) -> None:
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weights.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {weights.shape}")
        if bias.shape != (weights.shape[1],):
            raise ValueError(
                f"bias shape {bias.shape} does not match weights out_dim {weights.shape[1]}"
            )
        self.weights = weights
        self.bias = bias
        self.activation = activation

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def glorot(cls, in_dim: int, out_dim: int, activation: Activation,
               rng: np.random.Generator) -> "DenseLayer":
        # Uniform Glorot fan-in/fan-out init, zero bias.
        limit = math.sqrt(6.0 / (in_dim + out_dim))
        w = rng.uniform(-limit, limit, size=(in_dim, out_dim))
        return cls(w, np.zeros(out_dim), activation)

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


def dense_forward(layer: DenseLayer, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
    """Forward through one dense layer, optionally recording the backward op."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ValueError(
            f"dense layer expects input of shape (n, {layer.in_dim}), got {x.shape}"
        )
    z = x @ layer.weights + layer.bias
    act = layer.activation
    if act is Activation.IDENTITY:
        out = z
    elif act is Activation.RELU:
        out = np.maximum(z, 0.0)
    elif act is Activation.SIGMOID:
        out = sigmoid(z)
    elif act is Activation.SOFTMAX:
        out = softmax(z)
    else:  # pragma: no cover
        raise ValueError(f"unknown activation {act}")

    if tape is not None:
        w = layer.weights

        if act is Activation.IDENTITY:
            def to_dz(da):
                return da
        elif act is Activation.RELU:
            mask = z > 0.0

            def to_dz(da):
                return da * mask
        elif act is Activation.SIGMOID:
            a = out

            def to_dz(da):
                return da * a * (1.0 - a)
        else:  # softmax: dz_i = a_i * (da_i - sum_j da_j a_j), per row
            a = out

            def to_dz(da):
                inner = (da * a).sum(axis=1, keepdims=True)
                return a * (da - inner)

        def backward(upstream):
            dz = to_dz(upstream)
            tape.add_param_grad(layer.weights, x.T @ dz)
            tape.add_param_grad(layer.bias, dz.sum(axis=0))
            return dz @ w.T

        tape.record(backward)
    return out


def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels


def categorical_xent(probs: np.ndarray, labels: np.ndarray,
                     tape: GradTape | None = None) -> float:
    """Mean negative log-probability of the true class.

    Rows of ``probs`` must already be probability vectors (sum to 1 within
    1e-6). Probabilities are clamped away from {0, 1} before the log, so a
    saturated head yields a large-but-finite loss instead of Inf.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError(f"probs must be 2-D, got shape {probs.shape}")
    labels = _check_labels(labels, probs.shape[1])
    if labels.shape[0] != probs.shape[0]:
        raise ValueError(f"{probs.shape[0]} prob rows vs {labels.shape[0]} labels")
    row_sums = probs.sum(axis=1)
    if probs.shape[0] and np.abs(row_sums - 1.0).max() > 1e-6:
        raise ValueError("probability rows must sum to 1 within 1e-6")

    n = probs.shape[0]
    rows = np.arange(n)
    picked = probs[rows, labels]
    clamped = np.clip(picked, PROB_EPS, 1.0 - PROB_EPS)
    loss = float(-np.log(clamped).mean())
    if not math.isfinite(loss):
        raise NumericalError("categorical cross-entropy is not finite")

    if tape is not None:
        interior = (picked > PROB_EPS) & (picked < 1.0 - PROB_EPS)

        def backward(upstream):
            dprobs = np.zeros_like(probs)
            dprobs[rows, labels] = np.where(interior, -upstream / (n * clamped), 0.0)
            return dprobs

        tape.record(backward)
    return loss


def binary_xent(probs: np.ndarray, labels: np.ndarray,
                tape: GradTape | None = None) -> float:
    """Mean binary cross-entropy for probabilities of the positive class."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 2 and probs.shape[1] == 1:
        raise ValueError("pass a flat probability vector, not an (n, 1) column")
    if probs.ndim != 1:
        raise ValueError(f"probs must be 1-D, got shape {probs.shape}")
    labels = _check_labels(labels, 2)
    if labels.shape[0] != probs.shape[0]:
        raise ValueError(f"{probs.shape[0]} probs vs {labels.shape[0]} labels")

    n = probs.shape[0]
    y = labels.astype(np.float64)
    p = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    loss = float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())
    if not math.isfinite(loss):
        raise NumericalError("binary cross-entropy is not finite")

    if tape is not None:
        interior = (probs > PROB_EPS) & (probs < 1.0 - PROB_EPS)

        def backward(upstream):
            dp = np.where(interior, (p - y) / (p * (1.0 - p) * n), 0.0)
            return upstream * dp

        tape.record(backward)
    return loss


def grl_forward(x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
    """Gradient reversal, forward half: returns the input unchanged."""
    if tape is not None:
        tape.record(lambda upstream: -upstream)
    return x


def grl_backward(upstream: np.ndarray) -> np.ndarray:
    """Gradient reversal, backward half: negates the upstream gradient."""
    return -np.asarray(upstream)


class Adam:
    """Adam with bias correction over a fixed list of parameter arrays.

    Parameters are updated in place, which keeps their identities stable for
    gradient-dict lookups. A parameter absent from a step's gradient dict is
    skipped entirely (its moments do not decay), so heads that sat out a step
    stay put. Moment bias correction uses a per-parameter update count;
    ``timestep`` counts calls to :meth:`step`.
    """

    def __init__(self, params: list[np.ndarray], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.timestep = 0
        self._m = [np.zeros_like(p) for p in self.params]
        self._v = [np.zeros_like(p) for p in self.params]
        self._t = [0] * len(self.params)

    def step(self, grads: dict[int, np.ndarray]) -> None:
        self.timestep += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = grads.get(id(p))
            if g is None:
                continue
            if g.shape != p.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter shape {p.shape}"
                )
            self._t[i] += 1
            t = self._t[i]
            m, v = self._m[i], self._v[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(state: Adam, grads: dict[int, np.ndarray]) -> None:
    """Apply one Adam update; alias for :meth:`Adam.step`."""
    state.step(grads)
