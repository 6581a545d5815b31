"""Fully-connected post-processing of shadow features.

``K == 1`` is the binary head (sigmoid + half squared error); ``K > 1`` is the
multi-class head (softmax + cross-entropy).  Batch functions take a feature
matrix of shape ``(N, F)`` and integer labels of shape ``(N,)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError

PROB_FLOOR = 1e-12


@dataclass(eq=False)
class ClassifierHead:
    W: np.ndarray  # (K, F)
    b: np.ndarray  # (K,)

    def __post_init__(self) -> None:
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float)).copy()
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float)).copy()
        if self.b.shape != (self.W.shape[0],):
            raise ConfigurationError(f"bias shape {self.b.shape} vs weights {self.W.shape}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ConfigurationError("head parameters must be finite")

    @classmethod
    def zeros(cls, n_features: int, K: int = 1) -> "ClassifierHead":
        return cls(np.zeros((K, n_features)), np.zeros(K))

    @classmethod
    def gaussian(cls, n_features: int, K: int, rng: np.random.Generator) -> "ClassifierHead":
        """Weights and biases from N(0, 1)."""
        return cls(rng.standard_normal((K, n_features)), rng.standard_normal(K))

    @property
    def K(self) -> int:
        return self.W.shape[0]

    @property
    def n_features(self) -> int:
        return self.W.shape[1]

    @property
    def binary(self) -> bool:
        return self.K == 1

    @property
    def n_classes(self) -> int:
        return 2 if self.binary else self.K

    @property
    def loss_kind(self) -> str:
        return "mse" if self.binary else "ce"


@dataclass(frozen=True, eq=False)
class Prediction:
    probs: np.ndarray
    logits: np.ndarray


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z, axis: int = -1):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _as_matrix(features, head: ClassifierHead) -> np.ndarray:
    X = np.asarray(getattr(features, "values", features), dtype=float)
    if X.ndim == 3:  # (N, n_s, W) feature tensors
        X = X.reshape(X.shape[0], -1)
    X = np.atleast_2d(X) if X.ndim != 2 else X
    if X.shape[1] != head.n_features:
        raise ConfigurationError(
            f"head expects {head.n_features} features, got {X.shape[1]}"
        )
    return X


def forward_batch(X: np.ndarray, head: ClassifierHead) -> tuple[np.ndarray, np.ndarray]:
    """``(probs, logits)`` each of shape ``(N, K)``."""
    X = _as_matrix(X, head)
    z = X @ head.W.T + head.b
    probs = sigmoid(z) if head.binary else softmax(z)
    return probs, z


def forward(features, head: ClassifierHead) -> Prediction:
    """Single-sample forward pass; ``features`` is a FeatureMap or flat vector."""
    flat = np.asarray(getattr(features, "values", features), dtype=float).reshape(1, -1)
    probs, z = forward_batch(flat, head)
    return Prediction(probs[0], z[0])


def one_hot(labels, K: int) -> np.ndarray:
    """``(N, K)`` indicator rows for integer labels."""
    y = np.asarray(labels, dtype=int)
    if np.any(y < 0) or np.any(y >= K):
        raise DomainError(f"labels must lie in [0, {K})")
    out = np.zeros((y.size, K))
    out[np.arange(y.size), y] = 1.0
    return out


def _labels_to_index(labels, K: int) -> np.ndarray:
    """Accept integer labels or one-hot rows; return integer class indices."""
    y = np.asarray(labels)
    n_classes = 2 if K == 1 else K
    if y.ndim == 2:
        if y.shape[1] != K or np.any((y != 0) & (y != 1)) or np.any(y.sum(axis=1) != 1):
            raise DomainError("one-hot labels must have exactly one 1 per row")
        return np.argmax(y, axis=1)
    if y.dtype.kind not in "iub" and not (
        y.dtype.kind == "f" and np.all(np.isfinite(y)) and np.all(y == np.round(y))
    ):
        raise DomainError("labels must be integers")
    y = y.astype(int)
    if np.any(y < 0) or np.any(y >= n_classes):
        raise DomainError(f"labels must lie in [0, {n_classes})")
    return y


def batch_loss(probs: np.ndarray, labels, K: int) -> np.ndarray:
    """Per-sample loss vector."""
    y = _labels_to_index(labels, K)
    if K == 1:
        return 0.5 * (probs[:, 0] - y) ** 2
    p = probs[np.arange(len(y)), y]
    return -np.log(np.maximum(p, PROB_FLOOR))


def loss(pred: Prediction, label) -> float:
    """Per-sample loss: ``(y_hat - y)^2 / 2`` or ``-log y_hat_label``."""
    K = pred.probs.shape[0]
    y = np.asarray(label)
    if K > 1 and y.ndim == 1:
        y = y[None, :]
    elif y.ndim == 0:
        y = y[None]
    else:
        raise DomainError(f"malformed label {label!r}")
    return float(batch_loss(pred.probs[None, :], y, K)[0])


def batch_backward(
    X: np.ndarray, head: ClassifierHead, probs: np.ndarray, labels
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-sample gradients.

    Returns ``(W_grads (N, K, F), b_grads (N, K), feature_grads (N, F))``.
    """
    X = _as_matrix(X, head)
    y = _labels_to_index(labels, head.K)
    if head.binary:
        yh = probs[:, 0]
        dz = ((yh - y) * yh * (1.0 - yh))[:, None]
    else:
        dz = probs.copy()
        dz[np.arange(len(y)), y] -= 1.0
    W_grads = dz[:, :, None] * X[:, None, :]
    return W_grads, dz, dz @ head.W


def head_backward(features, head: ClassifierHead, pred: Prediction, label):
    """Closed-form ``(dL/dW, dL/db, dL/do)`` for one sample."""
    flat = np.asarray(getattr(features, "values", features), dtype=float).reshape(1, -1)
    y = np.asarray(label)
    y = y[None, :] if y.ndim == 1 else y[None]
    W_g, b_g, f_g = batch_backward(flat, head, pred.probs[None, :], y)
    return W_g[0], b_g[0], f_g[0]


def predict_labels(probs: np.ndarray) -> np.ndarray:
    """Binary: 1 iff prob >= 0.5.  Multi-class: argmax, ties to lowest index."""
    probs = np.atleast_2d(probs)
    if probs.shape[1] == 1:
        return (probs[:, 0] >= 0.5).astype(int)
    return np.argmax(probs, axis=1)


def predict_label(pred: Prediction) -> int:
    return int(predict_labels(pred.probs[None, :])[0])
