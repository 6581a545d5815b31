"""Optimisers, the hybrid training loop, inference and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, ParseError, TrainingError
from .grad import batch_gradient
from .head import (
    ClassifierHead,
    batch_backward,
    forward_batch,
    predict_labels,
)
from .qcore import EXACT, ShotConfig
from .data import encode_amplitudes
from .shadow import (
    ShadowCircuit,
    ShadowEnsemble,
    WindowRdms,
    batch_features,
    rdms_from_amplitudes,
    window_rdms,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
# shot-model stream ids, kept apart so training and metrics never share draws
_EVAL_STREAM = 1 << 40


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.03
    batch_size: int = 1
    epochs: int = 1
    max_iterations: int | None = None
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    shot_cfg: ShotConfig = EXACT
    stop_tolerance: float = 0.0
    theta_init: str = "UNIFORM_0_2PI"
    head_init: str = "GAUSSIAN_STD_NORMAL"
    eval_every: int = 1

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 1 or self.eval_every < 1:
            raise ConfigurationError("batch_size, epochs and eval_every must be >= 1")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if self.optimizer.lower() not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        object.__setattr__(self, "optimizer", self.optimizer.lower())
        if self.theta_init != "UNIFORM_0_2PI" or self.head_init != "GAUSSIAN_STD_NORMAL":
            raise ConfigurationError("unsupported initialisation scheme")
        if isinstance(self.shot_cfg, dict):
            object.__setattr__(self, "shot_cfg", ShotConfig(**self.shot_cfg))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shot_cfg"] = self.shot_cfg.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# Optimisers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def _check_finite(grads: np.ndarray) -> None:
    if not np.all(np.isfinite(grads)):
        bad = np.flatnonzero(~np.isfinite(grads))
        raise TrainingError(
            f"non-finite gradient at {len(bad)} position(s), first index {bad[0]}"
        )


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, cfg: TrainConfig):
    """Bias-corrected Adam update; returns ``(new_params, new_state)``."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.shape:
        raise ConfigurationError(f"gradient shape {grads.shape} vs params {params.shape}")
    _check_finite(grads)
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    t = state.t + 1
    m = b1 * state.m + (1 - b1) * grads
    v = b2 * state.v + (1 - b2) * grads * grads
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    new = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return new, AdamState(m, v, t)


def sgd_step(params: np.ndarray, grads: np.ndarray, state, cfg: TrainConfig):
    grads = np.asarray(grads, dtype=float)
    _check_finite(grads)
    return params - cfg.learning_rate * grads, state


def _pack(ensemble: ShadowEnsemble, head: ClassifierHead) -> np.ndarray:
    return np.concatenate([*ensemble.thetas, head.W.ravel(), head.b])


def _unpack(vec: np.ndarray, ensemble: ShadowEnsemble, head: ClassifierHead):
    thetas, k = [], 0
    for c in ensemble.circuits:
        thetas.append(vec[k : k + c.n_params].copy())
        k += c.n_params
    nW = head.W.size
    W = vec[k : k + nW].reshape(head.W.shape)
    b = vec[k + nW :]
    return ensemble.with_thetas(thetas), ClassifierHead(W, b)


# ---------------------------------------------------------------------------
# Metrics and checkpoints
# ---------------------------------------------------------------------------


@dataclass
class MetricHistory:
    iteration: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    train_acc: list[float | None] = field(default_factory=list)
    val_acc: list[float | None] = field(default_factory=list)

    def record(self, it: int, loss: float, train_acc=None, val_acc=None) -> None:
        self.iteration.append(it)
        self.loss.append(loss)
        self.train_acc.append(train_acc)
        self.val_acc.append(val_acc)

    def __len__(self) -> int:
        return len(self.iteration)

    def to_dict(self) -> dict:
        return asdict(self)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "loss", "train_acc", "val_acc"])
            for row in zip(self.iteration, self.loss, self.train_acc, self.val_acc):
                w.writerow(["" if x is None else repr(x) for x in row])


@dataclass(eq=False)
class Checkpoint:
    n_qubits: int
    circuits: list[ShadowCircuit]
    thetas: list[np.ndarray]
    W: np.ndarray
    b: np.ndarray
    config: dict = field(default_factory=dict)
    history: MetricHistory = field(default_factory=MetricHistory)
    format_version: int = CHECKPOINT_FORMAT_VERSION

    @classmethod
    def from_model(
        cls, n_qubits: int, ensemble: ShadowEnsemble, head: ClassifierHead, config=None, history=None
    ) -> "Checkpoint":
        return cls(
            n_qubits,
            list(ensemble.circuits),
            [t.copy() for t in ensemble.thetas],
            head.W.copy(),
            head.b.copy(),
            dict(config or {}),
            history or MetricHistory(),
        )

    def ensemble(self) -> ShadowEnsemble:
        return ShadowEnsemble(self.circuits, self.thetas)

    def head(self) -> ClassifierHead:
        return ClassifierHead(self.W, self.b)

    @property
    def K(self) -> int:
        return self.W.shape[0]

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "qubit_order": "big-endian",
            "n_qubits": self.n_qubits,
            "K": self.K,
            "ansatz": [c.to_dict() for c in self.circuits],
            "thetas": [t.tolist() for t in self.thetas],
            "W": self.W.tolist(),
            "b": self.b.tolist(),
            "config": self.config,
            "history": self.history.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ParseError(f"unsupported checkpoint format_version {d.get('format_version')!r}")
        try:
            return cls(
                n_qubits=int(d["n_qubits"]),
                circuits=[ShadowCircuit.from_dict(c) for c in d["ansatz"]],
                thetas=[np.asarray(t, dtype=float) for t in d["thetas"]],
                W=np.asarray(d["W"], dtype=float),
                b=np.asarray(d["b"], dtype=float),
                config=d.get("config", {}),
                history=MetricHistory(**d.get("history", {})),
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed checkpoint: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        return cls.from_dict(doc)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Prepared:
    """Cached window RDMs plus integer labels."""

    rdms: WindowRdms
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def prepare(data, n_qsc: int) -> Prepared:
    """Accept labelled states, a ``(WindowRdms, labels)`` pair or a ``Prepared``."""
    if isinstance(data, Prepared):
        if data.rdms.n_qsc != n_qsc:
            raise ConfigurationError("cached RDMs use a different window width")
        return data
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], WindowRdms):
        return Prepared(data[0], np.asarray(data[1], dtype=int))
    items = list(data)
    if not items:
        raise DomainError("empty dataset")
    return Prepared(
        window_rdms([it.state for it in items], n_qsc),
        np.array([it.label for it in items], dtype=int),
    )


def prepare_images(images: np.ndarray, labels: np.ndarray, n_qsc: int, digits: Sequence[int] | None = None) -> Prepared:
    """Amplitude-encode images and cache their window RDMs.

    With ``digits`` given, only those digits are kept and relabelled by their
    position in ``digits`` (so ``(0, 1)`` gives binary labels).
    """
    labels = np.asarray(labels, dtype=int)
    if digits is not None:
        keep = np.isin(labels, list(digits))
        images, labels = images[keep], labels[keep]
        lookup = {d: k for k, d in enumerate(digits)}
        labels = np.array([lookup[y] for y in labels], dtype=int)
    if len(labels) == 0:
        raise DomainError("no images selected")
    return Prepared(rdms_from_amplitudes(encode_amplitudes(images), n_qsc), labels)


def init_model(
    circuits: Sequence[ShadowCircuit], n_qubits: int, K: int, seed: int
) -> tuple[ShadowEnsemble, ClassifierHead]:
    """Angles from Uni[0, 2 pi]; head weights and biases from N(0, 1)."""
    rng = np.random.default_rng([seed, 0x1A17])
    ensemble = ShadowEnsemble.random(circuits, rng)
    head = ClassifierHead.gaussian(ensemble.n_s * ensemble.n_windows(n_qubits), K, rng)
    return ensemble, head


def predict(
    data: Prepared,
    ensemble: ShadowEnsemble,
    head: ClassifierHead,
    shot_cfg: ShotConfig = EXACT,
    stream: int = _EVAL_STREAM,
    chunk: int = 8192,
) -> tuple[np.ndarray, np.ndarray]:
    """``(probs, labels)`` for every sample of a prepared set."""
    probs = []
    for k in range(0, len(data), chunk):
        idx = slice(k, k + chunk)
        keys = range(k, min(k + chunk, len(data)))
        feats = batch_features(data.rdms.take(idx), ensemble, shot_cfg, keys, stream)
        p, _ = forward_batch(feats.reshape(feats.shape[0], -1), head)
        probs.append(p)
    P = np.concatenate(probs)
    return P, predict_labels(P)


def accuracy(data: Prepared, ensemble, head, shot_cfg: ShotConfig = EXACT, stream: int = _EVAL_STREAM) -> float:
    _, labels = predict(data, ensemble, head, shot_cfg, stream)
    return float(np.mean(labels == data.labels))


def fit(
    dataset,
    ensemble: ShadowEnsemble,
    head: ClassifierHead,
    cfg: TrainConfig,
    val=None,
    callback: Callable[[int, ShadowEnsemble, ClassifierHead], None] | None = None,
) -> tuple[Checkpoint, MetricHistory]:
    """Mini-batch training of circuit angles and head jointly.

    Each iteration draws the next mini-batch of a per-epoch seeded shuffle,
    evaluates parameter-shift gradients and applies one optimiser step.
    Training stops after ``epochs`` epochs, after ``max_iterations`` updates,
    or once the epoch-mean loss changes by at most ``stop_tolerance``.
    """
    train = prepare(dataset, ensemble.n_qsc)
    if len(train) == 0:
        raise DomainError("empty dataset")
    valp = prepare(val, ensemble.n_qsc) if val is not None else None
    n_qubits = train.rdms.n_qubits
    if ensemble.n_s * ensemble.n_windows(n_qubits) != head.n_features:
        raise ConfigurationError("head size does not match the feature map")
    K = head.K
    if np.any(train.labels < 0) or np.any(train.labels >= (2 if K == 1 else K)):
        raise DomainError("labels out of range for the head")

    rng = np.random.default_rng([cfg.seed, 0x7A1])
    step = adam_step if cfg.optimizer == "adam" else sgd_step
    params = _pack(ensemble, head)
    opt_state = AdamState.zeros(params.size)
    history = MetricHistory()
    it = 0
    prev_epoch_loss = None
    done = False
    N = len(train)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(N)
        epoch_losses = []
        for start in range(0, N, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            g = batch_gradient(
                train.rdms.take(idx),
                train.labels[idx],
                ensemble,
                head,
                cfg.shot_cfg,
                sample_keys=idx,
                stream=it,
            )
            grads = np.concatenate([*g.theta_grads, g.W_grad.ravel(), g.b_grad])
            params, opt_state = step(params, grads, opt_state, cfg)
            ensemble, head = _unpack(params, ensemble, head)
            it += 1
            epoch_losses.append(g.loss)
            tr_acc = va_acc = None
            if it % cfg.eval_every == 0:
                tr_acc = accuracy(train, ensemble, head, cfg.shot_cfg, _EVAL_STREAM + it)
                if valp is not None:
                    va_acc = accuracy(valp, ensemble, head, cfg.shot_cfg, 2 * _EVAL_STREAM + it)
            history.record(it, g.loss, tr_acc, va_acc)
            if callback is not None:
                callback(it, ensemble, head)
            if cfg.max_iterations is not None and it >= cfg.max_iterations:
                done = True
                break
        epoch_loss = float(np.mean(epoch_losses))
        log.debug("epoch %d: mean loss %.6f", epoch + 1, epoch_loss)
        if done:
            break
        if (
            cfg.stop_tolerance > 0
            and prev_epoch_loss is not None
            and abs(prev_epoch_loss - epoch_loss) <= cfg.stop_tolerance
        ):
            break
        prev_epoch_loss = epoch_loss
    ckpt = Checkpoint.from_model(n_qubits, ensemble, head, {"train": cfg.to_dict()}, history)
    return ckpt, history


def infer(dataset, checkpoint: Checkpoint, shot_cfg: ShotConfig = EXACT) -> tuple[np.ndarray, float]:
    """Predicted labels and accuracy of a checkpoint on a labelled dataset."""
    ensemble = checkpoint.ensemble()
    if isinstance(dataset, (list, tuple)) and len(dataset) == 0:
        raise DomainError("empty dataset")
    data = prepare(dataset, ensemble.n_qsc)
    if len(data) == 0:
        raise DomainError("empty dataset")
    if data.rdms.n_qubits != checkpoint.n_qubits:
        raise ConfigurationError(
            f"checkpoint was trained on {checkpoint.n_qubits} qubits, data has {data.rdms.n_qubits}"
        )
    _, labels = predict(data, ensemble, checkpoint.head(), shot_cfg)
    return labels, float(np.mean(labels == data.labels))


# ---------------------------------------------------------------------------
# Classical single-layer baseline
# ---------------------------------------------------------------------------


def baseline_parameter_count(n_inputs: int = 784, K: int = 10) -> int:
    return (n_inputs + 1) * K


def classical_baseline_fit(
    vectors: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    test_vectors: np.ndarray | None = None,
    test_labels: np.ndarray | None = None,
    K: int = 10,
) -> tuple[float, ClassifierHead]:
    """Single-layer softmax classifier on raw pixel vectors.

    Uses the same head, loss and optimiser as the hybrid model.  Returns the
    accuracy on the test vectors (training vectors if none are given).
    """
    X = np.asarray(vectors, dtype=float)
    y = np.asarray(labels, dtype=int)
    if len(X) == 0:
        raise DomainError("empty dataset")
    rng = np.random.default_rng([cfg.seed, 0xBA5E])
    head = ClassifierHead.gaussian(X.shape[1], K, rng)
    params = np.concatenate([head.W.ravel(), head.b])
    opt_state = AdamState.zeros(params.size)
    step = adam_step if cfg.optimizer == "adam" else sgd_step
    it = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(X))
        for start in range(0, len(X), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            probs, _ = forward_batch(X[idx], head)
            W_g, b_g, _ = batch_backward(X[idx], head, probs, y[idx])
            grads = np.concatenate([W_g.mean(0).ravel(), b_g.mean(0)])
            params, opt_state = step(params, grads, opt_state, cfg)
            head = ClassifierHead(params[: head.W.size].reshape(head.W.shape), params[head.W.size :])
            it += 1
            if cfg.max_iterations is not None and it >= cfg.max_iterations:
                break
        if cfg.max_iterations is not None and it >= cfg.max_iterations:
            break
    Xt = X if test_vectors is None else np.asarray(test_vectors, dtype=float)
    yt = y if test_labels is None else np.asarray(test_labels, dtype=int)
    probs, _ = forward_batch(Xt, head)
    return float(np.mean(predict_labels(probs) == yt)), head
