"""Gradients of shadow features and of the training loss.

The parameter-shift rule is the production path.  The commutator formula and
central finite differences are kept as independent cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .head import ClassifierHead, batch_backward, batch_loss, forward_batch
from .qcore import EXACT, ShotConfig, State, partial_trace_window
from .shadow import SHIFT, ShadowEnsemble, WindowRdms, sample_rows, window_rdms


def _locate(state: State, ensemble: ShadowEnsemble, s: int, i: int, l: int):
    if not 0 <= s < ensemble.n_s:
        raise DomainError(f"circuit index {s} out of range")
    W = ensemble.n_windows(state.n_qubits)
    if not 0 <= i < W:
        raise DomainError(f"window index {i} out of range [0, {W})")
    circuit = ensemble.circuits[s]
    if not 0 <= l < circuit.n_params:
        raise DomainError(f"parameter index {l} out of range [0, {circuit.n_params})")
    rho = partial_trace_window(state, range(i, i + ensemble.n_qsc)).matrix
    return circuit, ensemble.thetas[s], rho


def _feature(circuit, theta, rho) -> float:
    return float(np.real(np.trace(rho @ circuit.observable(theta))))


def param_shift_grad(state: State, ensemble: ShadowEnsemble, s: int, i: int, l: int) -> float:
    """``[o_i(theta_l + pi/2) - o_i(theta_l - pi/2)] / 2`` (exact expectations)."""
    circuit, theta, rho = _locate(state, ensemble, s, i, l)
    plus, minus = theta.copy(), theta.copy()
    plus[l] += SHIFT
    minus[l] -= SHIFT
    return 0.5 * (_feature(circuit, plus, rho) - _feature(circuit, minus, rho))


def analytic_grad(state: State, ensemble: ShadowEnsemble, s: int, i: int, l: int) -> float:
    """``-(i/2) Tr(U_>l^dag O U_>l [P_l, U_<=l rho_i U_<=l^dag])``."""
    circuit, theta, rho = _locate(state, ensemble, s, i, l)
    before, after, P = circuit.split_at(theta, l)
    heis = after.conj().T @ circuit._observable @ after
    evolved = before @ rho @ before.conj().T
    comm = P @ evolved - evolved @ P
    return float(np.real(-0.5j * np.trace(heis @ comm)))


def fd_grad(
    state: State, ensemble: ShadowEnsemble, s: int, i: int, l: int, step: float = 1e-4
) -> float:
    """Central difference of the exact feature."""
    if not step > 0:
        raise DomainError(f"step must be positive, got {step}")
    circuit, theta, rho = _locate(state, ensemble, s, i, l)
    plus, minus = theta.copy(), theta.copy()
    plus[l] += step
    minus[l] -= step
    return (_feature(circuit, plus, rho) - _feature(circuit, minus, rho)) / (2 * step)


# ---------------------------------------------------------------------------
# Batched Jacobians and loss gradients
# ---------------------------------------------------------------------------


def feature_jacobian(
    rdms: WindowRdms,
    ensemble: ShadowEnsemble,
    shot_cfg: ShotConfig = EXACT,
    sample_keys: Sequence[int] | None = None,
    stream: int = 0,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Features ``(N, n_s, W)`` and per-circuit parameter-shift Jacobians.

    ``jac[s][n, i, l] = d o_{s,i} / d theta_{s,l}`` for sample ``n``.
    """
    if rdms.n_qsc != ensemble.n_qsc:
        raise ConfigurationError("RDM window width does not match the ensemble")
    N, W = rdms.n_samples, rdms.n_windows
    sizes = [1 + 2 * c.n_params for c in ensemble.circuits]
    obs = np.concatenate(
        [c.shifted_observables(t) for c, t in zip(ensemble.circuits, ensemble.thetas)]
    )
    vals = rdms.expectations(obs)  # (N, W, sum(sizes))
    vals = np.transpose(vals, (0, 2, 1))  # (N, obs, W)
    vals = sample_rows(vals, shot_cfg, sample_keys, stream)
    feats = np.empty((N, ensemble.n_s, W))
    jacs = []
    start = 0
    for s, (c, size) in enumerate(zip(ensemble.circuits, sizes)):
        block = vals[:, start : start + size]
        L = c.n_params
        feats[:, s] = block[:, 0]
        jacs.append(np.transpose(0.5 * (block[:, 1 : 1 + L] - block[:, 1 + L :]), (0, 2, 1)))
        start += size
    return feats, jacs


@dataclass(frozen=True, eq=False)
class BatchGradient:
    loss: float
    theta_grads: list[np.ndarray]
    W_grad: np.ndarray
    b_grad: np.ndarray
    probs: np.ndarray


def batch_gradient(
    rdms: WindowRdms,
    labels: np.ndarray,
    ensemble: ShadowEnsemble,
    head: ClassifierHead,
    shot_cfg: ShotConfig = EXACT,
    sample_keys: Sequence[int] | None = None,
    stream: int = 0,
) -> BatchGradient:
    """Batch-mean loss and gradients for every trainable parameter."""
    N = rdms.n_samples
    if N == 0:
        raise DomainError("empty batch")
    if len(labels) != N:
        raise ConfigurationError("one label per sample required")
    feats, jacs = feature_jacobian(rdms, ensemble, shot_cfg, sample_keys, stream)
    X = feats.reshape(N, -1)
    if X.shape[1] != head.n_features:
        raise ConfigurationError(
            f"feature map has {X.shape[1]} entries, head expects {head.n_features}"
        )
    probs, _ = forward_batch(X, head)
    losses = batch_loss(probs, labels, head.K)
    W_g, b_g, f_g = batch_backward(X, head, probs, labels)
    f_g = f_g.reshape(N, ensemble.n_s, rdms.n_windows)
    theta_grads = [
        np.einsum("ni,nil->l", f_g[:, s], jacs[s]) / N for s in range(ensemble.n_s)
    ]
    return BatchGradient(float(losses.mean()), theta_grads, W_g.mean(0), b_g.mean(0), probs)


def loss_grad(
    batch,
    ensemble: ShadowEnsemble,
    head: ClassifierHead,
    loss_kind: str | None = None,
    shot_cfg: ShotConfig = EXACT,
):
    """``(theta_grads, W_grad, b_grad)`` averaged over ``batch``.

    ``batch`` is either a sequence of labelled states (objects with ``state``
    and ``label`` attributes) or a ``(WindowRdms, labels)`` pair.
    """
    if loss_kind is not None and loss_kind != head.loss_kind:
        raise ConfigurationError(
            f"loss {loss_kind!r} does not match a head with K={head.K}"
        )
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], WindowRdms):
        rdms, labels = batch
    else:
        items = list(batch)
        if not items:
            raise DomainError("empty batch")
        rdms = window_rdms([it.state for it in items], ensemble.n_qsc)
        labels = np.array([it.label for it in items])
    g = batch_gradient(rdms, np.asarray(labels), ensemble, head, shot_cfg)
    return g.theta_grads, g.W_grad, g.b_grad


def batch_mean_loss(
    rdms: WindowRdms, labels, ensemble: ShadowEnsemble, head: ClassifierHead
) -> float:
    """Exact batch-mean loss (no gradients)."""
    feats = np.transpose(rdms.expectations(ensemble.observables()), (0, 2, 1))
    probs, _ = forward_batch(feats.reshape(rdms.n_samples, -1), head)
    return float(batch_loss(probs, labels, head.K).mean())
