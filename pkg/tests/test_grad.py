import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_density, random_pure
from vsql.data import psi_u
from vsql.errors import ConfigurationError, DomainError
from vsql.grad import (
    analytic_grad,
    batch_gradient,
    batch_mean_loss,
    fd_grad,
    loss_grad,
    param_shift_grad,
)
from vsql.head import ClassifierHead
from vsql.qcore import DensityMatrix, Gate, GateKind, PureState
from vsql.shadow import (
    ShadowCircuit,
    ShadowEnsemble,
    build_ansatz_mnist,
    build_ansatz_qsd,
    rdms_from_amplitudes,
    window_rdms,
)


def _random_case(rng):
    n = int(rng.integers(2, 5))
    q = int(rng.integers(1, min(n, 3) + 1))
    circuit = build_ansatz_mnist(q, int(rng.integers(1, 3))) if q > 1 else build_ansatz_qsd()
    ens = ShadowEnsemble([circuit], [rng.uniform(0, 2 * np.pi, circuit.n_params)])
    if rng.random() < 0.5:
        state = PureState(random_pure(n, rng))
    else:
        state = DensityMatrix(random_density(n, rng))
    return state, ens


def test_three_way_gradient_agreement():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(40):
        state, ens = _random_case(rng)
        c = ens.circuits[0]
        for i in range(ens.n_windows(state.n_qubits)):
            for l in range(c.n_params):
                ps = param_shift_grad(state, ens, 0, i, l)
                an = analytic_grad(state, ens, 0, i, l)
                fd = fd_grad(state, ens, 0, i, l, step=1e-4)
                assert abs(ps - an) < 1e-10
                assert abs(ps - fd) < 1e-6
                checked += 1
    assert checked >= 100


def test_single_qubit_derivative_examples():
    ens0 = ShadowEnsemble([build_ansatz_qsd()], [np.array([0.0])])
    ens_pi = ShadowEnsemble([build_ansatz_qsd()], [np.array([np.pi])])
    zero = PureState(np.array([1.0, 0.0]))
    assert abs(param_shift_grad(zero, ens0, 0, 0, 0) - 1.0) < 1e-12
    assert abs(param_shift_grad(zero, ens_pi, 0, 0, 0) + 1.0) < 1e-12
    assert abs(param_shift_grad(PureState(psi_u(1.0)), ens0, 0, 0, 0) + 1.0) < 1e-12


def test_rz_only_circuit_has_zero_gradient():
    c = ShadowCircuit(1, 1, (Gate(GateKind.RZ, (0,), 0),))
    ens = ShadowEnsemble([c], [np.array([0.7])])
    state = PureState(np.array([1.0, 0, 0, 0]))
    for i in range(2):
        assert abs(param_shift_grad(state, ens, 0, i, 0)) < 1e-12
        assert abs(analytic_grad(state, ens, 0, i, 0)) < 1e-12


def test_gradient_index_errors():
    ens = ShadowEnsemble([build_ansatz_qsd()], [np.array([0.1])])
    s = PureState(psi_u(0.3))
    with pytest.raises(DomainError):
        fd_grad(s, ens, 0, 0, 0, step=0.0)
    with pytest.raises(DomainError):
        param_shift_grad(s, ens, 1, 0, 0)
    with pytest.raises(DomainError):
        param_shift_grad(s, ens, 0, 2, 0)
    with pytest.raises(DomainError):
        param_shift_grad(s, ens, 0, 0, 1)


def _full_loss(vec, rdms, labels, ens, K):
    L = ens.circuits[0].n_params
    thetas = [vec[s * L : (s + 1) * L] for s in range(ens.n_s)]
    off = ens.n_s * L
    F = (len(vec) - off - K) // K
    head = ClassifierHead(vec[off : off + K * F].reshape(K, F), vec[off + K * F :])
    return batch_mean_loss(rdms, labels, ShadowEnsemble(ens.circuits, thetas), head)


@pytest.mark.parametrize("K", [1, 3])
def test_end_to_end_loss_gradient_matches_finite_differences(K):
    rng = np.random.default_rng(K)
    n, N = 3, 4
    ens = ShadowEnsemble.random([build_ansatz_mnist(2, 1)] * 2, rng)
    head = ClassifierHead.gaussian(ens.n_s * (n - 1), K, rng)
    amps = np.stack([random_pure(n, rng) for _ in range(N)])
    rdms = rdms_from_amplitudes(amps, 2)
    labels = rng.integers(0, max(K, 2), N)
    g = batch_gradient(rdms, labels, ens, head)
    analytic = np.concatenate([*g.theta_grads, g.W_grad.ravel(), g.b_grad])
    vec = np.concatenate([*ens.thetas, head.W.ravel(), head.b])
    h = 1e-6
    numeric = np.empty_like(vec)
    for k in range(len(vec)):
        e = np.zeros_like(vec)
        e[k] = h
        numeric[k] = (
            _full_loss(vec + e, rdms, labels, ens, K) - _full_loss(vec - e, rdms, labels, ens, K)
        ) / (2 * h)
    assert np.abs(analytic - numeric).max() < 1e-5
    assert abs(g.loss - _full_loss(vec, rdms, labels, ens, K)) < 1e-12


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_batch_gradient_is_mean_of_per_sample(seed, N):
    rng = np.random.default_rng(seed)
    ens = ShadowEnsemble.random([build_ansatz_mnist(2, 1)], rng)
    head = ClassifierHead.gaussian(2, 1, rng)
    amps = np.stack([random_pure(3, rng) for _ in range(N)])
    labels = rng.integers(0, 2, N)
    full = batch_gradient(rdms_from_amplitudes(amps, 2), labels, ens, head)
    singles = [
        batch_gradient(rdms_from_amplitudes(amps[k : k + 1], 2), labels[k : k + 1], ens, head)
        for k in range(N)
    ]
    assert np.abs(full.theta_grads[0] - np.mean([s.theta_grads[0] for s in singles], 0)).max() < 1e-12
    assert np.abs(full.W_grad - np.mean([s.W_grad for s in singles], 0)).max() < 1e-12
    assert np.abs(full.b_grad - np.mean([s.b_grad for s in singles], 0)).max() < 1e-12


def test_theta_gradient_is_weighted_window_sum():
    rng = np.random.default_rng(11)
    n = 4
    ens = ShadowEnsemble.random([build_ansatz_mnist(2, 1)], rng)
    head = ClassifierHead.gaussian(n - 1, 1, rng)
    state = PureState(random_pure(n, rng))
    rdms = window_rdms([state], 2)
    g = batch_gradient(rdms, np.array([1]), ens, head)
    yh = g.probs[0, 0]
    dz = (yh - 1) * yh * (1 - yh)
    for l in range(ens.circuits[0].n_params):
        expected = sum(dz * head.W[0, i] * param_shift_grad(state, ens, 0, i, l) for i in range(n - 1))
        assert abs(g.theta_grads[0][l] - expected) < 1e-12


def test_zero_weights_give_zero_circuit_gradient():
    rng = np.random.default_rng(5)
    ens = ShadowEnsemble.random([build_ansatz_mnist(2, 1)], rng)
    head = ClassifierHead(np.zeros((1, 2)), np.array([0.3]))
    rdms = rdms_from_amplitudes(np.stack([random_pure(3, rng) for _ in range(3)]), 2)
    g = batch_gradient(rdms, np.array([0, 1, 1]), ens, head)
    assert np.all(g.theta_grads[0] == 0)


def test_perfect_prediction_gives_zero_gradient():
    # a saturated sigmoid reproduces the label up to rounding
    rng = np.random.default_rng(6)
    ens = ShadowEnsemble.random([build_ansatz_mnist(2, 1)], rng)
    head = ClassifierHead(np.zeros((1, 2)), np.array([-800.0]))
    rdms = rdms_from_amplitudes(random_pure(3, rng)[None], 2)
    g = batch_gradient(rdms, np.array([0]), ens, head)
    assert g.loss == 0.0
    assert np.all(g.theta_grads[0] == 0) and np.all(g.W_grad == 0) and np.all(g.b_grad == 0)


def test_loss_grad_interfaces_agree():
    from vsql.data import LabeledState

    rng = np.random.default_rng(8)
    ens = ShadowEnsemble.random([build_ansatz_mnist(2, 1)], rng)
    head = ClassifierHead.gaussian(2, 1, rng)
    states = [PureState(random_pure(3, rng)) for _ in range(3)]
    items = [LabeledState(s, k % 2) for k, s in enumerate(states)]
    a = loss_grad(items, ens, head, "mse")
    b = loss_grad((window_rdms(states, 2), np.array([0, 1, 0])), ens, head)
    assert np.allclose(a[0][0], b[0][0], atol=1e-12)
    assert np.allclose(a[1], b[1]) and np.allclose(a[2], b[2])
    with pytest.raises(ConfigurationError):
        loss_grad(items, ens, head, "ce")
    with pytest.raises(DomainError):
        loss_grad([], ens, head)
