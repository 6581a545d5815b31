import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_density, random_pure
from vsql.data import psi_u, rho_1
from vsql.errors import ConfigurationError, DomainError
from vsql.qcore import (
    DensityMatrix,
    Gate,
    GateKind,
    PureState,
    ShotConfig,
    ShotMode,
    apply_circuit,
    build_basis_state,
    expectation_xx,
)
from vsql.shadow import (
    FeatureMap,
    ShadowCircuit,
    ShadowEnsemble,
    build_ansatz_layered,
    build_ansatz_mnist,
    build_ansatz_qsd,
    build_ansatz_ry_cnot,
    count_parameters,
    extract_features,
    rdms_from_amplitudes,
    window_rdms,
)


def direct_feature(state, circuit, theta, start):
    """Evolve the full register and measure the X string on the window."""
    evolved = apply_circuit(state, circuit.gates, theta, offset=start)
    return expectation_xx(evolved, range(start, start + circuit.n_qsc))


def test_qsd_ansatz():
    c = build_ansatz_qsd()
    assert c.n_qsc == 1 and c.n_params == 1
    assert [g.to_dict() for g in c.gates] == [{"kind": "RY", "targets": [0], "param": 0}]


@pytest.mark.parametrize("q,D,expected", [(2, 1, 8), (4, 5, 32), (2, 3, 12), (3, 2, 15)])
def test_mnist_ansatz_param_count(q, D, expected):
    assert build_ansatz_mnist(q, D).n_params == expected


def test_mnist_ansatz_errors():
    with pytest.raises(ConfigurationError):
        build_ansatz_mnist(2, 0)
    with pytest.raises(ConfigurationError):
        build_ansatz_mnist(1, 1)


def test_mnist_ansatz_two_qubit_structure():
    kinds = [(g.kind.value, g.targets) for g in build_ansatz_mnist(2, 1).gates]
    assert kinds == [
        ("RZ", (0,)), ("RZ", (1,)), ("RY", (0,)), ("RY", (1,)), ("RZ", (0,)), ("RZ", (1,)),
        ("CNOT", (0, 1)), ("CNOT", (1, 0)), ("RY", (0,)), ("RY", (1,)),
    ]


def test_circuit_invariants():
    with pytest.raises(ConfigurationError):
        ShadowCircuit(1, 1, (Gate(GateKind.RY, (1,), 0),))
    with pytest.raises(ConfigurationError):
        ShadowCircuit(1, 1, (Gate(GateKind.RY, (0,), 0), Gate(GateKind.RY, (0,), 0)))
    with pytest.raises(ConfigurationError):
        ShadowCircuit(1, 1, (Gate(GateKind.RY, (0,), 1),))
    c = build_ansatz_mnist(2, 2)
    assert ShadowCircuit.from_dict(c.to_dict()).to_dict() == c.to_dict()


def test_ensemble_invariants():
    c = build_ansatz_mnist(2, 1)
    with pytest.raises(ConfigurationError):
        ShadowEnsemble([c], [np.zeros(7)])
    with pytest.raises(ConfigurationError):
        ShadowEnsemble([c, build_ansatz_qsd()], [np.zeros(8), np.zeros(1)])
    ens = ShadowEnsemble.random([c, c], np.random.default_rng(0))
    assert all(np.all((t >= 0) & (t <= 2 * np.pi)) for t in ens.thetas)
    assert not np.array_equal(ens.thetas[0], ens.thetas[1])


def test_feature_map_bounds():
    with pytest.raises(DomainError):
        FeatureMap(np.array([[1.5]]))


@given(st.integers(0, 2**32 - 1), st.integers(2, 5), st.sampled_from(["pure", "mixed"]))
def test_features_match_full_register_simulation(seed, n, kind):
    rng = np.random.default_rng(seed)
    q = int(rng.integers(1, min(n, 3) + 1))
    circuit = build_ansatz_mnist(q, 2) if q >= 2 else build_ansatz_qsd()
    theta = rng.uniform(0, 2 * np.pi, circuit.n_params)
    ens = ShadowEnsemble([circuit], [theta])
    state = PureState(random_pure(n, rng)) if kind == "pure" else DensityMatrix(random_density(n, rng))
    fm = extract_features(state, ens)
    assert fm.values.shape == (1, n - q + 1)
    for i in range(n - q + 1):
        assert abs(fm.values[0, i] - direct_feature(state, circuit, theta, i)) < 1e-10


def test_feature_shape_example():
    ens = ShadowEnsemble.random([build_ansatz_mnist(2, 1)] * 3, np.random.default_rng(0))
    fm = extract_features(build_basis_state(4, 5), ens)
    assert fm.values.shape == (3, 3)
    with pytest.raises(DomainError):
        extract_features(build_basis_state(1, 0), ens)


def test_zero_angles_on_ground_state_give_zero_features():
    c = build_ansatz_mnist(2, 1)
    ens = ShadowEnsemble([c], [np.zeros(c.n_params)])
    fm = extract_features(build_basis_state(10, 0), ens)
    assert np.abs(fm.values).max() < 1e-12


def test_qsd_feature_examples():
    ens = ShadowEnsemble([build_ansatz_qsd()], [np.array([np.pi / 2])])
    fm = extract_features(PureState(psi_u(0.0)), ens)
    assert np.allclose(fm.values, [[1.0, 1.0]], atol=1e-12)
    for th in np.linspace(0, 2 * np.pi, 7):
        ens = ShadowEnsemble([build_ansatz_qsd()], [np.array([th])])
        assert abs(extract_features(rho_1(0.37), ens).values[0, 1] - np.sin(th)) < 1e-12
    zero = ShadowEnsemble([build_ansatz_qsd()], [np.array([0.0])])
    s = PureState(psi_u(0.6))
    assert np.allclose(
        extract_features(s, zero).values[0], [expectation_xx(s, [0]), expectation_xx(s, [1])]
    )


def test_feature_locality():
    # two different global states sharing every 2-qubit window marginal
    rng = np.random.default_rng(3)
    ens = ShadowEnsemble.random([build_ansatz_mnist(2, 1)], rng)
    a = np.zeros(8)
    a[0] = a[7] = 1 / np.sqrt(2)
    b = a.copy()
    b[7] = -b[7]
    ghz_p = PureState(a).to_density().matrix
    ghz_m = PureState(b).to_density().matrix
    # equal mixtures with the same marginals: dephased GHZ vs the GHZ mixture
    mix = DensityMatrix(0.5 * (ghz_p + ghz_m))
    deph = DensityMatrix(np.diag(np.diag(ghz_p)))
    fa, fb = extract_features(mix, ens), extract_features(deph, ens)
    assert np.abs(fa.values - fb.values).max() < 1e-10


def test_rdm_cache_paths_agree(rng):
    amps = np.stack([random_pure(4, rng) for _ in range(5)])
    a = rdms_from_amplitudes(amps, 2)
    b = window_rdms([PureState(x) for x in amps], 2)
    c = window_rdms([PureState(x).to_density() for x in amps], 2)
    assert np.abs(a.matrices() - b.matrices()).max() < 1e-12
    assert np.abs(b.matrices() - c.matrices()).max() < 1e-12
    real = rdms_from_amplitudes(amps.real / np.linalg.norm(amps.real, axis=1, keepdims=True), 2)
    assert real.imag is None


def test_shifted_observables_match_direct(rng):
    c = build_ansatz_mnist(3, 2)
    theta = rng.uniform(0, 2 * np.pi, c.n_params)
    stack = c.shifted_observables(theta)
    L = c.n_params
    assert stack.shape == (1 + 2 * L, 8, 8)
    assert np.abs(stack[0] - c.observable(theta)).max() < 1e-12
    for l in range(L):
        e = np.zeros(L)
        e[l] = np.pi / 2
        assert np.abs(stack[1 + l] - c.observable(theta + e)).max() < 1e-10
        assert np.abs(stack[1 + L + l] - c.observable(theta - e)).max() < 1e-10


def test_sampled_features_deterministic_and_bounded():
    cfg = ShotConfig(ShotMode.SAMPLED, shots=50, seed=9)
    ens = ShadowEnsemble.random([build_ansatz_mnist(2, 1)], np.random.default_rng(1))
    s = PureState(random_pure(4, np.random.default_rng(2)))
    a = extract_features(s, ens, cfg, sample_key=3)
    b = extract_features(s, ens, cfg, sample_key=3)
    assert np.array_equal(a.values, b.values)
    assert np.all(np.abs(a.values) <= 1)
    assert np.allclose((a.values + 1) * 25, np.round((a.values + 1) * 25))


def test_parameter_counts():
    rng = np.random.default_rng(0)

    def ens(c, n_s):
        return ShadowEnsemble.random([c] * n_s, rng)

    assert count_parameters(10, ens(build_ansatz_mnist(2, 1), 1), 1) == 18
    assert count_parameters(10, ens(build_ansatz_mnist(2, 1), 2), 1) == 35
    assert count_parameters(10, ens(build_ansatz_mnist(4, 5), 5), 10) == 520
    assert count_parameters(10, ens(build_ansatz_mnist(4, 5), 9), 10) == 928
    assert count_parameters(50, ens(build_ansatz_layered(2, 20), 1), 1) == 90
    with pytest.raises(DomainError):
        count_parameters(10, ens(build_ansatz_qsd(), 1), 0)


def test_ry_cnot_circuit():
    c = build_ansatz_ry_cnot(3)
    assert c.n_params == 6
    assert [g.kind.value for g in c.gates] == ["RY"] * 3 + ["CNOT"] * 2 + ["RY"] * 3
