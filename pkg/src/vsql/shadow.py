"""Shadow circuits, sliding-window feature extraction and parameter counting.

A shadow feature is ``Tr(rho_i U^dag(theta) X..X U(theta))`` where ``rho_i`` is
the reduced state of the contiguous window starting at qubit ``i``.  Features
are evaluated in the Heisenberg picture: the observable ``M = U^dag O U`` is a
small ``2**n_qsc`` matrix, so every window of every sample costs one inner
product with a cached window RDM.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .qcore import (
    EXACT,
    PAULI_X,
    DensityMatrix,
    Gate,
    GateKind,
    PureState,
    ShotConfig,
    State,
    embed,
    mixed_window_rdms,
    pure_window_rdms,
    sample_expectations,
)

SHIFT = np.pi / 2


@dataclass(frozen=True, eq=False)
class ShadowCircuit:
    """Parameterised circuit on a window of ``n_qsc`` qubits."""

    n_qsc: int
    depth: int
    gates: tuple[Gate, ...]
    name: str = "custom"

    def __post_init__(self) -> None:
        object.__setattr__(self, "gates", tuple(self.gates))
        if self.n_qsc < 1:
            raise ConfigurationError("n_qsc must be >= 1")
        for g in self.gates:
            if max(g.targets) >= self.n_qsc:
                raise ConfigurationError(f"gate {g} leaves the {self.n_qsc}-qubit window")
        idx = sorted(g.param for g in self.gates if g.param is not None)
        if idx != list(range(len(idx))):
            raise ConfigurationError(
                "every parameter index in [0, n_params) must appear exactly once"
            )

    @property
    def n_params(self) -> int:
        return sum(1 for g in self.gates if g.param is not None)

    @property
    def dim(self) -> int:
        return 2**self.n_qsc

    # -- compiled pieces ----------------------------------------------------

    @cached_property
    def _observable(self) -> np.ndarray:
        o = np.ones((1, 1), dtype=complex)
        for _ in range(self.n_qsc):
            o = np.kron(o, PAULI_X)
        return o

    @cached_property
    def _embedded(self) -> list[tuple[np.ndarray, int | None]]:
        # fixed gates: full matrix; rotations: embedded generator
        out = []
        for g in self.gates:
            if g.param is None:
                out.append((embed(g.matrix(), g.targets, self.n_qsc), None))
            else:
                out.append((embed(g.generator, g.targets, self.n_qsc), g.param))
        return out

    @cached_property
    def _param_position(self) -> dict[int, int]:
        return {g.param: p for p, g in enumerate(self.gates) if g.param is not None}

    def _gate_mats(self, theta: np.ndarray) -> list[np.ndarray]:
        eye = np.eye(self.dim, dtype=complex)
        mats = []
        for m, l in self._embedded:
            if l is None:
                mats.append(m)
            else:
                t = float(theta[l])
                mats.append(np.cos(t / 2) * eye - 1j * np.sin(t / 2) * m)
        return mats

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ConfigurationError(
                f"expected {self.n_params} parameters, got shape {theta.shape}"
            )
        return theta

    def unitary(self, theta) -> np.ndarray:
        theta = self._check_theta(theta)
        u = np.eye(self.dim, dtype=complex)
        for m in self._gate_mats(theta):
            u = m @ u
        return u

    def observable(self, theta) -> np.ndarray:
        """Heisenberg-picture observable ``U^dag X..X U``."""
        u = self.unitary(theta)
        return u.conj().T @ self._observable @ u

    def split_at(self, theta, l: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(U_<=l, U_>l, P_l)``: circuit up to and including rotation ``l``,
        the remainder, and the embedded Pauli generator of rotation ``l``."""
        theta = self._check_theta(theta)
        if l not in self._param_position:
            raise DomainError(f"parameter index {l} out of range [0, {self.n_params})")
        pos = self._param_position[l]
        mats = self._gate_mats(theta)
        before = np.eye(self.dim, dtype=complex)
        for m in mats[: pos + 1]:
            before = m @ before
        after = np.eye(self.dim, dtype=complex)
        for m in mats[pos + 1 :]:
            after = m @ after
        return before, after, self._embedded[pos][0]

    def shifted_observables(self, theta, shift: float = SHIFT) -> np.ndarray:
        """Stack ``[M(theta), M(theta + s e_l) for l, M(theta - s e_l) for l]``.

        Shape ``(1 + 2 * n_params, d, d)``.  Built from prefix unitaries and
        suffix Heisenberg observables so the cost is linear in gate count.
        """
        theta = self._check_theta(theta)
        mats = self._gate_mats(theta)
        G = len(mats)
        prefix = [np.eye(self.dim, dtype=complex)]
        for m in mats:
            prefix.append(m @ prefix[-1])
        # suffix[p] = (gates after p)^dag O (gates after p)
        suffix = [None] * G
        s = self._observable
        for p in range(G - 1, -1, -1):
            suffix[p] = s
            s = mats[p].conj().T @ s @ mats[p]
        L = self.n_params
        out = np.empty((1 + 2 * L, self.dim, self.dim), dtype=complex)
        u = prefix[-1]
        out[0] = u.conj().T @ self._observable @ u
        eye = np.eye(self.dim, dtype=complex)
        for l, pos in self._param_position.items():
            gen = self._embedded[pos][0]
            b = prefix[pos]
            for k, sign in ((1, 1.0), (1 + L, -1.0)):
                t = theta[l] + sign * shift
                r = np.cos(t / 2) * eye - 1j * np.sin(t / 2) * gen
                rb = r @ b
                out[k + l] = rb.conj().T @ suffix[pos] @ rb
        return out

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_qsc": self.n_qsc,
            "depth": self.depth,
            "gates": [g.to_dict() for g in self.gates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShadowCircuit":
        return cls(
            n_qsc=int(d["n_qsc"]),
            depth=int(d["depth"]),
            gates=tuple(Gate.from_dict(g) for g in d["gates"]),
            name=d.get("name", "custom"),
        )


def build_ansatz_qsd() -> ShadowCircuit:
    """Single RY rotation on a 1-qubit window."""
    return ShadowCircuit(1, 1, (Gate(GateKind.RY, (0,), 0),), name="qsd")


def build_ansatz_mnist(n_qsc: int, depth: int) -> ShadowCircuit:
    """RZ-RY-RZ on every qubit, then ``depth`` blocks of CNOTs + RY layer.

    For two qubits the entangler is CNOT(0->1) followed by CNOT(1->0); wider
    windows use the chain CNOT(j->j+1).  ``n_params = n_qsc * (depth + 3)``.
    """
    if n_qsc < 2:
        raise ConfigurationError(f"n_qsc must be >= 2, got {n_qsc}")
    if depth < 1:
        raise ConfigurationError(f"depth must be >= 1, got {depth}")
    gates: list[Gate] = []
    p = 0
    for kind in (GateKind.RZ, GateKind.RY, GateKind.RZ):
        for q in range(n_qsc):
            gates.append(Gate(kind, (q,), p))
            p += 1
    if n_qsc == 2:
        entangler = [(0, 1), (1, 0)]
    else:
        entangler = [(j, j + 1) for j in range(n_qsc - 1)]
    for _ in range(depth):
        gates.extend(Gate(GateKind.CNOT, ct) for ct in entangler)
        for q in range(n_qsc):
            gates.append(Gate(GateKind.RY, (q,), p))
            p += 1
    return ShadowCircuit(n_qsc, depth, tuple(gates), name="mnist")


def build_ansatz_ry_cnot(n_qsc: int) -> ShadowCircuit:
    """RY layer, adjacent CNOT chain, RY layer (the landscape / BP circuit)."""
    if n_qsc < 1:
        raise ConfigurationError("n_qsc must be >= 1")
    gates = [Gate(GateKind.RY, (q,), q) for q in range(n_qsc)]
    gates += [Gate(GateKind.CNOT, (j, j + 1)) for j in range(n_qsc - 1)]
    gates += [Gate(GateKind.RY, (q,), n_qsc + q) for q in range(n_qsc)]
    return ShadowCircuit(n_qsc, 1, tuple(gates), name="ry_cnot")


def build_ansatz_layered(n_qsc: int, depth: int) -> ShadowCircuit:
    """``depth`` layers of one RY per qubit plus a CNOT chain: ``n_qsc * depth`` angles."""
    if n_qsc < 1 or depth < 1:
        raise ConfigurationError("n_qsc and depth must be >= 1")
    gates: list[Gate] = []
    p = 0
    for _ in range(depth):
        for q in range(n_qsc):
            gates.append(Gate(GateKind.RY, (q,), p))
            p += 1
        gates.extend(Gate(GateKind.CNOT, (j, j + 1)) for j in range(n_qsc - 1))
    return ShadowCircuit(n_qsc, depth, tuple(gates), name="layered")


@dataclass(eq=False)
class ShadowEnsemble:
    """``n_s`` independent shadow circuits sharing one window width."""

    circuits: list[ShadowCircuit]
    thetas: list[np.ndarray]

    def __post_init__(self) -> None:
        self.circuits = list(self.circuits)
        self.thetas = [np.asarray(t, dtype=float).copy() for t in self.thetas]
        if not self.circuits:
            raise ConfigurationError("ensemble needs at least one circuit")
        if len(self.thetas) != len(self.circuits):
            raise ConfigurationError("one parameter vector per circuit required")
        if len({c.n_qsc for c in self.circuits}) != 1:
            raise ConfigurationError("all circuits must share n_qsc")
        for c, t in zip(self.circuits, self.thetas):
            if t.shape != (c.n_params,):
                raise ConfigurationError(
                    f"circuit expects {c.n_params} parameters, got {t.shape}"
                )

    @classmethod
    def random(
        cls, circuits: Sequence[ShadowCircuit], rng: np.random.Generator
    ) -> "ShadowEnsemble":
        """Draw every angle from Uni[0, 2 pi]."""
        return cls(
            list(circuits),
            [rng.uniform(0.0, 2 * np.pi, c.n_params) for c in circuits],
        )

    @property
    def n_s(self) -> int:
        return len(self.circuits)

    @property
    def n_qsc(self) -> int:
        return self.circuits[0].n_qsc

    @property
    def n_params(self) -> int:
        return sum(c.n_params for c in self.circuits)

    def n_windows(self, n: int) -> int:
        if self.n_qsc > n:
            raise DomainError(f"window of {self.n_qsc} qubits exceeds {n}-qubit register")
        return n - self.n_qsc + 1

    def with_thetas(self, thetas: Sequence[np.ndarray]) -> "ShadowEnsemble":
        return ShadowEnsemble(self.circuits, list(thetas))

    def observables(self) -> np.ndarray:
        """``(n_s, d, d)`` Heisenberg observables at the current angles."""
        return np.stack([c.observable(t) for c, t in zip(self.circuits, self.thetas)])


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Shadow features, one row per circuit, one column per window offset."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ConfigurationError("feature map must be 2-D (n_s, windows)")
        if np.any(np.abs(v) > 1 + 1e-9):
            raise DomainError("shadow features must lie in [-1, 1]")
        object.__setattr__(self, "values", v)

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


# ---------------------------------------------------------------------------
# Window RDM cache
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WindowRdms:
    """Flattened window RDMs of a batch of states.

    ``real``/``imag`` have shape ``(N, W, d*d)``; ``imag`` is ``None`` when
    every RDM is real (e.g. amplitude-encoded images), which halves the work.
    """

    real: np.ndarray
    imag: np.ndarray | None
    n_qubits: int
    n_qsc: int

    @property
    def n_samples(self) -> int:
        return self.real.shape[0]

    @property
    def n_windows(self) -> int:
        return self.real.shape[1]

    def take(self, idx) -> "WindowRdms":
        return WindowRdms(
            self.real[idx],
            None if self.imag is None else self.imag[idx],
            self.n_qubits,
            self.n_qsc,
        )

    def matrices(self) -> np.ndarray:
        """Dense ``(N, W, d, d)`` complex RDMs."""
        d = 2**self.n_qsc
        m = self.real.astype(complex)
        if self.imag is not None:
            m = m + 1j * self.imag
        return m.reshape(self.n_samples, self.n_windows, d, d)

    def expectations(self, observables: np.ndarray) -> np.ndarray:
        """``Re Tr(rho_{n,i} M_k)`` for every sample/window/observable: ``(N, W, K)``."""
        K = observables.shape[0]
        # Tr(rho M) = sum_de rho_de M_ed = vec(rho) . vec(M^T)
        mt = np.transpose(observables, (0, 2, 1)).reshape(K, -1)
        out = self.real @ mt.real.T
        if self.imag is not None:
            out -= self.imag @ mt.imag.T
        return out


def _stack_rdms(states: Sequence[State], n_qsc: int) -> np.ndarray:
    n = states[0].n_qubits
    if any(s.n_qubits != n for s in states):
        raise ConfigurationError("all states in a batch must have the same qubit count")
    if n_qsc > n:
        raise DomainError(f"window of {n_qsc} qubits exceeds {n}-qubit register")
    W = n - n_qsc + 1
    d = 2**n_qsc
    out = np.empty((len(states), W, d, d), dtype=complex)
    pure = [k for k, s in enumerate(states) if isinstance(s, PureState)]
    mixed = [k for k, s in enumerate(states) if isinstance(s, DensityMatrix)]
    if pure:
        amps = np.stack([states[k].amplitudes for k in pure])
        for i in range(W):
            out[pure, i] = pure_window_rdms(amps, i, n_qsc)
    if mixed:
        rhos = np.stack([states[k].matrix for k in mixed])
        for i in range(W):
            out[mixed, i] = mixed_window_rdms(rhos, i, n_qsc)
    return out


def window_rdms(states: Sequence[State] | State, n_qsc: int, chunk: int = 4096) -> WindowRdms:
    """Compute and cache all stride-1 window RDMs of ``states``."""
    if isinstance(states, (PureState, DensityMatrix)):
        states = [states]
    states = list(states)
    if not states:
        raise DomainError("no states given")
    parts = [_stack_rdms(states[k : k + chunk], n_qsc) for k in range(0, len(states), chunk)]
    full = np.concatenate(parts)
    N, W, d, _ = full.shape
    flat = full.reshape(N, W, d * d)
    imag = flat.imag
    return WindowRdms(
        np.ascontiguousarray(flat.real),
        None if not np.any(imag) else np.ascontiguousarray(imag),
        states[0].n_qubits,
        n_qsc,
    )


def rdms_from_amplitudes(amps: np.ndarray, n_qsc: int, chunk: int = 4096) -> WindowRdms:
    """Window RDMs straight from a real or complex ``(N, 2**n)`` amplitude array."""
    amps = np.asarray(amps)
    N, dim = amps.shape
    n = int(dim).bit_length() - 1
    if n_qsc > n:
        raise DomainError(f"window of {n_qsc} qubits exceeds {n}-qubit register")
    W, d = n - n_qsc + 1, 2**n_qsc
    is_real = not np.iscomplexobj(amps)
    real = np.empty((N, W, d * d))
    imag = None if is_real else np.empty((N, W, d * d))
    for k in range(0, N, chunk):
        block = amps[k : k + chunk]
        for i in range(W):
            r = pure_window_rdms(block, i, n_qsc).reshape(len(block), d * d)
            real[k : k + chunk, i] = r.real
            if imag is not None:
                imag[k : k + chunk, i] = r.imag
    return WindowRdms(real, imag, n, n_qsc)


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def batch_features(
    rdms: WindowRdms,
    ensemble: ShadowEnsemble,
    shot_cfg: ShotConfig = EXACT,
    sample_keys: Sequence[int] | None = None,
    stream: int = 0,
) -> np.ndarray:
    """Feature tensor ``(N, n_s, W)`` for a cached batch.

    In SAMPLED mode each sample draws from its own stream
    ``(seed, stream, sample_key)`` so results do not depend on batching.
    """
    if rdms.n_qsc != ensemble.n_qsc:
        raise ConfigurationError("RDM window width does not match the ensemble")
    exact = rdms.expectations(ensemble.observables())  # (N, W, n_s)
    feats = np.transpose(exact, (0, 2, 1))
    return sample_rows(feats, shot_cfg, sample_keys, stream)


def sample_rows(
    values: np.ndarray,
    shot_cfg: ShotConfig,
    sample_keys: Sequence[int] | None,
    stream: int,
) -> np.ndarray:
    """Apply the shot model row by row (axis 0 indexes samples)."""
    values = np.clip(values, -1.0, 1.0)
    if shot_cfg.exact:
        return values
    keys = range(values.shape[0]) if sample_keys is None else sample_keys
    out = np.empty_like(values)
    for r, key in enumerate(keys):
        out[r] = sample_expectations(values[r], shot_cfg, shot_cfg.rng(stream, key))
    return out


def extract_features(
    state: State,
    ensemble: ShadowEnsemble,
    shot_cfg: ShotConfig = EXACT,
    sample_key: int = 0,
) -> FeatureMap:
    """Slide every circuit over ``state`` with stride 1 and collect features."""
    ensemble.n_windows(state.n_qubits)
    rdms = window_rdms([state], ensemble.n_qsc)
    return FeatureMap(batch_features(rdms, ensemble, shot_cfg, [sample_key])[0])


def count_parameters(n: int, ensemble: ShadowEnsemble, K: int = 1) -> int:
    """Circuit angles plus head weights and biases; ``K = 1`` is the sigmoid head."""
    if K < 1:
        raise DomainError("K must be >= 1")
    n_features = ensemble.n_s * ensemble.n_windows(n)
    return ensemble.n_params + (n_features + 1) * K
