"""Dense state-vector / density-matrix kernels for small qubit registers.

Qubit ordering is big-endian throughout the package: qubit 0 is the most
significant bit of a basis-state index, so ``|q0 q1 ... q_{n-1}>`` has index
``q0 * 2**(n-1) + ... + q_{n-1}``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import ConfigurationError, DomainError, UnsupportedWindowError

I2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
CNOT_MATRIX = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)

STATE_TOL = 1e-10
PSD_TOL = 1e-9


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------


def _qubits_for_dim(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if n < 1 or 2**n != dim:
        raise DomainError(f"dimension {dim} is not a power of two >= 2")
    return n


@dataclass(frozen=True, eq=False)
class PureState:
    """Normalised amplitude vector of an n-qubit register."""

    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.ndim != 1:
            raise DomainError("amplitudes must be a vector")
        _qubits_for_dim(amps.shape[0])
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > STATE_TOL:
            raise DomainError(f"state norm is {norm!r}, expected 1")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n_qubits(self) -> int:
        return _qubits_for_dim(self.amplitudes.shape[0])

    @classmethod
    def from_vector(cls, vec: Sequence[complex] | np.ndarray) -> "PureState":
        """Normalise ``vec`` and wrap it."""
        v = np.asarray(vec, dtype=complex)
        norm = np.linalg.norm(v)
        if norm == 0:
            raise DomainError("cannot normalise the zero vector")
        return cls(v / norm)

    def to_density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, positive semi-definite, unit-trace matrix."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        rho = np.asarray(self.matrix, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise DomainError("density matrix must be square")
        _qubits_for_dim(rho.shape[0])
        if np.max(np.abs(rho - rho.conj().T)) > STATE_TOL:
            raise DomainError("density matrix is not Hermitian")
        tr = np.trace(rho).real
        if abs(tr - 1.0) > STATE_TOL:
            raise DomainError(f"density matrix trace is {tr!r}, expected 1")
        if np.linalg.eigvalsh(rho).min() < -PSD_TOL:
            raise DomainError("density matrix has a negative eigenvalue")
        object.__setattr__(self, "matrix", rho)

    @property
    def n_qubits(self) -> int:
        return _qubits_for_dim(self.matrix.shape[0])


State = Union[PureState, DensityMatrix]


def build_basis_state(n: int, bitstring: int) -> PureState:
    """Computational basis state ``|bitstring>`` on ``n`` qubits."""
    if n <= 0:
        raise DomainError(f"n must be positive, got {n}")
    if not 0 <= bitstring < 2**n:
        raise DomainError(f"bitstring {bitstring} out of range for {n} qubits")
    amps = np.zeros(2**n, dtype=complex)
    amps[bitstring] = 1.0
    return PureState(amps)


# ---------------------------------------------------------------------------
# Gates
# ---------------------------------------------------------------------------


class GateKind(str, enum.Enum):
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    X = "X"
    Y = "Y"
    Z = "Z"
    CNOT = "CNOT"
    IDENTITY = "IDENTITY"

    @property
    def is_rotation(self) -> bool:
        return self in (GateKind.RX, GateKind.RY, GateKind.RZ)

    @property
    def arity(self) -> int:
        return 2 if self is GateKind.CNOT else 1


_GENERATORS = {
    GateKind.RX: PAULI_X,
    GateKind.RY: PAULI_Y,
    GateKind.RZ: PAULI_Z,
}
_FIXED = {
    GateKind.X: PAULI_X,
    GateKind.Y: PAULI_Y,
    GateKind.Z: PAULI_Z,
    GateKind.IDENTITY: I2,
    GateKind.CNOT: CNOT_MATRIX,
}


@dataclass(frozen=True)
class Gate:
    """One gate of a circuit; ``targets`` is ``(control, target)`` for CNOT."""

    kind: GateKind
    targets: tuple[int, ...]
    param: int | None = None

    def __post_init__(self) -> None:
        kind = GateKind(self.kind)
        targets = tuple(int(t) for t in self.targets)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "targets", targets)
        if len(targets) != kind.arity:
            raise ConfigurationError(
                f"{kind.value} takes {kind.arity} target(s), got {targets}"
            )
        if len(set(targets)) != len(targets) or min(targets) < 0:
            raise ConfigurationError(f"invalid targets {targets}")
        if kind.is_rotation and self.param is None:
            raise ConfigurationError(f"{kind.value} needs a parameter index")
        if not kind.is_rotation and self.param is not None:
            raise ConfigurationError(f"{kind.value} takes no parameter")

    @property
    def generator(self) -> np.ndarray:
        """Pauli ``P`` of the rotation ``exp(-i theta P / 2)``."""
        if not self.kind.is_rotation:
            raise DomainError(f"{self.kind.value} has no generator")
        return _GENERATORS[self.kind]

    def matrix(self, params: np.ndarray | Sequence[float] | None = None) -> np.ndarray:
        if not self.kind.is_rotation:
            return _FIXED[self.kind]
        if params is None or self.param >= len(params):
            raise ConfigurationError(
                f"parameter index {self.param} out of bounds for "
                f"{0 if params is None else len(params)} parameters"
            )
        return rotation(self.kind, float(params[self.param]))

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value, "targets": list(self.targets)}
        if self.param is not None:
            d["param"] = self.param
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Gate":
        return cls(GateKind(d["kind"]), tuple(d["targets"]), d.get("param"))


def rotation(kind: GateKind, theta: float) -> np.ndarray:
    """``exp(-i theta P / 2) = cos(theta/2) I - i sin(theta/2) P``."""
    P = _GENERATORS[GateKind(kind)]
    return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * P


def circuit_width(gates: Iterable[Gate]) -> int:
    return 1 + max((max(g.targets) for g in gates), default=-1)


def embed(op: np.ndarray, targets: Sequence[int], width: int) -> np.ndarray:
    """Lift ``op`` acting on ``targets`` to the full ``2**width`` space."""
    dim = 2**width
    out = apply_matrix(np.eye(dim, dtype=complex).reshape((2,) * width + (dim,)), op, targets)
    return out.reshape(dim, dim)


def apply_matrix(tensor: np.ndarray, op: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Contract a ``2**k`` square ``op`` into the given qubit ``axes`` of ``tensor``."""
    k = len(axes)
    op_t = op.reshape((2,) * (2 * k))
    out = np.tensordot(op_t, tensor, axes=(list(range(k, 2 * k)), list(axes)))
    return np.moveaxis(out, list(range(k)), list(axes))


def circuit_unitary(gates: Sequence[Gate], params: np.ndarray | Sequence[float], width: int | None = None) -> np.ndarray:
    """Dense unitary of ``gates`` (first gate applied first)."""
    width = circuit_width(gates) if width is None else width
    dim = 2**width
    t = np.eye(dim, dtype=complex).reshape((2,) * width + (dim,))
    for g in gates:
        t = apply_matrix(t, g.matrix(params), g.targets)
    return t.reshape(dim, dim)


def apply_circuit(state: State, gates: Sequence[Gate], params, offset: int = 0) -> State:
    """Apply ``gates`` on qubits ``[offset, offset + width)`` of ``state``.

    Pure inputs evolve as ``U|psi>``, mixed inputs as ``U rho U^dagger``.
    """
    params = np.asarray(params, dtype=float)
    n = state.n_qubits
    width = circuit_width(gates)
    if offset < 0 or offset + width > n:
        raise DomainError(f"window [{offset}, {offset + width}) exceeds {n} qubits")
    mats = [(g.matrix(params), [offset + t for t in g.targets]) for g in gates]
    if isinstance(state, PureState):
        t = state.amplitudes.reshape((2,) * n)
        for m, axes in mats:
            t = apply_matrix(t, m, axes)
        return PureState(t.reshape(-1))
    t = state.matrix.reshape((2,) * (2 * n))
    for m, axes in mats:
        t = apply_matrix(t, m, axes)
        t = apply_matrix(t, m.conj(), [n + a for a in axes])
    dim = 2**n
    out = t.reshape(dim, dim)
    return DensityMatrix(0.5 * (out + out.conj().T))


# ---------------------------------------------------------------------------
# Windows, expectations and partial traces
# ---------------------------------------------------------------------------


def check_window(window: Sequence[int], n: int) -> tuple[int, int]:
    """Validate a contiguous qubit window; return ``(start, width)``."""
    w = [int(q) for q in window]
    if not w:
        raise DomainError("empty qubit window")
    if w != list(range(w[0], w[0] + len(w))):
        raise UnsupportedWindowError(f"window {w} is not contiguous and increasing")
    if w[0] < 0 or w[-1] >= n:
        raise DomainError(f"window {w} outside a {n}-qubit register")
    return w[0], len(w)


def _xmask(start: int, width: int, n: int) -> int:
    mask = 0
    for q in range(start, start + width):
        mask |= 1 << (n - 1 - q)
    return mask


def expectation_xx(state: State, window: Sequence[int]) -> float:
    """``Tr(rho X^{(x) window})`` with identity on the remaining qubits."""
    n = state.n_qubits
    start, width = check_window(window, n)
    idx = np.arange(2**n)
    flipped = idx ^ _xmask(start, width, n)
    if isinstance(state, PureState):
        a = state.amplitudes
        return float(np.real(np.vdot(a, a[flipped])))
    return float(np.real(state.matrix[idx, flipped].sum()))


def partial_trace_window(state: State, window: Sequence[int]) -> DensityMatrix:
    """Reduced density matrix of a contiguous window."""
    n = state.n_qubits
    start, width = check_window(window, n)
    if isinstance(state, PureState):
        rdm = pure_window_rdms(state.amplitudes[None, :], start, width)[0]
    else:
        rdm = mixed_window_rdms(state.matrix[None, :, :], start, width)[0]
    return DensityMatrix(rdm)


def pure_window_rdms(amps: np.ndarray, start: int, width: int) -> np.ndarray:
    """Window RDMs of a batch of amplitude vectors, shape ``(N, d, d)``."""
    N, dim = amps.shape
    n = _qubits_for_dim(dim)
    left, d = 2**start, 2**width
    right = 2 ** (n - start - width)
    psi = amps.reshape(N, left, d, right)
    return np.einsum("nadb,naeb->nde", psi, psi.conj())


def mixed_window_rdms(rhos: np.ndarray, start: int, width: int) -> np.ndarray:
    """Window RDMs of a batch of density matrices, shape ``(N, d, d)``."""
    N, dim, _ = rhos.shape
    n = _qubits_for_dim(dim)
    left, d = 2**start, 2**width
    right = 2 ** (n - start - width)
    r = rhos.reshape(N, left, d, right, left, d, right)
    return np.einsum("nadbaeb->nde", r)


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b||_1 / 2`` for Hermitian matrices."""
    return float(0.5 * np.abs(np.linalg.eigvalsh(a - b)).sum())


# ---------------------------------------------------------------------------
# Shot model
# ---------------------------------------------------------------------------


class ShotMode(str, enum.Enum):
    EXACT = "EXACT"
    SAMPLED = "SAMPLED"


@dataclass(frozen=True)
class ShotConfig:
    mode: ShotMode = ShotMode.EXACT
    shots: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", ShotMode(self.mode))
        if self.mode is ShotMode.SAMPLED and int(self.shots) < 1:
            raise ConfigurationError(f"shots must be >= 1, got {self.shots}")

    @property
    def exact(self) -> bool:
        return self.mode is ShotMode.EXACT

    def rng(self, *key: int) -> np.random.Generator:
        """Generator for the stream identified by ``key`` under this seed."""
        return np.random.default_rng([int(self.seed) & (2**64 - 1), *map(int, key)])

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "shots": int(self.shots), "seed": int(self.seed)}


EXACT = ShotConfig()


def sample_expectations(
    exact: np.ndarray, cfg: ShotConfig, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Vectorised shot model for +/-1-valued observables.

    Each entry is replaced by ``2 k / shots - 1`` with
    ``k ~ Binomial(shots, (1 + exact) / 2)``; EXACT mode is a passthrough.
    """
    exact = np.asarray(exact, dtype=float)
    if np.any(np.abs(exact) > 1 + PSD_TOL):
        raise DomainError("expectation values must lie in [-1, 1]")
    if cfg.exact:
        return exact
    rng = cfg.rng() if rng is None else rng
    p = np.clip((1.0 + exact) / 2.0, 0.0, 1.0)
    k = rng.binomial(int(cfg.shots), p)
    return 2.0 * k / cfg.shots - 1.0


def sample_expectation(
    exact_value: float, cfg: ShotConfig, rng: np.random.Generator | None = None
) -> float:
    return float(sample_expectations(np.asarray(exact_value), cfg, rng))
