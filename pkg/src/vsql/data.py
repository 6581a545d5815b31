"""Dataset generators and loaders.

* two- and three-family 2-qubit state discrimination sets,
* Pauli-noised 3-qubit state pairs,
* MNIST IDX ingestion with zero-padded amplitude encoding on 10 qubits.
"""

from __future__ import annotations

import gzip
import json
import os
import shutil
import struct
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, EncodingError, ParseError
from .qcore import PAULI_X, PAULI_Y, PAULI_Z, DensityMatrix, PureState, State, embed

DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class LabeledState:
    state: State
    label: int


# ---------------------------------------------------------------------------
# Quantum state discrimination families
# ---------------------------------------------------------------------------


def psi_u(u: float) -> np.ndarray:
    return np.array([np.sqrt(1 - u * u), 0.0, u, 0.0], dtype=complex)


def psi_v(v: float, sign: int = 1) -> np.ndarray:
    return np.array([0.0, sign * np.sqrt(1 - v * v), v, 0.0], dtype=complex)


def psi_t(t: float) -> np.ndarray:
    return np.array([np.sqrt(1 - t * t), t, 0.0, 0.0], dtype=complex)


def rho_1(u: float) -> DensityMatrix:
    a = psi_u(u)
    return DensityMatrix(np.outer(a, a.conj()))


def rho_2(v: float) -> DensityMatrix:
    """Equal mixture of ``psi_{v+}`` and ``psi_{v-}``."""
    p, m = psi_v(v, 1), psi_v(v, -1)
    return DensityMatrix(0.5 * (np.outer(p, p.conj()) + np.outer(m, m.conj())))


def rho_3(t: float) -> DensityMatrix:
    a = psi_t(t)
    return DensityMatrix(np.outer(a, a.conj()))


@dataclass(frozen=True)
class QsdParams:
    u_range: tuple[float, float] = (0.0, 1.0)
    v_range: tuple[float, float] = (0.0, 1.0)
    t_range: tuple[float, float] = (0.0, 1.0)
    n_u: int = 100
    n_v: int = 200
    n_t: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("u_range", "v_range", "t_range"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise DomainError(f"{name}={(lo, hi)} must satisfy 0 <= lo <= hi <= 1")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if min(self.n_u, self.n_v, self.n_t) <= 0:
            raise DomainError("class counts must be positive")


def gen_qsd_binary(params: QsdParams = QsdParams()) -> list[LabeledState]:
    """``n_u`` copies of rho_1(u) (label 0) and ``n_v`` of rho_2(v) (label 1)."""
    rng = np.random.default_rng(params.seed)
    us = rng.uniform(*params.u_range, size=params.n_u)
    vs = rng.uniform(*params.v_range, size=params.n_v)
    items = [LabeledState(rho_1(u), 0) for u in us]
    items += [LabeledState(rho_2(v), 1) for v in vs]
    return items


def gen_qsd_three(params: QsdParams = QsdParams()) -> list[LabeledState]:
    """The binary set plus ``n_t`` copies of rho_3(t) with label 2."""
    items = gen_qsd_binary(params)
    rng = np.random.default_rng([params.seed, 3])
    ts = rng.uniform(*params.t_range, size=params.n_t)
    return items + [LabeledState(rho_3(t), 2) for t in ts]


def train_test_split(
    items: Sequence[LabeledState], train_frac: float, seed: int
) -> tuple[list[LabeledState], list[LabeledState]]:
    """Seeded shuffle followed by a ``train_frac`` cut."""
    if not 0.0 < train_frac < 1.0:
        raise DomainError(f"train_frac must lie in (0, 1), got {train_frac}")
    perm = np.random.default_rng([seed, 0x5EED]).permutation(len(items))
    cut = int(round(train_frac * len(items)))
    shuffled = [items[k] for k in perm]
    return shuffled[:cut], shuffled[cut:]


# ---------------------------------------------------------------------------
# Noisy state pair
# ---------------------------------------------------------------------------

NOISY_PSI0 = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=complex) / 2.0
NOISY_PSI1 = np.array([1, 1, 1, 0, 0, 0, 0, 0], dtype=complex) / np.sqrt(3.0)
_PAULIS = (PAULI_X, PAULI_Y, PAULI_Z)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary from a phase-corrected QR decomposition."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d)).conj()


def pauli_noise(rho: np.ndarray, p: float, pauli: np.ndarray) -> np.ndarray:
    """``(1-p) rho + (p/n) sum_j E_j rho E_j^dag`` with ``E_j`` = ``pauli`` on qubit j."""
    n = int(rho.shape[0]).bit_length() - 1
    out = (1 - p) * rho
    for j in range(n):
        E = embed(pauli, (j,), n)
        out = out + (p / n) * (E @ rho @ E.conj().T)
    return out


def gen_noisy_pair(
    noise_cap: float,
    count_per_class: int = 40,
    seed: int = 0,
    shared_unitary: bool = True,
) -> list[LabeledState]:
    """Pauli-noised images of two high-fidelity 3-qubit states under a random unitary.

    One Pauli ``P`` is drawn uniformly from {X, Y, Z} per generated state and
    applied at all three positions; ``p ~ Uni[0, noise_cap]`` per state.
    """
    if not 0.0 <= noise_cap <= 1.0:
        raise DomainError(f"noise_cap must lie in [0, 1], got {noise_cap}")
    if count_per_class <= 0:
        raise DomainError("count_per_class must be positive")
    rng = np.random.default_rng(seed)
    u_shared = random_unitary(8, rng)
    items: list[LabeledState] = []
    for label, psi in enumerate((NOISY_PSI0, NOISY_PSI1)):
        u = u_shared if shared_unitary else random_unitary(8, rng)
        phi = u @ psi
        base = np.outer(phi, phi.conj())
        for _ in range(count_per_class):
            p = rng.uniform(0.0, noise_cap)
            pauli = _PAULIS[rng.integers(3)]
            rho = pauli_noise(base, p, pauli)
            items.append(LabeledState(DensityMatrix(0.5 * (rho + rho.conj().T)), label))
    return items


def split_per_class(
    items: Sequence[LabeledState], train_frac: float, seed: int
) -> tuple[list[LabeledState], list[LabeledState]]:
    """Stratified split: ``train_frac`` of every class goes to training."""
    rng = np.random.default_rng([seed, 0x5717])
    train, test = [], []
    labels = sorted({it.label for it in items})
    for y in labels:
        cls = [it for it in items if it.label == y]
        perm = rng.permutation(len(cls))
        cut = int(round(train_frac * len(cls)))
        train += [cls[k] for k in perm[:cut]]
        test += [cls[k] for k in perm[cut:]]
    return train, test


# ---------------------------------------------------------------------------
# Dataset JSON
# ---------------------------------------------------------------------------


def _encode_complex(a: np.ndarray) -> list:
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _decode_complex(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def dataset_to_json(
    splits: dict[str, Sequence[LabeledState]], kind: str, meta: dict | None = None
) -> dict:
    states = []
    n_qubits = None
    for split, items in splits.items():
        for it in items:
            n_qubits = it.state.n_qubits
            if isinstance(it.state, PureState):
                entry = {"type": "pure", "data": _encode_complex(it.state.amplitudes)}
            else:
                entry = {"type": "density", "data": _encode_complex(it.state.matrix)}
            states.append({"label": int(it.label), "split": split, **entry})
    return {
        "format_version": DATASET_FORMAT_VERSION,
        "kind": kind,
        "n_qubits": n_qubits,
        "qubit_order": "big-endian",
        "meta": meta or {},
        "states": states,
    }


def dataset_from_json(doc: dict) -> dict[str, list[LabeledState]]:
    if doc.get("format_version") != DATASET_FORMAT_VERSION:
        raise ParseError(f"unsupported dataset format_version {doc.get('format_version')!r}")
    out: dict[str, list[LabeledState]] = {}
    for k, entry in enumerate(doc["states"]):
        data = _decode_complex(entry["data"])
        if entry["type"] == "pure":
            state: State = PureState(data)
        elif entry["type"] == "density":
            state = DensityMatrix(data)
        else:
            raise ParseError(f"state {k}: unknown type {entry['type']!r}")
        out.setdefault(entry.get("split", "all"), []).append(LabeledState(state, int(entry["label"])))
    return out


def save_dataset(path, splits: dict[str, Sequence[LabeledState]], kind: str, meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(dataset_to_json(splits, kind, meta)))


def load_dataset(path) -> tuple[dict[str, list[LabeledState]], dict]:
    doc = json.loads(Path(path).read_text())
    return dataset_from_json(doc), doc


# ---------------------------------------------------------------------------
# MNIST
# ---------------------------------------------------------------------------

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
MNIST_SIZES = {
    "train_images": 47040016,
    "train_labels": 60008,
    "test_images": 7840016,
    "test_labels": 10008,
}
MNIST_URL = "https://ossci-datasets.s3.amazonaws.com/mnist/"


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(path) -> np.ndarray:
    """Parse an IDX image (magic 2051) or label (magic 2049) file, optionally gzipped."""
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise ParseError(f"{path}: truncated header ({len(raw)} bytes at offset 0)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IMAGE_MAGIC:
        if len(raw) < 16:
            raise ParseError(f"{path}: truncated image header, {len(raw)} < 16 bytes")
        dims = struct.unpack(">III", raw[4:16])
        offset = 16
    elif magic == LABEL_MAGIC:
        dims = struct.unpack(">I", raw[4:8])
        offset = 8
    else:
        raise ParseError(f"{path}: bad magic 0x{magic:08x} at offset 0")
    expected = offset + int(np.prod(dims))
    if len(raw) != expected:
        raise ParseError(
            f"{path}: header declares dims {dims} -> {expected} bytes, "
            f"file has {len(raw)} (payload from offset {offset})"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=offset).reshape(dims).copy()


@dataclass(frozen=True, eq=False)
class MnistSplit:
    images: np.ndarray  # (N, 28, 28) uint8
    labels: np.ndarray  # (N,) uint8

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "MnistSplit":
        return MnistSplit(self.images[idx], self.labels[idx])


def default_data_dir() -> Path:
    return Path(os.environ.get("VSQL_DATA_DIR", Path.home() / ".cache" / "vsql" / "mnist"))


def _find(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (data_dir / name).exists():
            return data_dir / name
    raise FileNotFoundError(f"{stem}[.gz] not found in {data_dir}")


def verify_mnist(data_dir=None) -> dict[str, int]:
    """Check all four files parse and have the canonical sizes; return entry counts."""
    data_dir = Path(data_dir) if data_dir else default_data_dir()
    counts = {}
    for key, stem in MNIST_FILES.items():
        raw = _read_bytes(_find(data_dir, stem))
        if len(raw) != MNIST_SIZES[key]:
            raise ParseError(f"{stem}: {len(raw)} bytes, expected {MNIST_SIZES[key]}")
        counts[key] = len(parse_idx(_find(data_dir, stem)))
    return counts


def fetch_mnist(data_dir=None, base_url: str = MNIST_URL) -> Path:
    """Download any missing archives into ``data_dir`` and verify them."""
    data_dir = Path(data_dir) if data_dir else default_data_dir()
    data_dir.mkdir(parents=True, exist_ok=True)
    for stem in MNIST_FILES.values():
        try:
            _find(data_dir, stem)
            continue
        except FileNotFoundError:
            pass
        target = data_dir / (stem + ".gz")
        tmp = target.with_suffix(".part")
        with urllib.request.urlopen(base_url + stem + ".gz", timeout=60) as resp, open(tmp, "wb") as fh:
            shutil.copyfileobj(resp, fh)
        tmp.rename(target)
    verify_mnist(data_dir)
    return data_dir


def load_mnist(data_dir=None) -> dict[str, MnistSplit]:
    data_dir = Path(data_dir) if data_dir else default_data_dir()
    out = {}
    for split in ("train", "test"):
        images = parse_idx(_find(data_dir, MNIST_FILES[f"{split}_images"]))
        labels = parse_idx(_find(data_dir, MNIST_FILES[f"{split}_labels"]))
        if len(images) != len(labels):
            raise ParseError(f"{split}: {len(images)} images but {len(labels)} labels")
        out[split] = MnistSplit(images, labels)
    return out


def filter_digits(split: MnistSplit, digits: Sequence[int]) -> MnistSplit:
    return split.take(np.isin(split.labels, list(digits)))


def filter_binary_01(split: MnistSplit) -> MnistSplit:
    return filter_digits(split, (0, 1))


def stratified_subset(split: MnistSplit, per_class: int, seed: int) -> MnistSplit:
    """``per_class`` random samples of every digit, in shuffled order."""
    rng = np.random.default_rng(seed)
    picks = []
    for y in np.unique(split.labels):
        idx = np.flatnonzero(split.labels == y)
        picks.append(rng.choice(idx, size=min(per_class, len(idx)), replace=False))
    sel = np.concatenate(picks)
    return split.take(rng.permutation(sel))


def normalized_pixels(images: np.ndarray) -> np.ndarray:
    """``(N, 784)`` row-major pixel vectors scaled to [0, 1]."""
    images = np.asarray(images)
    return images.reshape(images.shape[0], -1).astype(float) / 255.0


def encode_amplitudes(images: np.ndarray, n_qubits: int = 10) -> np.ndarray:
    """Batch amplitude encoding: flatten, zero-pad to ``2**n_qubits``, L2-normalise."""
    flat = normalized_pixels(images)
    dim = 2**n_qubits
    if flat.shape[1] > dim:
        raise EncodingError(f"{flat.shape[1]} pixels do not fit in {n_qubits} qubits")
    norms = np.linalg.norm(flat, axis=1)
    if np.any(norms == 0):
        raise EncodingError("cannot encode an all-zero image")
    out = np.zeros((flat.shape[0], dim))
    out[:, : flat.shape[1]] = flat / norms[:, None]
    return out


def encode_amplitude(image: np.ndarray) -> PureState:
    """One 28x28 image as a 10-qubit pure state."""
    image = np.asarray(image)
    return PureState(encode_amplitudes(image[None, ...])[0].astype(complex))
