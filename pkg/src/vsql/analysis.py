"""Numerical checks of the model's theoretical properties.

Every verifier returns a :class:`Report` holding named pass/fail checks with
the measured values, so results can be serialised and compared across runs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import LabeledState, rho_1, rho_2
from .errors import DomainError
from .head import ClassifierHead, forward_batch, predict_labels
from .qcore import I2, GateKind, PureState, apply_matrix, partial_trace_window, rotation, trace_distance
from .shadow import (
    SHIFT,
    ShadowEnsemble,
    WindowRdms,
    batch_features,
    build_ansatz_mnist,
    build_ansatz_qsd,
    build_ansatz_ry_cnot,
    window_rdms,
)

_KET0 = np.array([1.0, 0.0])


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float | list | None = None
    threshold: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "value": self.value, "threshold": self.threshold}


@dataclass
class Report:
    name: str
    checks: list[Check] = field(default_factory=list)
    data: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, value=None, threshold: str = "") -> Check:
        if isinstance(value, (np.floating, np.integer)):
            value = value.item()
        c = Check(name, bool(passed), value, threshold)
        self.checks.append(c)
        return c

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "data": self.data,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Gradient variance scan
# ---------------------------------------------------------------------------


def product_window(n: int, start: int, width: int) -> np.ndarray:
    """Amplitudes of qubits ``start..start+width-1`` of ``prod_j RY(2 pi j / n)|0>``."""
    if not (0 <= start and start + width <= n):
        raise DomainError(f"window [{start}, {start + width}) outside {n} qubits")
    out = np.ones(1)
    for j in range(start, start + width):
        out = np.kron(out, rotation(GateKind.RY, 2 * np.pi * j / n).real @ _KET0)
    return out


def predicted_variance(n_qsc: int, purity: float = 1.0) -> float:
    """``-C / (4 (4^q - 1))`` with ``C = 2 (1 - 2^q Tr rho^2)``."""
    c = 2.0 * (1.0 - 2**n_qsc * purity)
    return -c / (4.0 * (4**n_qsc - 1))


def evolve_batch(circuit, thetas: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """``U(theta_b)|phi>`` for every row ``theta_b``; returns ``(B, 2**n_qsc)``."""
    thetas = np.atleast_2d(thetas)
    B, q = thetas.shape[0], circuit.n_qsc
    psi = np.broadcast_to(np.asarray(phi, dtype=complex), (B, 2**q)).reshape((B,) + (2,) * q)
    for g in circuit.gates:
        axes = [1 + t for t in g.targets]
        if g.param is None:
            psi = apply_matrix(psi, g.matrix(), axes)
            continue
        half = thetas[:, g.param, None, None] / 2
        mats = np.cos(half) * I2 - 1j * np.sin(half) * g.generator
        psi = np.moveaxis(psi, axes[0], -1)
        psi = np.einsum("bij,b...j->b...i", mats, psi)
        psi = np.moveaxis(psi, -1, axes[0])
    return psi.reshape(B, -1)


def xx_expectations(psi: np.ndarray) -> np.ndarray:
    """``<psi|X...X|psi>`` per row; the all-X string maps index k to d-1-k."""
    return np.real(np.sum(psi.conj() * psi[:, ::-1], axis=1))


@dataclass(frozen=True)
class VarianceRow:
    n: int
    n_qsc: int
    trials: int
    grad_mean: float
    grad_variance: float


@dataclass
class VarianceScanResult:
    rows: list[VarianceRow]

    def __post_init__(self) -> None:
        for r in self.rows:
            if r.trials < 100:
                raise DomainError("a variance row needs at least 100 trials")

    def get(self, n: int, n_qsc: int) -> VarianceRow:
        for r in self.rows:
            if (r.n, r.n_qsc) == (n, n_qsc):
                return r
        raise KeyError((n, n_qsc))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "n_qsc", "trials", "mean", "variance"])
            for r in self.rows:
                w.writerow([r.n, r.n_qsc, r.trials, repr(r.grad_mean), repr(r.grad_variance)])

    def report(self) -> Report:
        """Mean-zero, n-independence and width-scaling checks."""
        rep = Report("bp-scan")
        for r in self.rows:
            bound = 3.0 * np.sqrt(r.grad_variance / r.trials)
            rep.add(
                f"mean_zero(n={r.n},n_qsc={r.n_qsc})",
                abs(r.grad_mean) < bound,
                r.grad_mean,
                f"|mean| < {bound:.3g}",
            )
            rep.add(f"variance_positive(n={r.n},n_qsc={r.n_qsc})", r.grad_variance > 0, r.grad_variance, "> 0")
        by_q: dict[int, list[VarianceRow]] = {}
        for r in self.rows:
            by_q.setdefault(r.n_qsc, []).append(r)
        for q, rows in sorted(by_q.items()):
            if len({r.n for r in rows}) > 1:
                vs = [r.grad_variance for r in rows]
                ratio = max(vs) / min(vs)
                rep.add(f"n_independence(n_qsc={q})", ratio <= 3.0, ratio, "max/min <= 3")
        by_n: dict[int, dict[int, VarianceRow]] = {}
        for r in self.rows:
            by_n.setdefault(r.n, {})[r.n_qsc] = r
        for n, rows in sorted(by_n.items()):
            if 2 in rows and 4 in rows:
                ratio = rows[2].grad_variance / rows[4].grad_variance
                rep.add(f"width_ratio(n={n},2->4)", 2.0 <= ratio <= 9.0, ratio, "in [2, 9]")
        rep.data["rows"] = [r.__dict__ for r in self.rows]
        rep.data["predicted_variance"] = {q: predicted_variance(q) for q in sorted(by_q)}
        return rep


def bp_variance_scan(
    pairs: Sequence[tuple[int, int]], trials: int = 2000, seed: int = 0
) -> VarianceScanResult:
    """Sample ``d o_1 / d theta_1`` over uniformly random angles.

    Uses the RY / CNOT-chain / RY circuit on the first window of the product
    state ``prod_j RY(2 pi j / n)|0>``.  Only the window's own qubits are
    simulated, so ``n`` can be large.
    """
    if trials < 100:
        raise DomainError("trials must be >= 100")
    rows = []
    for n, q in pairs:
        if n < q:
            raise DomainError(f"n={n} is smaller than n_qsc={q}")
        circuit = build_ansatz_ry_cnot(q)
        phi = product_window(n, 0, q)
        rng = np.random.default_rng([seed, n, q])
        thetas = rng.uniform(0.0, 2 * np.pi, (trials, circuit.n_params))
        plus, minus = thetas.copy(), thetas.copy()
        plus[:, 0] += SHIFT
        minus[:, 0] -= SHIFT
        grads = 0.5 * (
            xx_expectations(evolve_batch(circuit, plus, phi))
            - xx_expectations(evolve_batch(circuit, minus, phi))
        )
        rows.append(VarianceRow(n, q, trials, float(grads.mean()), float(grads.var(ddof=1))))
    return VarianceScanResult(rows)


# ---------------------------------------------------------------------------
# Loss landscape slice
# ---------------------------------------------------------------------------


@dataclass
class LandscapeSlice:
    theta1: np.ndarray  # (G*G,)
    theta2: np.ndarray
    loss: np.ndarray

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.loss)):
            raise DomainError("landscape contains non-finite losses")

    @property
    def loss_range(self) -> float:
        return float(self.loss.max() - self.loss.min())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta1", "theta2", "loss"])
            for row in zip(self.theta1, self.theta2, self.loss):
                w.writerow([repr(float(x)) for x in row])


def product_state_rdms(n: int, n_qsc: int) -> WindowRdms:
    """Exact window RDMs of ``prod_j RY(2 pi j / n)|0>`` without the full vector."""
    if n < n_qsc:
        raise DomainError(f"n={n} is smaller than n_qsc={n_qsc}")
    W = n - n_qsc + 1
    wins = np.stack([product_window(n, i, n_qsc) for i in range(W)])
    real = np.einsum("wa,wb->wab", wins, wins).reshape(1, W, -1)
    return WindowRdms(real, None, n, n_qsc)


def landscape_slice(n: int, n_qsc: int, grid_size: int = 50, seed: int = 0) -> LandscapeSlice:
    """Label-0 loss over ``(theta_1, theta_2)`` with the rest fixed at pi/4, b = 0."""
    if grid_size < 2:
        raise DomainError("grid_size must be >= 2")
    circuit = build_ansatz_ry_cnot(n_qsc)
    if n < n_qsc:
        raise DomainError(f"n={n} is smaller than n_qsc={n_qsc}")
    rng = np.random.default_rng([seed, n, n_qsc])
    head = ClassifierHead(rng.standard_normal((1, n - n_qsc + 1)), np.zeros(1))
    axis = np.linspace(0.0, 2 * np.pi, grid_size)
    t1, t2 = np.meshgrid(axis, axis, indexing="ij")
    t1, t2 = t1.ravel(), t2.ravel()
    thetas = np.full((t1.size, circuit.n_params), np.pi / 4)
    thetas[:, 0], thetas[:, 1] = t1, t2
    feats = np.stack(
        [xx_expectations(evolve_batch(circuit, thetas, product_window(n, i, n_qsc))) for i in range(n - n_qsc + 1)],
        axis=1,
    )
    probs, _ = forward_batch(feats, head)
    loss = 0.5 * probs[:, 0] ** 2
    return LandscapeSlice(t1, t2, loss)


def landscape_report(n: int = 10, narrow: int = 2, wide: int = 10, grid_size: int = 50, seed: int = 0) -> Report:
    rep = Report("landscape")
    a = landscape_slice(n, narrow, grid_size, seed)
    b = landscape_slice(n, wide, grid_size, seed)
    rep.add("complete", len(a.loss) == grid_size**2, len(a.loss), f"== {grid_size ** 2}")
    rep.add(
        "loss_bounds",
        bool(np.all((a.loss >= 0) & (a.loss <= 0.5)) and np.all((b.loss >= 0) & (b.loss <= 0.5))),
        [float(min(a.loss.min(), b.loss.min())), float(max(a.loss.max(), b.loss.max()))],
        "in [0, 0.5]",
    )
    rep.add(
        f"range_shrinks(n_qsc {narrow}->{wide})",
        a.loss_range > b.loss_range,
        [a.loss_range, b.loss_range],
        "narrow > wide",
    )
    return rep


# ---------------------------------------------------------------------------
# Closed-form features of the two-family discrimination task
# ---------------------------------------------------------------------------


def closed_form_features(theta: float, u: np.ndarray, v: np.ndarray):
    """``(o1(u), o2(u), o1(v), o2(v))`` for the single-RY 1-local circuit."""
    s, c = np.sin(theta), np.cos(theta)
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    o1u = (1 - 2 * u**2) * s + 2 * u * np.sqrt(1 - u**2) * c
    o2u = np.full_like(u, s)
    o1v = (1 - 2 * v**2) * s
    o2v = (2 * v**2 - 1) * s
    return o1u, o2u, o1v, o2v


def _qsd_features(theta: float, rdms: WindowRdms) -> np.ndarray:
    ens = ShadowEnsemble([build_ansatz_qsd()], [np.array([theta])])
    return batch_features(rdms, ens)[:, 0, :]  # (N, 2)


def verify_theorem3(
    theta_grid: Sequence[float] | None = None, uv_grid: Sequence[float] | None = None
) -> Report:
    """Simulator features against closed forms, plus the separating construction.

    The construction is ``theta = pi/4``, ``w = (-1, -2)`` and
    ``b = (w1 - w2) sin theta``, which gives ``z_u < 0 <= z_v`` for every
    ``u, v`` with equality only at ``u = v = 1``.
    """
    thetas = np.linspace(0, 2 * np.pi, 100) if theta_grid is None else np.asarray(theta_grid, float)
    uv = np.linspace(0, 1, 100) if uv_grid is None else np.asarray(uv_grid, float)
    if thetas.size == 0 or uv.size == 0:
        raise DomainError("grids must be nonempty")
    rdm_u = window_rdms([rho_1(x) for x in uv], 1)
    rdm_v = window_rdms([rho_2(x) for x in uv], 1)
    worst = 0.0
    for th in thetas:
        fu, fv = _qsd_features(th, rdm_u), _qsd_features(th, rdm_v)
        o1u, o2u, o1v, o2v = closed_form_features(th, uv, uv)
        dev = max(
            np.abs(fu[:, 0] - o1u).max(),
            np.abs(fu[:, 1] - o2u).max(),
            np.abs(fv[:, 0] - o1v).max(),
            np.abs(fv[:, 1] - o2v).max(),
        )
        worst = max(worst, float(dev))
    rep = Report("theorem3")
    rep.add("max_deviation", worst < 1e-10, worst, "< 1e-10")

    theta = np.pi / 4
    w = np.array([-1.0, -2.0])
    b = (w[0] - w[1]) * np.sin(theta)
    head = ClassifierHead(w[None, :], np.array([b]))
    z_u = _qsd_features(theta, rdm_u) @ w + b
    z_v = _qsd_features(theta, rdm_v) @ w + b
    interior_u, interior_v = uv < 1, uv < 1
    rep.add("z_u_negative", bool(np.all(z_u[interior_u] < 0)), float(z_u[interior_u].max(initial=-np.inf)), "< 0 for u < 1")
    rep.add("z_v_nonnegative", bool(np.all(z_v >= -1e-12)), float(z_v.min()), ">= 0")
    labels_u = predict_labels(forward_batch(_qsd_features(theta, rdm_u)[interior_u], head)[0])
    labels_v = predict_labels(forward_batch(_qsd_features(theta, rdm_v)[interior_v], head)[0])
    acc = float(np.mean(np.concatenate([labels_u == 0, labels_v == 1])))
    rep.add("construction_accuracy", acc == 1.0, acc, "== 1 for u, v < 1")

    edge_u = _qsd_features(theta, window_rdms([rho_1(1.0)], 1)) @ w + b
    edge_v = _qsd_features(theta, window_rdms([rho_2(1.0)], 1)) @ w + b
    rep.add("edge_equal", abs(edge_u[0] - edge_v[0]) < 1e-10, [float(edge_u[0]), float(edge_v[0])], "z_u == z_v at u = v = 1")

    f = _qsd_features(np.pi / 2, window_rdms([rho_2(1.0)], 1))[0]
    rep.add("v1_at_half_pi", bool(np.allclose(f, [-1.0, 1.0], atol=1e-10)), f.tolist(), "(o1, o2) == (-1, 1)")
    rep.data = {"n_theta": int(thetas.size), "n_uv": int(uv.size), "w": w.tolist(), "b": float(b)}
    return rep


# ---------------------------------------------------------------------------
# Indistinguishable local marginals
# ---------------------------------------------------------------------------


def ghz_like_pair() -> tuple[PureState, PureState]:
    """``(|000> + |110>)/sqrt 2`` and ``(|000> - |110>)/sqrt 2``."""
    a = np.zeros(8, dtype=complex)
    a[0b000] = a[0b110] = 1 / np.sqrt(2)
    b = a.copy()
    b[0b110] *= -1
    return PureState(a), PureState(b)


def verify_corollary1(seed: int = 0, copies: int = 10, max_epochs: int = 30) -> Report:
    """Equal 1-local marginals hide the pair; 2-local windows separate it."""
    from .train import TrainConfig, accuracy, fit, init_model, prepare

    s0, s1 = ghz_like_pair()
    rep = Report("corollary1")
    diffs = []
    for q in range(3):
        r0 = partial_trace_window(s0, [q]).matrix
        r1 = partial_trace_window(s1, [q]).matrix
        diffs.append(float(np.abs(r0 - r1).max()))
    rep.add("one_local_rdms_equal", max(diffs) < 1e-10, max(diffs), "< 1e-10")

    r0 = partial_trace_window(s0, [0, 1]).matrix
    r1 = partial_trace_window(s1, [0, 1]).matrix
    td = trace_distance(r0, r1)
    rep.add("two_local_rdms_differ", td > 0.4, td, "trace distance > 0.4")

    rdms = window_rdms([s0, s1], 1)
    worst = 0.0
    for th in np.linspace(0, 2 * np.pi, 100):
        f = _qsd_features(th, rdms)
        worst = max(worst, float(np.abs(f[0] - f[1]).max()))
    rep.add("one_local_features_equal", worst < 1e-10, worst, "< 1e-10 on 100 angles")

    data = [LabeledState(s0, 0)] * copies + [LabeledState(s1, 1)] * copies
    ensemble, head = init_model([build_ansatz_mnist(2, 1)], 3, 1, seed)
    cfg = TrainConfig(learning_rate=0.1, batch_size=1, epochs=max_epochs, seed=seed, eval_every=copies)
    ckpt, history = fit(data, ensemble, head, cfg)
    acc = accuracy(prepare(data, 2), ckpt.ensemble(), ckpt.head())
    rep.add("two_local_classifier", acc == 1.0, acc, "accuracy == 1")
    rep.data = {"one_local_diffs": diffs, "iterations": len(history)}
    return rep
