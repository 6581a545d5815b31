"""``vsql`` command-line entry point.

Exit codes: 0 success, 1 runtime or assertion failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from . import analysis, data
from .errors import ConfigurationError, DomainError, ParseError, VsqlError
from .qcore import ShotConfig
from .shadow import (
    build_ansatz_mnist,
    build_ansatz_qsd,
    build_ansatz_ry_cnot,
    count_parameters,
)
from .train import (
    Checkpoint,
    TrainConfig,
    classical_baseline_fit,
    fit,
    infer,
    init_model,
    predict,
    prepare,
    prepare_images,
)

log = logging.getLogger("vsql")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad invocation or configuration; maps to exit code 2."""


# ---------------------------------------------------------------------------
# Schemas
# ---------------------------------------------------------------------------

_RANGE = {
    "type": "array",
    "items": {"type": "number", "minimum": 0, "maximum": 1},
    "minItems": 2,
    "maxItems": 2,
}
_SHOTS = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": ["EXACT", "SAMPLED"]},
        "shots": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
    },
}
_TRAIN = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "epochs": {"type": "integer", "minimum": 1},
        "max_iterations": {"type": ["integer", "null"], "minimum": 1},
        "optimizer": {"enum": ["adam", "sgd", "ADAM", "SGD"]},
        "adam_beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "adam_beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "adam_eps": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "shot_cfg": _SHOTS,
        "stop_tolerance": {"type": "number", "minimum": 0},
        "theta_init": {"enum": ["UNIFORM_0_2PI"]},
        "head_init": {"enum": ["GAUSSIAN_STD_NORMAL"]},
        "eval_every": {"type": "integer", "minimum": 1},
    },
}
_QSD = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "u_range": _RANGE,
        "v_range": _RANGE,
        "t_range": _RANGE,
        "n_u": {"type": "integer", "minimum": 1},
        "n_v": {"type": "integer", "minimum": 1},
        "n_t": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "train_frac": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    },
}
_NOISY = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "noise_cap": {"type": "number", "minimum": 0, "maximum": 1},
        "count_per_class": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "shared_unitary": {"type": "boolean"},
        "train_frac": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    },
}
_MNIST = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "digits": {
            "type": "array",
            "items": {"type": "integer", "minimum": 0, "maximum": 9},
            "minItems": 2,
            "uniqueItems": True,
        },
        "per_class": {"type": ["integer", "null"], "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "data_dir": {"type": "string"},
    },
}
_ANSATZ = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["qsd", "mnist", "ry_cnot"]},
        "n_qsc": {"type": "integer", "minimum": 1},
        "depth": {"type": "integer", "minimum": 1},
        "n_s": {"type": "integer", "minimum": 1},
    },
}
EXPERIMENTS = ("qsd-binary", "qsd-three", "noisy", "mnist", "mnist-binary", "dataset")
TRAIN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment", "ansatz"],
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "dataset": {"type": "object"},
        "data_path": {"type": "string"},
        "ansatz": _ANSATZ,
        "train": _TRAIN,
        "repeat": {"type": "integer", "minimum": 1},
        "metrics_out": {"type": "string"},
    },
}
GEN_SCHEMAS = {"qsd-binary": _QSD, "qsd-three": _QSD, "noisy": _NOISY, "mnist": _MNIST}
VERIFY_SCHEMAS = {
    "theorem3": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "n_theta": {"type": "integer", "minimum": 1},
            "n_uv": {"type": "integer", "minimum": 1},
        },
    },
    "corollary1": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "seed": {"type": "integer", "minimum": 0},
            "copies": {"type": "integer", "minimum": 1},
        },
    },
    "bp-scan": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "pairs": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 2,
                    "maxItems": 2,
                },
            },
            "trials": {"type": "integer", "minimum": 100},
            "seed": {"type": "integer", "minimum": 0},
        },
    },
    "landscape": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "n": {"type": "integer", "minimum": 1},
            "n_qsc": {"type": "integer", "minimum": 1},
            "grid_size": {"type": "integer", "minimum": 2},
            "seed": {"type": "integer", "minimum": 0},
            "compare_n_qsc": {"type": ["integer", "null"], "minimum": 1},
        },
    },
}
BASELINE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "per_class": {"type": ["integer", "null"], "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "data_dir": {"type": "string"},
        "normalization": {"enum": ["l2", "unit"]},
        "repeat": {"type": "integer", "minimum": 1},
        "train": _TRAIN,
    },
}


def load_config(path: str | None, schema: dict) -> dict:
    if path is None:
        doc = {}
    else:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: malformed JSON: {exc}") from exc
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"invalid config at {where}: {exc.message}") from exc
    return doc


def _validate(doc: dict, schema: dict, what: str) -> None:
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"invalid {what} at {where}: {exc.message}") from exc


def _train_config(doc: dict, seed: int | None) -> TrainConfig:
    d = dict(doc)
    if seed is not None:
        d["seed"] = seed
    if "shot_cfg" in d:
        d["shot_cfg"] = ShotConfig(**d["shot_cfg"])
    return TrainConfig(**d)


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Dataset construction
# ---------------------------------------------------------------------------


def _qsd_params(d: dict, seed: int | None) -> data.QsdParams:
    kw = {k: (tuple(v) if k.endswith("_range") else v) for k, v in d.items() if k != "train_frac"}
    if seed is not None:
        kw["seed"] = seed
    return data.QsdParams(**kw)


def generate(kind: str, d: dict, seed: int | None):
    """Return ``(splits, meta)`` for a generated quantum dataset."""
    if kind in ("qsd-binary", "qsd-three"):
        params = _qsd_params(d, seed)
        items = (data.gen_qsd_binary if kind == "qsd-binary" else data.gen_qsd_three)(params)
        train, test = data.train_test_split(items, d.get("train_frac", 0.8), params.seed)
        meta = {**d, "seed": params.seed}
    elif kind == "noisy":
        s = d.get("seed", 0) if seed is None else seed
        items = data.gen_noisy_pair(
            d.get("noise_cap", 0.5), d.get("count_per_class", 40), s, d.get("shared_unitary", True)
        )
        train, test = data.split_per_class(items, d.get("train_frac", 0.5), s)
        meta = {**d, "seed": s}
    else:
        raise UsageError(f"cannot generate dataset kind {kind!r}")
    return {"train": train, "test": test}, meta


def _mnist_sets(d: dict, n_qsc: int, seed: int | None):
    split_seed = d.get("seed", 0) if seed is None else seed
    try:
        m = data.load_mnist(d.get("data_dir"))
    except (OSError, ParseError) as exc:
        raise UsageError(f"MNIST unavailable ({exc}); set VSQL_DATA_DIR or run `vsql gen mnist`") from exc
    digits = d.get("digits")
    tr = m["train"]
    if digits is not None:
        tr = data.filter_digits(tr, digits)
    if d.get("per_class"):
        tr = data.stratified_subset(tr, d["per_class"], split_seed)
    train = prepare_images(tr.images, tr.labels, n_qsc, digits)
    test = prepare_images(m["test"].images, m["test"].labels, n_qsc, digits)
    K = len(digits) if digits is not None else 10
    return train, test, K


def _build_circuits(spec: dict):
    kind = spec["kind"]
    n_s = spec.get("n_s", 1)
    if kind == "qsd":
        c = build_ansatz_qsd()
    elif kind == "mnist":
        c = build_ansatz_mnist(spec.get("n_qsc", 2), spec.get("depth", 1))
    else:
        c = build_ansatz_ry_cnot(spec.get("n_qsc", 2))
    return [c] * n_s


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config, TRAIN_SCHEMA)
    kind = cfg["experiment"]
    ds = cfg.get("dataset", {})
    try:
        circuits = _build_circuits(cfg["ansatz"])
        tcfg = _train_config(cfg.get("train", {}), args.seed)
        n_qsc = circuits[0].n_qsc
        if kind in ("mnist", "mnist-binary"):
            _validate(ds, _MNIST, "dataset")
            if kind == "mnist-binary":
                ds = {"digits": [0, 1], **ds}
            train, test, K = _mnist_sets(ds, n_qsc, args.seed)
        else:
            if kind == "dataset":
                if "data_path" not in cfg:
                    raise UsageError("experiment 'dataset' needs data_path")
                splits, _ = data.load_dataset(cfg["data_path"])
            else:
                _validate(ds, GEN_SCHEMAS[kind], "dataset")
                splits, _ = generate(kind, ds, args.seed)
            if not splits.get("train"):
                raise UsageError("dataset has no training split")
            train_labels = np.array([it.label for it in splits["train"]])
            train = prepare(splits["train"], n_qsc)
            test = prepare(splits["test"], n_qsc) if splits.get("test") else None
            K = max(2, int(train_labels.max()) + 1)
        K_head = 1 if K == 2 else K
        n_qubits = train.rdms.n_qubits
    except (ConfigurationError, DomainError, ParseError, OSError, TypeError) as exc:
        raise UsageError(str(exc)) from exc

    out = Path(args.out)
    metrics_path = Path(cfg.get("metrics_out", out.with_suffix(".metrics.csv")))
    repeat = cfg.get("repeat", 1)
    accs = []
    for r in range(repeat):
        run_cfg = replace(tcfg, seed=tcfg.seed + r)
        ensemble, head = init_model(circuits, n_qubits, K_head, run_cfg.seed)
        ckpt, history = fit(train, ensemble, head, run_cfg, val=test)
        ckpt.config.update({"experiment": kind, "dataset": ds, "ansatz": cfg["ansatz"]})
        target = out if r == 0 else out.with_name(f"{out.stem}.r{r}{out.suffix}")
        mpath = metrics_path if r == 0 else metrics_path.with_name(f"{metrics_path.stem}.r{r}{metrics_path.suffix}")
        ckpt.save(target)
        history.write_csv(mpath)
        acc = None
        if test is not None:
            _, pred = predict(test, ckpt.ensemble(), ckpt.head())
            acc = float(np.mean(pred == test.labels))
            accs.append(acc)
        print(
            json.dumps(
                {
                    "run": r,
                    "seed": run_cfg.seed,
                    "iterations": len(history),
                    "final_loss": history.loss[-1],
                    "test_accuracy": acc,
                    "parameters": count_parameters(n_qubits, ckpt.ensemble(), K_head),
                    "checkpoint": str(target),
                }
            )
        )
    if accs and repeat > 1:
        print(json.dumps({"mean_accuracy": float(np.mean(accs)), "std_accuracy": float(np.std(accs))}))
    return EXIT_OK


def _eval_data(spec: str, ckpt: Checkpoint):
    """``--data`` is a dataset JSON path or ``mnist[:split]`` / ``mnist-binary[:split]``."""
    head, _, split = spec.partition(":")
    n_qsc = ckpt.circuits[0].n_qsc
    if head in ("mnist", "mnist-binary"):
        split = split or "test"
        if split not in ("train", "test"):
            raise UsageError(f"unknown MNIST split {split!r}")
        try:
            m = data.load_mnist()
        except (OSError, ParseError) as exc:
            raise UsageError(f"MNIST unavailable: {exc}") from exc
        digits = [0, 1] if head == "mnist-binary" else ckpt.config.get("dataset", {}).get("digits")
        s = m[split]
        return prepare_images(s.images, s.labels, n_qsc, digits)
    try:
        splits, _ = data.load_dataset(spec)
    except OSError as exc:
        raise UsageError(f"cannot read data: {exc}") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"malformed dataset {spec}: {exc}") from exc
    items = splits.get("test") or [it for v in splits.values() for it in v]
    return prepare(items, n_qsc)


def cmd_eval(args) -> int:
    try:
        ckpt = Checkpoint.load(args.ckpt)
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint: {exc}") from exc
    try:
        ds = _eval_data(args.data, ckpt)
        labels, acc = infer(ds, ckpt)
    except (ConfigurationError, DomainError, ParseError) as exc:
        raise UsageError(str(exc)) from exc
    n_classes = 2 if ckpt.K == 1 else ckpt.K
    confusion = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(confusion, (ds.labels, labels), 1)
    print(f"accuracy {acc:.6f} ({int((labels == ds.labels).sum())}/{len(labels)})")
    print("confusion (rows=true, cols=predicted):")
    for k, row in enumerate(confusion):
        print(f"  {k}: " + " ".join(str(x) for x in row))
    out = Path(args.out) if args.out else Path(args.ckpt).with_suffix(".predictions.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label", "predicted"])
        for k, (y, p) in enumerate(zip(ds.labels, labels)):
            w.writerow([k, int(y), int(p)])
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config, VERIFY_SCHEMAS[args.which])
    csv_out = None
    if args.which == "theorem3":
        rep = analysis.verify_theorem3(
            np.linspace(0, 2 * np.pi, cfg.get("n_theta", 100)), np.linspace(0, 1, cfg.get("n_uv", 100))
        )
    elif args.which == "corollary1":
        rep = analysis.verify_corollary1(cfg.get("seed", 0), cfg.get("copies", 10))
    elif args.which == "bp-scan":
        pairs = [tuple(p) for p in cfg.get("pairs", [[10, 2], [20, 2], [100, 2], [10, 4]])]
        seed = cfg.get("seed", 0) if args.seed is None else args.seed
        try:
            result = analysis.bp_variance_scan(pairs, cfg.get("trials", 2000), seed)
        except DomainError as exc:
            raise UsageError(str(exc)) from exc
        rep = result.report()
        csv_out = result.write_csv
    else:
        seed = cfg.get("seed", 0) if args.seed is None else args.seed
        n, q, g = cfg.get("n", 10), cfg.get("n_qsc", 2), cfg.get("grid_size", 50)
        try:
            sl = analysis.landscape_slice(n, q, g, seed)
            other = cfg.get("compare_n_qsc")
            wide = analysis.landscape_slice(n, other, g, seed) if other else None
        except DomainError as exc:
            raise UsageError(str(exc)) from exc
        rep = analysis.Report("landscape")
        rep.add("complete", len(sl.loss) == g * g, len(sl.loss), f"== {g * g}")
        rep.add("loss_bounds", bool(np.all((sl.loss >= 0) & (sl.loss <= 0.5))), [float(sl.loss.min()), float(sl.loss.max())], "in [0, 0.5]")
        if wide is not None:
            rep.add(f"range_shrinks(n_qsc {q}->{other})", sl.loss_range > wide.loss_range, [sl.loss_range, wide.loss_range], "narrow > wide")
        csv_out = sl.write_csv
    if args.out:
        out = Path(args.out)
        if csv_out is not None:
            csv_out(out)
            _write_json(out.with_suffix(".report.json"), rep.to_dict())
        else:
            _write_json(out, rep.to_dict())
    print(rep.to_json())
    if not rep.passed:
        for c in rep.failures():
            print(f"FAILED {c.name}: measured {c.value} (want {c.threshold})", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_gen(args) -> int:
    cfg = load_config(args.config, GEN_SCHEMAS[args.kind])
    if args.kind == "mnist":
        try:
            path = data.fetch_mnist(cfg.get("data_dir"))
            counts = data.verify_mnist(path)
        except (OSError, ParseError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FAIL
        doc = {"data_dir": str(path), "counts": counts}
        if args.out:
            _write_json(args.out, doc)
        print(json.dumps(doc))
        return EXIT_OK
    if not args.out:
        raise UsageError("gen needs --out")
    try:
        splits, meta = generate(args.kind, cfg, args.seed)
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    try:
        data.save_dataset(args.out, splits, args.kind, meta)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    counts = {}
    for items in splits.values():
        for it in items:
            counts[it.label] = counts.get(it.label, 0) + 1
    print(json.dumps({"states": sum(counts.values()), "per_label": {str(k): v for k, v in sorted(counts.items())}}))
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = load_config(args.config, BASELINE_SCHEMA)
    try:
        m = data.load_mnist(cfg.get("data_dir"))
    except (OSError, ParseError) as exc:
        raise UsageError(f"MNIST unavailable: {exc}") from exc
    tcfg = _train_config(
        {"learning_rate": 0.02, "batch_size": 200, "epochs": 100, **cfg.get("train", {})}, args.seed
    )
    norm = data.normalized_pixels if cfg.get("normalization", "l2") == "unit" else _l2_pixels
    accs = []
    for r in range(cfg.get("repeat", 1)):
        seed = tcfg.seed + r
        tr = m["train"]
        if cfg.get("per_class", 100):
            tr = data.stratified_subset(tr, cfg.get("per_class", 100), seed)
        run_cfg = replace(tcfg, seed=seed)
        acc, _ = classical_baseline_fit(norm(tr.images), tr.labels, run_cfg, norm(m["test"].images), m["test"].labels)
        accs.append(acc)
        print(json.dumps({"run": r, "seed": seed, "train_samples": len(tr), "test_accuracy": acc}))
    doc = {"parameters": 785 * 10, "mean_accuracy": float(np.mean(accs)), "std_accuracy": float(np.std(accs))}
    if args.out:
        _write_json(args.out, doc)
    print(json.dumps(doc))
    return EXIT_OK


def _l2_pixels(images: np.ndarray) -> np.ndarray:
    return data.encode_amplitudes(images)[:, :784]


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vsql", description="Shadow-circuit quantum classifiers")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    common(t, config_required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    common(e)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run a theory verifier")
    v.add_argument("which", choices=sorted(VERIFY_SCHEMAS))
    common(v)
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("gen", help="generate a dataset or fetch MNIST")
    g.add_argument("kind", choices=sorted(GEN_SCHEMAS))
    common(g)
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("baseline", help="classical single-layer baseline")
    b.add_argument("dataset", choices=["mnist"])
    common(b)
    b.set_defaults(func=cmd_baseline)
    return p


def _thread_limit(threads: int | None):
    if threads is None:
        return nullcontext()
    if threads < 1:
        raise UsageError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if args.command == "train" and not args.out:
        parser.error("train needs --out")
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (VsqlError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
