"""``incopt`` command line: synth, train, infer, allocate, eval, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data or validation error. Every output
directory gets a ``manifest.json`` (single-file outputs get ``<file>.manifest.json``)
holding the resolved config, its hash, the seed and input file digests.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import checkpoint as ckpt_io
from .allocator import ScoreTable, solve_budget
from .errors import DataError, IncoptError
from .evaluator import (
    quintile_report,
    recovery_metrics,
    region_sensitivity,
    regression_metrics,
    uplift_split,
    write_quintiles,
    write_regions,
    write_report,
)
from .graph import TransactionGraph, derive_seed, load_graph, save_graph
from .model import ModelConfig, init_params
from .samples import Samples, read_samples, read_truth, write_samples, write_truth
from .simulator import SimConfig, generate_campaign, run_experiment
from .trainer import TrainConfig, fit, grad_check

log = logging.getLogger("incopt")


class UsageError(IncoptError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --- helpers ----------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def read_kv_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Keys may carry a ``sim.``/``model.``/``train.`` prefix."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _coerce(value: str, current):
    if isinstance(current, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple) or current is None:
        parts = [v.strip() for v in value.split(",") if v.strip()]
        if current and all(isinstance(v, int) for v in current):
            return tuple(int(v) for v in parts)
        return tuple(float(v) for v in parts)
    return value


def apply_overrides(cfg, section: str, file_values: dict[str, str], flags: dict):
    """New dataclass with file values, then non-None flags, applied on top of ``cfg``."""
    fields = {f.name for f in dataclasses.fields(cfg)}
    changes = {}
    for key, raw in file_values.items():
        name = key.split(".", 1)[1] if key.startswith(section + ".") else key
        if "." in key and not key.startswith(section + "."):
            continue
        if name in fields:
            try:
                changes[name] = _coerce(raw, getattr(cfg, name))
            except ValueError:
                raise DataError(f"config value for {key!r} is not valid: {raw!r}") from None
    for name, value in flags.items():
        if value is not None and name in fields:
            changes[name] = value
    return dataclasses.replace(cfg, **changes)


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(path: Path, command: str, config: dict, seed, inputs: dict[str, Path], outputs: list[str]):
    blob = json.dumps(config, sort_keys=True)
    manifest = {
        "tool": "incopt",
        "version": __version__,
        "checkpoint_format": ckpt_io.FORMAT_VERSION,
        "command": command,
        "config": config,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "seed": seed,
        "inputs": {k: _digest(p) for k, p in sorted(inputs.items())},
        "outputs": sorted(outputs),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(*paths: Path) -> None:
    for p in paths:
        if not p.exists():
            raise DataError(f"missing input: {p}")


def _log_config(command: str, config: dict) -> None:
    log.info("%s resolved config: %s", command, json.dumps(config, sort_keys=True))


def _load_data(data: Path) -> TransactionGraph:
    _require(data / "nodes.tsv", data / "edges.tsv")
    return load_graph(data / "nodes.tsv", data / "edges.tsv")


def read_curves(path, id_index: dict[str, int]):
    merchants, g, p = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["merchant_id", "gradient", "intercept"]:
            raise DataError(f"{path}: expected header merchant_id,gradient,intercept")
        for row in reader:
            ext = row["merchant_id"]
            merchants.append(id_index[ext] if id_index else ext)
            g.append(float(row["gradient"]))
            p.append(float(row["intercept"]))
    return merchants, np.array(g), np.array(p)


def write_curves(path: Path, ext_ids, merchants, g, p) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["merchant_id", "gradient", "intercept"])
        for m, gi, pi in zip(merchants, g, p):
            w.writerow([ext_ids[m], repr(float(gi)), repr(float(pi))])


# --- subcommands ------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    file_cfg = read_kv_config(args.config) if args.config else {}
    cfg = apply_overrides(SimConfig(), "sim", file_cfg, {
        "merchants": args.merchants, "customers": args.customers, "regions": args.regions,
        "noise_sd": args.noise_sd, "treatment_set": args.treatments,
    })
    if args.treatments is not None and "bucket_count" not in file_cfg:
        cfg = dataclasses.replace(cfg, bucket_count=len(cfg.treatment_set))
    if args.regions is not None and "node_feature_dim" not in file_cfg:
        cfg = dataclasses.replace(cfg, node_feature_dim=max(cfg.node_feature_dim, cfg.regions + 4))
    cfg.validate()
    config = {"sim": cfg.to_dict(), "experiment_seed": derive_seed(args.seed, 1)}
    _log_config("synth", config)
    graph, truth = generate_campaign(cfg, args.seed)
    samples = run_experiment(graph, truth, cfg, derive_seed(args.seed, 1))
    out.mkdir(parents=True, exist_ok=True)
    save_graph(graph, out)
    write_samples(samples, graph.external_ids, out / "samples.tsv")
    write_truth(truth, graph.external_ids, out / "truth.tsv")
    files = ["nodes.tsv", "edges.tsv", "idmap.tsv", "samples.tsv", "truth.tsv"]
    write_manifest(out / "manifest.json", "synth", config, args.seed, {}, files)
    print(f"wrote {graph.node_count} nodes, {graph.edge_count} edges, {len(samples)} samples to {out}")
    return 0


def cmd_train(args) -> int:
    data, out = Path(args.data), Path(args.out)
    _require(data / "samples.tsv")
    graph = _load_data(data)
    samples = read_samples(data / "samples.tsv", graph.id_index(), args.target)
    file_cfg = read_kv_config(args.config) if args.config else {}
    kind = args.model or file_cfg.get("model.kind", file_cfg.get("kind", "ge"))
    base_model = ModelConfig(node_dim=graph.node_dim, edge_dim=graph.edge_dim if kind == "ge" else 0, kind=kind)
    model_cfg = apply_overrides(base_model, "model", file_cfg, {
        "depth": args.depth, "width": args.width, "fanouts": args.fanouts,
        "aggregator": args.aggregator, "activation": args.activation,
    })
    model_cfg = dataclasses.replace(model_cfg, node_dim=graph.node_dim,
                                    edge_dim=graph.edge_dim if model_cfg.kind == "ge" else 0)
    if model_cfg.kind == "ge" and args.fanouts is None and len(model_cfg.fanouts) != model_cfg.depth:
        model_cfg = dataclasses.replace(model_cfg, fanouts=(10,) * model_cfg.depth)
    train_cfg = apply_overrides(TrainConfig(), "train", file_cfg, {
        "learning_rate": args.lr, "batch_size": args.batch_size, "epochs": args.epochs,
        "label_transform": args.label_transform, "seed": args.seed, "patience": args.patience,
    })
    model_cfg.validate()
    train_cfg.validate()
    threads = 1 if args.deterministic else max(args.threads, 1)
    config = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "target": args.target,
              "threads": threads, "deterministic": args.deterministic}
    _log_config("train", config)

    ckpt, history = fit(graph, samples, model_cfg, train_cfg, threads=threads)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_io.save(ckpt, out / "checkpoint.bin")
    with open(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mae", "val_mae"])
        for epoch, tr, va in history:
            w.writerow([epoch, repr(tr), repr(va)])
    val = set(ckpt.validation_merchants.tolist())
    with open(out / "split.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#merchant_id\tsplit\n")
        for m in np.unique(samples.merchant):
            fh.write(f"{graph.external_ids[m]}\t{'validation' if int(m) in val else 'train'}\n")
    inputs = {n: data / n for n in ("nodes.tsv", "edges.tsv", "samples.tsv")}
    write_manifest(out / "manifest.json", "train", config, train_cfg.seed, inputs,
                   ["checkpoint.bin", "history.csv", "split.tsv"])
    last = history[-1] if history else (0, float("nan"), float("nan"))
    print(f"trained {model_cfg.kind}: {len(history)} epochs, best epoch {ckpt.best_epoch}, "
          f"last val_mae {last[2]:.5f}")
    return 0


def cmd_infer(args) -> int:
    data, ck_path, out = Path(args.data), Path(args.checkpoint), Path(args.out)
    _require(ck_path)
    graph = _load_data(data)
    ckpt = ckpt_io.load(ck_path)
    merchants = graph.merchants()
    config = {"checkpoint_config_hash": ckpt_io.config_hash(ckpt.model_config, ckpt.train_config),
              "transform": ckpt.transform.to_dict(), "units": "objective" if ckpt.transform.is_linear
              else "transformed"}
    _log_config("infer", config)
    g, p = ckpt.original_curves(graph, merchants)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_curves(out, graph.external_ids, merchants, g, p)
    write_manifest(out.with_name(out.name + ".manifest.json"), "infer", config, ckpt.seed,
                   {"checkpoint": ck_path, "nodes.tsv": data / "nodes.tsv", "edges.tsv": data / "edges.tsv"},
                   [out.name])
    print(f"wrote curves for {merchants.size} merchants to {out}")
    return 0


def cmd_allocate(args) -> int:
    curves_path, out = Path(args.curves), Path(args.out)
    _require(curves_path)
    ids, g, p = read_curves(curves_path, {})
    treatments = args.treatments
    config = {"budget": args.budget, "treatments": list(treatments)}
    _log_config("allocate", config)
    try:
        table = ScoreTable.from_curves(np.arange(len(ids)), g, p, treatments)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    plan = solve_budget(table, args.budget)
    out.mkdir(parents=True, exist_ok=True)
    chosen = plan.treatments(table)
    with open(out / "plan.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["merchant_id", "treatment", "predicted_objective"])
        for i, ext in enumerate(ids):
            w.writerow([ext, repr(float(chosen[i])), repr(float(table.scores[i, plan.assignment[i]]))])
    (out / "summary.json").write_text(json.dumps(plan.summary(), indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    write_manifest(out / "manifest.json", "allocate", config, None, {"curves": curves_path},
                   ["plan.csv", "summary.json"])
    print(f"allocated {len(ids)} merchants: spend {plan.total_spend:g} of {args.budget:g}, "
          f"objective {plan.total_objective:.4f}, lambda {plan.lam:.6g}")
    return 0


def _read_split(path: Path, id_index: dict[str, int]) -> set[int]:
    keep = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        ext, split = line.split("\t")
        if split in ("validation", "test"):
            keep.add(id_index[ext])
    return keep


def cmd_eval(args) -> int:
    data, out = Path(args.data), Path(args.out)
    curves_path = Path(args.curves)
    _require(curves_path, data / "samples.tsv")
    graph = _load_data(data)
    index = graph.id_index()
    samples = read_samples(data / "samples.tsv", index, args.target)
    ids, g, p = read_curves(curves_path, index)
    inputs = {"curves": curves_path, "samples.tsv": data / "samples.tsv"}
    if args.split:
        split_path = Path(args.split)
        _require(split_path)
        keep = _read_split(split_path, index)
        samples = samples.subset(np.flatnonzero(np.isin(samples.merchant, sorted(keep))))
        inputs["split"] = split_path
    gradient = dict(zip(ids, g.tolist()))
    intercept = dict(zip(ids, p.tolist()))
    missing = set(samples.merchant.tolist()) - set(gradient)
    if missing:
        raise DataError(f"{len(missing)} sampled merchants have no curve")
    c_present = np.unique(samples.treatment)
    c_high = args.c_high if args.c_high is not None else float(c_present.max())
    c_low = args.c_low if args.c_low is not None else float(c_present.min())
    t_hi = args.t_hi if args.t_hi is not None else c_high
    t_lo = args.t_lo if args.t_lo is not None else c_low
    config = {"c_high": c_high, "c_low": c_low, "t_hi": t_hi, "t_lo": t_lo, "target": args.target,
              "split": bool(args.split)}
    _log_config("eval", config)

    pred = np.array([gradient[m] * c + intercept[m] for m, c in zip(samples.merchant, samples.treatment)])
    reg = regression_metrics(pred, samples.objective)
    eval_grad = {m: gradient[m] for m in set(samples.merchant.tolist())}
    split = uplift_split(eval_grad, samples, c_high, c_low)
    quint = quintile_report(eval_grad, samples, c_high, c_low)
    regions = {m: graph.regions[m] for m in eval_grad}
    reg_sens = region_sensitivity(samples, regions, t_hi, t_lo)
    report = {
        "n_samples": len(samples),
        "regression": dataclasses.asdict(reg),
        "uplift_split": {"u_plus": split.plus.u, "u_minus": split.minus.u, "diff": split.diff,
                         "ci95": [split.ci_low, split.ci_high]},
        "quintiles": quint.to_dict(),
        "regions": {"t_hi": t_hi, "t_lo": t_lo, "ratios": reg_sens.ratios(), "missing": reg_sens.missing},
    }
    truth_path = data / "truth.tsv"
    if truth_path.exists():
        truth = read_truth(truth_path, index)
        tg = {int(m): float(v) for m, v in zip(truth.merchants, truth.true_gradient)}
        rec = recovery_metrics(eval_grad, {m: tg[m] for m in eval_grad})
        report["recovery"] = {"spearman": rec.spearman, "deciles": rec.deciles, "n": rec.n}
        inputs["truth.tsv"] = truth_path
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "report.json")
    write_quintiles(quint, out / "quintiles.csv")
    write_regions(reg_sens, out / "regions.csv")
    write_manifest(out / "manifest.json", "eval", config, None, inputs,
                   ["report.json", "quintiles.csv", "regions.csv"])
    print(f"mae {reg.mae:.4f} mse {reg.mse:.4f} uplift diff {split.diff:.4f} "
          f"[{split.ci_low:.4f}, {split.ci_high:.4f}]")
    return 0


def _tiny_instance(seed: int):
    rng = np.random.default_rng(seed)
    n = 6
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.5]
    graph = TransactionGraph.from_edges(rng.normal(size=(n, 4)), pairs, rng.normal(size=(len(pairs), 2)))
    return graph, Samples(np.arange(n), rng.choice([1.0, 2.0, 5.0], size=n), rng.uniform(0, 10, size=n))


def cmd_gradcheck(args) -> int:
    if args.data:
        data = Path(args.data)
        _require(data / "samples.tsv")
        graph = _load_data(data)
        samples = read_samples(data / "samples.tsv", graph.id_index(), args.target)
        samples = samples.subset(np.arange(min(len(samples), args.batch)))
    else:
        graph, samples = _tiny_instance(args.seed)
    kind = args.model or "ge"
    depth = args.depth or 1
    cfg = ModelConfig(
        node_dim=graph.node_dim, edge_dim=graph.edge_dim if kind == "ge" else 0, kind=kind,
        depth=depth, width=args.width or 3, fanouts=args.fanouts or (5,) * depth,
        aggregator=args.aggregator or "mean", activation=args.activation or "relu",
    )
    cfg.validate()
    _log_config("gradcheck", {"model": cfg.to_dict(), "h": args.h, "seed": args.seed})
    params = init_params(cfg, args.seed)
    report = grad_check(graph, params, cfg, samples, h=args.h, seed=args.seed)
    print(report)
    return 0 if report.max_error <= args.tol else 2


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="incopt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"incopt {__version__} (checkpoint format {ckpt_io.FORMAT_VERSION})")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for gradient evaluation")
    parser.add_argument("--deterministic", action="store_true", help="single-threaded reductions")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic campaign")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--merchants", type=int)
    p.add_argument("--customers", type=int)
    p.add_argument("--regions", type=int)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--treatments", type=_floats)
    p.add_argument("--config")
    p.set_defaults(func=cmd_synth)

    model_flags = argparse.ArgumentParser(add_help=False)
    model_flags.add_argument("--model", choices=("ge", "mlp", "linear"))
    model_flags.add_argument("--depth", type=int)
    model_flags.add_argument("--width", type=int)
    model_flags.add_argument("--fanouts", type=_ints)
    model_flags.add_argument("--aggregator", choices=("mean", "attention"))
    model_flags.add_argument("--activation", choices=("relu", "tanh", "identity"))
    model_flags.add_argument("--target", default="objective")

    p = sub.add_parser("train", parents=[model_flags], help="fit a model on labeled samples")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--label-transform", choices=("none", "scale", "log1p-zscore"))
    p.add_argument("--config")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    p.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="write per-merchant curves")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("allocate", help="assign treatments under a budget")
    p.add_argument("--curves", required=True)
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--treatments", type=_floats, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("eval", help="evaluation report")
    p.add_argument("--data", required=True)
    p.add_argument("--curves", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", help="split.tsv from train; evaluate validation merchants only")
    p.add_argument("--target", default="objective")
    p.add_argument("--c-high", type=float)
    p.add_argument("--c-low", type=float)
    p.add_argument("--t-hi", type=float)
    p.add_argument("--t-lo", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[model_flags], help="finite-difference gradient check")
    p.add_argument("--data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=8)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"incopt: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError, KeyError) as exc:
        print(f"incopt: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
