"""``cmdkit`` command line.

Exit codes: 0 ok, 2 usage/config error, 3 numeric divergence,
4 degenerate data, 5 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .analysis import build_report, compare, weights_mse, write_compare_csv, write_json, write_report_csv
from .clustering import DEFAULT_EPSILON, DEFAULT_K, ClusterConfig
from .decomposition import decompose, load_model, reconstruct, reconstruct_full, save_model
from .dmd import dmd_fit, dmd_reconstruct, load_dmd, save_dmd
from .exceptions import CMDError, ConfigError
from .generators import (
    MlpTaskConfig,
    SyntheticModesConfig,
    ToyRegressionConfig,
    evaluate_weights,
    generate_mlp_training,
    generate_synthetic_modes,
    generate_toy_regression,
)
from .trajectory import (
    EpochSelection,
    SnapshotMatrix,
    load_trajectory,
    save_trajectory,
    subsample_epochs,
    truncate_history,
)

log = logging.getLogger("cmdkit")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGENCE, EXIT_DEGENERATE, EXIT_IO = 0, 2, 3, 4, 5
GENERATOR_KINDS = ("toy-regression", "mlp", "synthetic-modes")


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def config_hash(doc) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_path, argv, config: dict, seed, inputs, outputs, timings=None) -> Path:
    manifest = {
        "command": ["cmdkit"] + list(argv),
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "inputs": {str(p): _file_hash(p) for p in inputs},
        "outputs": {str(p): _file_hash(p) for p in outputs},
        "tool_version": __version__,
        "stage_timings_ms": {k: round(v, 3) for k, v in (timings or {}).items()},
    }
    path = Path(str(out_path) + ".manifest.json")
    write_json(manifest, path)
    return path


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("CMDKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"CMDKIT_THREADS must be an integer, got {env!r}") from None
    return 1


def _mlp_config(path) -> MlpTaskConfig:
    return MlpTaskConfig.from_dict(_read_json(path))


# -- subcommands -----------------------------------------------------------


def cmd_generate(args, argv):
    doc = _read_json(args.config)
    seed = doc.get("seed", 0) if isinstance(doc, dict) else 0
    start = time.perf_counter()
    outputs = [args.out]
    if args.kind == "toy-regression":
        m = generate_toy_regression(ToyRegressionConfig.from_dict(doc))
        save_trajectory(m, args.out)
    elif args.kind == "mlp":
        m, training_log = generate_mlp_training(MlpTaskConfig.from_dict(doc))
        save_trajectory(m, args.out)
        log_path = args.log or str(args.out) + ".log.csv"
        training_log.to_csv(log_path)
        outputs.append(log_path)
    else:
        synth = generate_synthetic_modes(SyntheticModesConfig.from_dict(doc))
        save_trajectory(synth.matrix, args.out)
        if args.labels:
            with open(args.labels, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["weight_id", "mode", "a", "b"])
                for i, (lab, a, b) in enumerate(zip(synth.labels, synth.a, synth.b)):
                    writer.writerow([i, int(lab), repr(float(a)), repr(float(b))])
            outputs.append(args.labels)
    timings = {"generate": (time.perf_counter() - start) * 1e3}
    write_manifest(args.out, argv, {"kind": args.kind, "generator": doc}, seed,
                   [args.config], outputs, timings)
    return EXIT_OK


def cmd_decompose(args, argv):
    m = load_trajectory(args.trajectory)
    sel = EpochSelection.full(m.n_epochs)
    if args.truncate_from is not None:
        m, sel = truncate_history(m, args.truncate_from)
    elif args.subsample is not None:
        m, sel = subsample_epochs(m, args.subsample)
    cfg = ClusterConfig(K=args.sample, n_modes=args.modes, threshold=args.threshold,
                        epsilon=args.epsilon, seed=args.seed)
    model = decompose(m, cfg, sel, n_jobs=_threads(args))
    save_model(model, args.out)
    report_path = args.report or str(Path(args.out).with_suffix("")) + ".report.json"
    report = build_report(m, model, level=args.level)
    write_json(report, report_path)
    outputs = [args.out, report_path]
    if args.report_csv:
        write_report_csv(report, args.report_csv)
        outputs.append(args.report_csv)
    if args.dendrogram:
        model.dendrogram.to_json(args.dendrogram)
        outputs.append(args.dendrogram)
    write_manifest(args.out, argv, {"cluster": cfg.to_dict(), "epoch_selection": sel.to_dict()},
                   args.seed, [args.trajectory], outputs, model.timings)
    print(f"{model.n_modes} modes, weights MSE {report['weights_mse']:.6g}")
    return EXIT_OK


def cmd_reconstruct(args, argv):
    model = load_model(args.model)
    if args.full_trajectory:
        recon = reconstruct_full(model, load_trajectory(args.full_trajectory))
    else:
        recon = reconstruct(model)
    save_trajectory(recon, args.out)
    inputs = [args.model] + ([args.full_trajectory] if args.full_trajectory else [])
    write_manifest(args.out, argv, {"model": str(args.model)}, model.config.seed, inputs, [args.out])
    return EXIT_OK


def cmd_dmd(args, argv):
    m = load_trajectory(args.trajectory)
    model = dmd_fit(m, args.rank)
    block = save_dmd(model, args.out)
    outputs = [args.out, block]
    if args.recon:
        rec, overflow = dmd_reconstruct(model, return_overflow=True)
        save_trajectory(rec, args.recon)
        outputs.append(args.recon)
        if overflow:
            log.warning("eigenvalue powers overflowed and were clamped")
    write_manifest(args.out, argv, {"rank": args.rank, "rank_used": model.rank}, None,
                   [args.trajectory], outputs)
    return EXIT_OK


def cmd_report(args, argv):
    w = load_trajectory(args.trajectory)
    w_hat = load_trajectory(args.reconstruction)
    if args.model:
        model = load_model(args.model)
        if model.n_epochs != w.n_epochs:
            w = _select(w, model.epoch_selection)
        if w_hat.n_epochs != w.n_epochs:
            w_hat = _select(w_hat, model.epoch_selection)
        report = build_report(w, model, w_hat, level=args.level)
    else:
        report = {"weights_mse": weights_mse(w, w_hat), "n_weights": w.n_weights,
                  "n_epochs": w.n_epochs}
    write_json(report, args.out)
    if args.csv:
        write_report_csv(report, args.csv)
    print(f"weights MSE {report['weights_mse']:.6g}")
    return EXIT_OK


def _select(w, sel: EpochSelection):
    return SnapshotMatrix(w.values[:, list(sel.retained_epochs)], w.layers)


def cmd_evaluate(args, argv):
    m = load_trajectory(args.trajectory)
    task = _mlp_config(args.task_config)
    epochs = range(m.n_epochs) if args.epoch is None else [args.epoch]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "accuracy"])
        for k in epochs:
            res = evaluate_weights(task, m, k)
            writer.writerow([k, repr(res["loss"]), repr(res["accuracy"])])
    return EXIT_OK


def cmd_compare(args, argv):
    w = load_trajectory(args.trajectory)
    task = _mlp_config(args.task_config) if args.task_config else None
    rows = compare(w, load_model(args.cmd_model), load_dmd(args.dmd_model), task)
    write_compare_csv(rows, args.out)
    for row in rows:
        print(f"{row['method']}: dimension {row['dimension']}, weights MSE {row['weights_mse']:.6g}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmdkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cmdkit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="produce a ground-truth trajectory file")
    p.add_argument("kind", choices=GENERATOR_KINDS)
    p.add_argument("config", help="JSON config document")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="training log CSV (mlp only)")
    p.add_argument("--labels", help="ground-truth labels CSV (synthetic-modes only)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("decompose", help="fit the correlation mode model")
    p.add_argument("trajectory")
    cut = p.add_mutually_exclusive_group()
    cut.add_argument("--modes", type=int, help="fixed number of modes M")
    cut.add_argument("--threshold", type=float,
                     help="in-cluster distance threshold t (default: half the max pairwise distance)")
    p.add_argument("--sample", type=int, default=DEFAULT_K, help="representative sample size K")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--level", type=float, default=0.95, help="confidence band level")
    epochs = p.add_mutually_exclusive_group()
    epochs.add_argument("--truncate-from", type=int, dest="truncate_from",
                        help="drop epochs before E")
    epochs.add_argument("--subsample", type=int, help="keep every F-th epoch")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="report JSON path (default: <out>.report.json)")
    p.add_argument("--report-csv", dest="report_csv", help="long-format report CSV")
    p.add_argument("--dendrogram", help="write the sample dendrogram as JSON")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("reconstruct", help="rebuild trajectories from a model")
    p.add_argument("model")
    p.add_argument("--out", required=True)
    p.add_argument("--full-trajectory", dest="full_trajectory",
                   help="evaluate at all epochs of this matrix using its reference rows")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("dmd", help="fit the exact-DMD baseline")
    p.add_argument("trajectory")
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--recon", help="also write the DMD reconstruction")
    p.set_defaults(func=cmd_dmd)

    p = sub.add_parser("report", help="metrics of a reconstruction")
    p.add_argument("trajectory")
    p.add_argument("reconstruction")
    p.add_argument("--model")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("evaluate", help="task loss/accuracy of trajectory columns")
    p.add_argument("trajectory")
    p.add_argument("task_config")
    p.add_argument("--epoch", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="CMD vs DMD table")
    p.add_argument("trajectory")
    p.add_argument("cmd_model")
    p.add_argument("dmd_model")
    p.add_argument("--task-config", dest="task_config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except CMDError as exc:
        print(f"cmdkit {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"cmdkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
