"""Command line interface.

Three subcommands: ``train`` fits a model on a dataset bundle and writes the
best-validation weights, ``explain`` exports interaction-effect tables and
heatmaps for a saved model, ``verify`` runs the built-in check suite.

Exit codes: 0 success, 1 usage error, 2 verification failure, 3 numeric
abort. BLAS threading is capped at 1 thread unless the EFIGNN_THREADS
environment variable says otherwise; single-threaded runs are bitwise
reproducible for a fixed seed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import data as dio
from . import defaults
from . import interpret as ip
from . import model as md
from . import train as tr
from . import verify as vf
from .autodiff import NumericError
from .graph import SparseAdj, normalized_adjacency

SCHEMA_VERSION = 1
THREADS_ENV = "EFIGNN_THREADS"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    """Bad flags, flag combinations, or unreadable inputs."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route through UsageError
    # instead so main() owns the exit code.
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="efignn",
                     description="Train, explain, and verify EFI-GNN models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a dataset bundle")
    p.add_argument("--dataset", required=True, metavar="DIR",
                   help="dataset bundle directory")
    p.add_argument("--model", required=True, choices=md.MODEL_KINDS)
    p.add_argument("--efi-layers", type=int, metavar="N")
    p.add_argument("--gnn-layers", type=int, metavar="N")
    p.add_argument("--units", type=int, metavar="N")
    p.add_argument("--lr", type=float, metavar="F")
    p.add_argument("--weight-decay", type=float, metavar="F")
    p.add_argument("--dropout", type=float, metavar="F")
    p.add_argument("--epochs", type=int, metavar="N")
    p.add_argument("--seeds", default="0", metavar="S1,S2,...",
                   help="comma-separated seeds; one run per seed")
    p.add_argument("--batch-norm", choices=("on", "off"))
    p.add_argument("--skip", choices=md.SKIP_MODES)
    p.add_argument("--include-block0", choices=("on", "off"))
    p.add_argument("--out", default="model.efig", metavar="PATH",
                   help="where to write the first seed's best-val model")
    p.add_argument("--precision", choices=("f32", "f64"), default="f64")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="export interaction effects")
    p.add_argument("--model", required=True, metavar="PATH")
    p.add_argument("--dataset", required=True, metavar="DIR")
    p.add_argument("--node", required=True, type=int, metavar="N")
    p.add_argument("--class", dest="class_index", required=True, type=int,
                   metavar="C")
    p.add_argument("--order", required=True, type=int, metavar="K")
    p.add_argument("--top-k", type=int, metavar="K")
    p.add_argument("--format", choices=("csv", "svg", "both"), default="both")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("verify", help="run the built-in check suite")
    p.set_defaults(func=cmd_verify)
    return parser


def _parse_seeds(text: str) -> list:
    try:
        seeds = [int(part) for part in text.split(",")]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise UsageError("--seeds must name at least one seed")
    return seeds


# configuration fields that belong to a branch the model does not have
_FOREIGN_FIELDS = {
    "gcn": ("efi_layers", "include_block0"),
    "efignn": ("gnn_layers", "batch_norm", "skip"),
    "joint": (),
}


def _reject_foreign_flags(args) -> None:
    """Flags for a branch the chosen model does not have are errors."""
    for attr in _FOREIGN_FIELDS[args.model]:
        if getattr(args, attr) is not None:
            flag = "--" + attr.replace("_", "-")
            raise UsageError(f"{flag} does not apply to model {args.model!r}")


def _effective_config(args, profile: dict) -> dict:
    """Merge CLI flags over the per-dataset defaults."""
    pick = lambda flag, key: profile[key] if flag is None else flag
    return {
        "model": args.model,
        "efi_layers": pick(args.efi_layers, "efi_layers"),
        "gnn_layers": pick(args.gnn_layers, "gnn_layers"),
        "units": pick(args.units, "units"),
        "lr": pick(args.lr, "lr"),
        "weight_decay": pick(args.weight_decay, "weight_decay"),
        "dropout": pick(args.dropout, "dropout"),
        "epochs": pick(args.epochs, "epochs"),
        "batch_norm": (profile["batch_norm"] if args.batch_norm is None
                       else args.batch_norm == "on"),
        "skip": pick(args.skip, "skip"),
        "include_block0": (True if args.include_block0 is None
                           else args.include_block0 == "on"),
        "precision": args.precision,
    }


def _build_model(cfg: dict, num_features: int, num_classes: int) -> md.Model:
    try:
        efi_cfg = gcn_cfg = None
        if cfg["model"] != "gcn":
            efi_cfg = md.EfiGnnConfig(num_layers=cfg["efi_layers"],
                                      units=cfg["units"],
                                      dropout=cfg["dropout"],
                                      include_block0=cfg["include_block0"])
        if cfg["model"] != "efignn":
            gcn_cfg = md.GcnConfig(num_layers=cfg["gnn_layers"],
                                   units=cfg["units"],
                                   dropout=cfg["dropout"],
                                   skip_mode=cfg["skip"],
                                   batch_norm=cfg["batch_norm"])
        return md.Model(cfg["model"], num_features, num_classes,
                        efi_cfg=efi_cfg, gcn_cfg=gcn_cfg)
    except ValueError as exc:
        raise UsageError(str(exc))


def _cast_adj(adj: SparseAdj, dtype) -> SparseAdj:
    if adj.values.dtype == dtype:
        return adj
    return SparseAdj(num_nodes=adj.num_nodes, row_ptr=adj.row_ptr,
                     col_idx=adj.col_idx, values=adj.values.astype(dtype))


def cmd_train(args) -> int:
    seeds = _parse_seeds(args.seeds)
    _reject_foreign_flags(args)
    dtype = np.float32 if args.precision == "f32" else np.float64
    bundle = dio.load_bundle(args.dataset, dtype=dtype)
    cfg = _effective_config(args, defaults.defaults_for(bundle.name))
    model = _build_model(cfg, bundle.num_features, bundle.num_classes)
    cfg.update({key: None for key in _FOREIGN_FIELDS[args.model]})
    adj = _cast_adj(normalized_adjacency(bundle.edges), dtype)

    print(f"dataset {bundle.name}: {bundle.num_nodes} nodes, "
          f"{bundle.num_features} features, {bundle.num_classes} classes")
    print("config: " + " ".join(f"{k}={cfg[k]}" for k in sorted(cfg)))

    per_seed = []
    first = None
    wall_time = 0.0
    for seed in seeds:
        train_cfg = tr.TrainConfig(learning_rate=cfg["lr"],
                                   weight_decay=cfg["weight_decay"],
                                   epochs=cfg["epochs"], seed=seed)
        params, bn_state, report = tr.train(model, adj, bundle.x_init,
                                            bundle.labels, bundle.masks,
                                            train_cfg)
        if first is None:
            first = (params, bn_state, report.best_epoch)
        wall_time += report.wall_time
        per_seed.append({
            "seed": seed,
            "best_epoch": report.best_epoch,
            "best_val": report.best_val_accuracy,
            "best_test": report.best_test_accuracy,
            "final_val": report.final_val_accuracy,
            "final_test": report.final_test_accuracy,
        })
        print(f"seed {seed}: best epoch {report.best_epoch} "
              f"val {report.best_val_accuracy:.4f} "
              f"test {report.best_test_accuracy:.4f} | "
              f"final test {report.final_test_accuracy:.4f}")

    best_tests = np.array([r["best_test"] for r in per_seed])
    final_tests = np.array([r["final_test"] for r in per_seed])
    print(f"best-val test accuracy: mean {best_tests.mean():.4f} "
          f"std {best_tests.std():.4f} over {len(seeds)} seed(s)")
    print(f"final-epoch test accuracy: mean {final_tests.mean():.4f} "
          f"std {final_tests.std():.4f}")

    params, bn_state, best_epoch = first
    dio.save_model(args.out, model, params, bn_state)
    print(f"wrote {args.out} (seed {seeds[0]}, best val epoch {best_epoch})")

    summary = {
        "schema_version": SCHEMA_VERSION,
        "command": "train",
        "dataset": bundle.name,
        "nodes": bundle.num_nodes,
        "config": cfg,
        "seeds": seeds,
        "per_seed": per_seed,
        "best_test_mean": float(best_tests.mean()),
        "best_test_std": float(best_tests.std()),
        "final_test_mean": float(final_tests.mean()),
        "final_test_std": float(final_tests.std()),
        "model_path": args.out,
        "wall_time": wall_time,
    }
    print(json.dumps(summary, sort_keys=True, separators=(",", ":")))
    return EXIT_OK


def cmd_explain(args) -> int:
    model, params, _ = dio.load_model(args.model)
    bundle = dio.load_bundle(args.dataset)
    if bundle.num_features != model.num_features:
        raise UsageError(
            f"model expects {model.num_features} features but dataset "
            f"{bundle.name!r} has {bundle.num_features}")
    try:
        query = ip.EffectQuery(node=args.node, class_index=args.class_index,
                               order=args.order, top_k=args.top_k)
        table = ip.effects(model, params, bundle.x_init, query)
    except ValueError as exc:
        raise UsageError(str(exc))

    if not table.entries:
        print(f"warning: node {args.node} has no active features; "
              "empty effect table, nothing to export", file=sys.stderr)
        return EXIT_OK

    print(f"node {args.node} class {args.class_index} order {args.order}: "
          f"{len(table.entries)} effect(s)")
    for tup, effect in table.entries:
        label = "x".join(str(f) for f in tup)
        print(f"  {label}: {effect:+.6f}")
    written = ip.export_heatmap(table, fmt=args.format)
    for path in written:
        print(f"wrote {path}")
    if not written:
        print("warning: no files written; SVG heatmaps only cover orders 1 "
              "and 2, use --format csv", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    return EXIT_OK if vf.run_all() else EXIT_VERIFY


def _thread_limit() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        limit = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if limit < 1:
        raise UsageError(f"{THREADS_ENV} must be >= 1, got {limit}")
    return limit


def main(argv=None) -> int:
    try:
        with threadpool_limits(limits=_thread_limit()):
            args = build_parser().parse_args(argv)
            return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
