"""Command-line entry point.

Subcommands: generate (synthetic dataset), stats (feature summaries),
complete (export learned feature completion), train, eval, sweep. All
outputs land under --out; exit codes are 0 success, 1 usage error, 2 data
error, 3 numerical failure.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import dafc
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (SynthConfig, default_benchmark_config, export_stats,
                   generate_synthetic, load_dataset, save_dataset, write_table)
from .errors import DataError, NumericalError, UsageError
from .graph import SPLIT_TEST, SPLIT_VAL, silent_subgraph
from .train import TrainConfig, evaluate, split_dataset, train

FLOAT_FMT = "%.9g"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"{what} file not found: {path}")
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid {what} JSON ({e})")


def _ensure_out(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _fmt_cell(v):
    if isinstance(v, float):
        return FLOAT_FMT % v
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(v) for v in row) + "\n")


def _train_config(args):
    """Resolve TrainConfig from defaults, then --config, then explicit flags."""
    values = {}
    if args.config:
        raw = _load_json(args.config, "config")
        if not isinstance(raw, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
        values.update(raw)
    overrides = {
        "model": args.model, "completion": args.completion, "K": args.K,
        "lam": getattr(args, "lambda"), "gamma": args.gamma, "seed": args.seed,
        "epochs": args.epochs, "hidden_dim": args.hidden_dim,
        "learning_rate": args.lr, "weight_decay": args.weight_decay,
        "num_damp_layers": args.layers, "dropout": args.dropout,
        "cross_edge_drop": args.drop_cross_edges,
    }
    for key, val in overrides.items():
        if val is not None:
            values[key] = val
    if args.ablate:
        values["ablations"] = tuple(sorted(set(args.ablate)))
    if args.raw_scores:
        values["raw_scores"] = True
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid training config: {e}")


def _prepare_graph(args, cfg):
    g = load_dataset(args.data)
    if getattr(args, "silent_only", False):
        if cfg.model == "ktgnn":
            raise UsageError("--silent-only removes all vocal nodes; "
                             "use a baseline model")
        g = silent_subgraph(g)
    if not ((g.split == SPLIT_VAL).any() and (g.split == SPLIT_TEST).any()):
        g = split_dataset(g, seed=cfg.seed)
    return g


def _write_run_outputs(out, g, result):
    cfg = result.config
    header = list(result.history[0].keys())
    _write_csv(os.path.join(out, "metrics.csv"), header,
               [[row[k] for k in header] for row in result.history])
    summary = {"best_epoch": result.best_epoch, "test_f1": result.test_f1,
               "test_auc": result.test_auc, "config": cfg.to_dict()}
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    preds = [[str(int(i)), FLOAT_FMT % s, str(int(s >= 0.5))]
             for i, s in zip(result.silent_ids, result.silent_scores)]
    write_table(os.path.join(out, "predictions.tsv"),
                (["node_id", "probability", "predicted_label"], preds), sep="\t")
    save_checkpoint(os.path.join(out, "model.ckpt"), result.best_state, cfg.to_dict())


def cmd_generate(args):
    if args.config:
        raw = _load_json(args.config, "config")
        try:
            cfg = SynthConfig.from_dict(raw)
        except (TypeError, ValueError) as e:
            raise UsageError(f"invalid generator config: {e}")
    else:
        cfg = default_benchmark_config()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = _ensure_out(args)
    g = generate_synthetic(cfg)
    save_dataset(g, out, name=args.name)
    with open(os.path.join(out, "synth_config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_stats(args):
    g = load_dataset(args.data)
    out = _ensure_out(args)
    feature_stats, projection = export_stats(g)
    write_table(os.path.join(out, "feature_stats.csv"), feature_stats)
    write_table(os.path.join(out, "projection.csv"), projection)
    return 0


def cmd_complete(args):
    g = load_dataset(args.data)
    out = _ensure_out(args)
    if args.params:
        state, config = load_checkpoint(args.params)
        hidden = int(config.get("hidden_dim", 64))
        params = dafc.DAFCParams.init(np.random.default_rng(0), g.d_obs,
                                      g.d_unobs, hidden)
        for name, tensor in params.named_tensors():
            if name not in state:
                raise DataError(f"{args.params}: checkpoint lacks {name}; was the "
                                "model trained without completion?")
            tensor.values[...] = state[name]
    else:
        params = dafc.DAFCParams.init(np.random.default_rng(args.seed),
                                      g.d_obs, g.d_unobs, args.hidden_dim)
    result, _ = dafc.complete_features(g, params, args.K, raw_scores=args.raw_scores)
    completed = result.x_unobs_completed.values
    rows = [[str(i)] + [FLOAT_FMT % v for v in completed[i]]
            for i in range(g.num_nodes)]
    write_table(os.path.join(out, "completed.tsv"),
                (["node_id"] + [f"u{j}" for j in range(g.d_unobs)], rows), sep="\t")
    iters = [[str(i), str(int(result.completed_at_iter[i]))]
             for i in range(g.num_nodes)]
    write_table(os.path.join(out, "completed_at_iter.tsv"),
                (["node_id", "completed_at_iter"], iters), sep="\t")
    return 0


def cmd_train(args):
    cfg = _train_config(args)
    g = _prepare_graph(args, cfg)
    result = train(g, cfg)
    out = _ensure_out(args)
    _write_run_outputs(out, g, result)
    return 0


def cmd_eval(args):
    state, config = load_checkpoint(args.params)
    try:
        cfg = TrainConfig.from_dict(config)
    except (TypeError, ValueError) as e:
        raise DataError(f"{args.params}: bad config in checkpoint ({e})")
    g = _prepare_graph(args, cfg)
    test_f1, test_auc, _ = evaluate(g, cfg, state)
    out = _ensure_out(args)
    summary = {"test_f1": test_f1, "test_auc": test_auc, "config": cfg.to_dict()}
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_sweep(args):
    grid = _load_json(args.grid, "grid")
    if not isinstance(grid, dict) or not grid:
        raise UsageError(f"{args.grid}: grid must be a non-empty JSON object")
    base = {}
    if args.config:
        raw = _load_json(args.config, "config")
        base.update(raw)
    field_names = {f.name for f in dataclasses.fields(TrainConfig)}
    for key in grid:
        if key not in field_names:
            raise UsageError(f"unknown grid parameter {key!r}")

    g = load_dataset(args.data)
    keys = sorted(grid.keys())
    cells = [()]
    for key in keys:
        values = grid[key]
        if not isinstance(values, list) or not values:
            raise UsageError(f"grid entry {key!r} must be a non-empty list")
        cells = [cell + ((key, v),) for cell in cells for v in values]

    run_rows, agg_rows = [], []
    for cell in cells:
        f1s, aucs = [], []
        for seed in range(args.seeds):
            values = dict(base)
            values.update(dict(cell))
            values["seed"] = seed
            try:
                cfg = TrainConfig.from_dict(values)
            except (TypeError, ValueError) as e:
                raise UsageError(f"invalid sweep config: {e}")
            gs = g
            if not ((gs.split == SPLIT_VAL).any() and (gs.split == SPLIT_TEST).any()):
                gs = split_dataset(gs, seed=cfg.seed)
            result = train(gs, cfg)
            f1s.append(result.test_f1)
            aucs.append(result.test_auc)
            run_rows.append([f"{k}={v}" for k, v in cell]
                            + [seed, result.test_f1, result.test_auc])
        agg_rows.append([f"{k}={v}" for k, v in cell]
                        + [float(np.mean(f1s)), float(np.std(f1s)),
                           float(np.mean(aucs)), float(np.std(aucs))])

    out = _ensure_out(args)
    cell_cols = [f"param_{k}" for k in keys]
    _write_csv(os.path.join(out, "runs.csv"),
               cell_cols + ["seed", "test_f1", "test_auc"], run_rows)
    _write_csv(os.path.join(out, "aggregated.csv"),
               cell_cols + ["test_f1_mean", "test_f1_std",
                            "test_auc_mean", "test_auc_std"], agg_rows)
    return 0


def _add_train_flags(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--model", choices=("ktgnn", "gcn", "mlp"))
    p.add_argument("--completion", choices=("none", "zero", "mean"))
    p.add_argument("--K", type=int)
    p.add_argument("--lambda", type=float, dest="lambda")
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--layers", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--ablate", action="append",
                   choices=("no_dafc", "no_damp", "no_dtc", "no_dist_loss",
                            "no_kl_loss"))
    p.add_argument("--raw-scores", action="store_true", dest="raw_scores")
    p.add_argument("--drop-cross-edges", type=float, dest="drop_cross_edges")
    p.add_argument("--silent-only", action="store_true", dest="silent_only")


def build_parser():
    parser = _Parser(prog="ktgnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset directory")
    p.add_argument("--config", help="SynthConfig JSON (defaults to the benchmark)")
    p.add_argument("--seed", type=int)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("stats", help="export feature summaries and a 2-D projection")
    p.add_argument("--data", required=True, help="manifest.json path")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("complete", help="export completed unobservable features")
    p.add_argument("--data", required=True)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden-dim", type=int, default=64, dest="hidden_dim")
    p.add_argument("--raw-scores", action="store_true", dest="raw_scores")
    p.add_argument("--params", help="checkpoint providing trained parameters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("train", help="train a model and write metrics/predictions")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="re-evaluate a saved checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid of configs x seeds with aggregation")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True, help="JSON object of field -> values")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--config", help="base JSON config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
