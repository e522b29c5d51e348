"""Command-line driver.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import MODEL_MODES, ConfigError, ExperimentConfig, SbmSpec, dump_config, load_config
from .experiments import (
    atomic_write,
    build_dataset,
    homophily_trend,
    loglog_slope,
    run_benchmark,
    run_homophily,
    run_robustness,
    run_scaling,
)
from .graph import DatasetError
from .model import GraphContext, Model
from .plots import TableError, export_plots
from .rng import make_rng
from .training import evaluate, fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def _strs(text: str) -> list[str]:
    return [v for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--seed", type=int, help="base seed (overrides config)")
    common.add_argument("--mode", choices=MODEL_MODES + ("gcn_baseline", "mlp_baseline"),
                        help="model mode (overrides config)")
    common.add_argument("--dataset", help="dataset directory (overrides config)")
    common.add_argument("--sbm", action="store_true", help="use the default SBM fixture as data")
    common.add_argument("--epochs", type=int, help="max epochs (overrides config)")
    common.add_argument("--runs", type=int, help="number of seeded runs (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="ppgnn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("train", parents=[common], help="one fit; writes epochs.jsonl and metrics.json")
    sub.add_parser("benchmark", parents=[common], help="num_runs seeded fits; writes metrics.json")
    rob = sub.add_parser("robustness", parents=[common], help="edge addition/deletion sweep")
    rob.add_argument("--ratios", type=_floats, default=[0.0, 0.25, 0.5, 0.75])
    rob.add_argument("--modes", type=_strs, default=["add", "delete"])
    rob.add_argument("--models", type=_strs, default=None)
    hom = sub.add_parser("homophily", parents=[common], help="same-label ratio per probability bin")
    hom.add_argument("--bins", type=int, default=10)
    hom.add_argument("--untrained", action="store_true", help="skip training (null model)")
    sca = sub.add_parser("scaling", parents=[common], help="graph-learning time vs graph size")
    sca.add_argument("--sizes", type=_ints, default=[1000, 2000, 4000, 8000])
    sca.add_argument("--anchors", type=int, default=64)
    sca.add_argument("-k", type=int, default=4)
    sca.add_argument("--reps", type=int, default=5)
    plot = sub.add_parser("plot", help="render CSV tables in a directory as SVG")
    plot.add_argument("input", help="directory holding robustness/homophily/scaling CSVs")
    plot.add_argument("--out", help="output directory (default: input directory)")
    val = sub.add_parser("validate-config", help="check a config file against the schema")
    val.add_argument("--config", required=True)
    return p


def resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.dataset or args.sbm:
        cfg = ExperimentConfig(sbm=None if args.dataset else SbmSpec(), dataset=args.dataset)
    else:
        raise UsageError("give --config, --dataset or --sbm")
    if args.dataset:
        cfg = replace(cfg, dataset=args.dataset, sbm=None)
    elif args.sbm and cfg.sbm is None:
        cfg = replace(cfg, dataset=None, sbm=SbmSpec())
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.mode is not None:
        changes["model"] = args.mode
    if args.epochs is not None:
        changes["max_epochs"] = args.epochs
    if changes:
        cfg = cfg.with_train(**changes)
    if args.out:
        cfg = replace(cfg, out=args.out)
    if args.runs is not None:
        cfg = replace(cfg, num_runs=args.runs)
    return cfg


def _cmd_train(cfg: ExperimentConfig, args) -> None:
    ds = build_dataset(cfg)
    result = fit(ds, cfg.train)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    result.write_epochs(out / "epochs.jsonl")
    metrics = {
        "model": cfg.model,
        "seed": cfg.train.seed,
        "best_epoch": result.best_epoch,
        "val_acc": result.best_val_acc,
        "test_acc": evaluate(result.model, ds, "test", result.context),
        "epochs_run": len(result.epochs),
        "temperature": result.model.temperature,
    }
    atomic_write(out / "metrics.json", json.dumps(metrics, indent=2) + "\n")
    atomic_write(out / "config.json", dump_config(cfg))
    print(f"{cfg.model}: test accuracy {metrics['test_acc']:.4f} (best epoch {result.best_epoch})")


def _cmd_benchmark(cfg, args) -> None:
    rec = run_benchmark(cfg)
    print(f"{cfg.model}: {100 * rec.mean:.2f} +- {100 * rec.std:.2f} over {len(rec.test_acc)} runs"
          + (" (some runs failed)" if rec.warning else ""))


def _cmd_robustness(cfg, args) -> None:
    for mode in args.modes:
        if mode not in ("add", "delete"):
            raise UsageError(f"unknown noise mode {mode!r}")
    rows = run_robustness(cfg, args.ratios, args.modes, args.models)
    for r in rows:
        print(f"{r['model']:>13} {r['mode']:>6} {r['ratio']:.2f}  {100 * r['mean']:.2f} +- {100 * r['std']:.2f}")


def _cmd_homophily(cfg, args) -> None:
    if not cfg.train.learns_graph:
        raise UsageError("homophily needs a graph-learning mode (ppgnn or ppgnn_anchor)")
    ds = build_dataset(cfg)
    if args.untrained:
        model = Model.for_dataset(ds, cfg.train, make_rng(cfg.train.seed))
        ctx = GraphContext(ds, cfg.train)
    else:
        result = fit(ds, cfg.train)
        model, ctx = result.model, result.context
    rows = run_homophily(model, ds, args.bins, context=ctx, seed=cfg.train.seed, out=cfg.out)
    for r in rows:
        ratio = "-" if r["same_label_ratio"] is None else f"{r['same_label_ratio']:.3f}"
        print(f"({r['lower']:.2f}, {r['upper']:.2f}]  {ratio:>6}  {r['pairs']}")
    print(f"spearman rho: {homophily_trend(rows):.3f}")


def _cmd_scaling(args) -> None:
    out = args.out or "runs"
    rows = run_scaling(args.sizes, args.anchors, args.k, reps=args.reps,
                       seed=args.seed or 0, out=out)
    for r in rows:
        print(r)
    sizes = [r["num_nodes"] for r in rows]
    for col in ("node_node_ms", "anchor_ms"):
        slope = loglog_slope(sizes, [r[col] for r in rows])
        if slope is not None:
            print(f"{col} log-log slope: {slope:.3f}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate-config":
            cfg = load_config(args.config)
            print(dump_config(cfg), end="")
        elif args.command == "plot":
            for path in export_plots(args.input, args.out):
                print(path)
        elif args.command == "scaling":
            _cmd_scaling(args)
        else:
            cfg = resolve_config(args)
            {"train": _cmd_train, "benchmark": _cmd_benchmark, "robustness": _cmd_robustness,
             "homophily": _cmd_homophily}[args.command](cfg, args)
    except (UsageError, ConfigError) as exc:
        print(f"ppgnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, TableError, FileNotFoundError) as exc:
        print(f"ppgnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"ppgnn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
