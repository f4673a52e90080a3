"""Command-line driver: ``freqgsp <subcommand> [--config FILE] [flags]``.

Flags override values read from ``--config`` (a flat ``key = value`` file).
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .data import DataError
from .evaluation import MetricReport
from .sparse import ParameterError
from .spectral import ConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# flag name -> ExperimentConfig / FilterConfig key
_CONFIG_FLAGS = {
    "dataset": str, "format": str, "delimiter": str, "min_rating": str, "categories": str,
    "ratios": str, "seed": int, "stratify": str, "model": str,
    "p1": int, "p2": int, "q": float, "alpha1": float, "alpha2": float, "k1": int, "k2": int,
    "ihf": str, "ilf": str, "ihnf": str, "uhnf": str,
    "gfcf_alpha": float, "gfcf_k": int, "pgsp_phi": float, "pgsp_k": int,
    "topk": str, "exclude": str, "out": str, "cache": str, "save_ranked": str,
}


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value configuration file")
    g = p.add_argument_group("experiment configuration")
    for name, typ in _CONFIG_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--split", help="directory written by 'prepare'; reused instead of re-splitting")
    p.add_argument("-v", "--verbose", action="store_true")


def resolve_config(args) -> ex.ExperimentConfig:
    """Config file values, then every flag that was given on the command line."""
    flat = ex.read_config(args.config).as_flat() if args.config else {}
    for name in _CONFIG_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            flat[name] = v
    return ex.ExperimentConfig.from_flat(flat)


def _prepared(config, args):
    if args.split:
        return ex.load_prepared(args.split, config.categories)
    if not config.dataset:
        raise ParameterError("no dataset given (--dataset or --split)")
    return ex.prepare(config)


def _parse_values(spec: str):
    name, _, raw = spec.partition("=")
    name = name.strip().replace("-", "_")
    if name not in ex.HYPERPARAMETERS or not raw:
        raise ParameterError(f"bad grid entry {spec!r}; expected NAME=v1,v2,... with NAME in {ex.HYPERPARAMETERS}")
    typ = int if name in ("p1", "p2", "k1", "k2") else float
    try:
        return name, tuple(typ(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ParameterError(f"cannot parse values in {spec!r}") from None


def cmd_prepare(args, config):
    if not config.out:
        raise ParameterError("prepare needs --out")
    prep = _prepared(config, args)
    ex.save_prepared(config, prep)
    tr = prep.train
    print(f"{tr.n_users} users, {tr.n_items} items, train {tr.nnz}, "
          f"validation {len(prep.split.validation)}, test {len(prep.split.test)} -> {config.out}")


def cmd_run(args, config):
    report = ex.run(config, _prepared(config, args))
    print(report.to_text())


def cmd_ablate(args, config):
    results = ex.ablate(config, prep=_prepared(config, args))
    print(ex.format_table(results))


def cmd_sweep(args, config):
    prep = _prepared(config, args)
    if args.grid:
        grid = ex.SweepGrid(dict(_parse_values(s) for s in args.grid))
    else:
        grid = ex.SweepGrid.default_grid(args.max_components)
    if args.mode == "hierarchical" and not args.grid:
        stages = ex.default_stages(grid)
        print(f"hierarchical sweep over {len(stages)} stages (full grid would be {grid.size} points)")
        result = ex.hierarchical_sweep(config, stages, args.metric, prep, workers=args.workers)
    else:
        print(f"grid sweep over {grid.size} points")
        result = ex.sweep(config, grid, args.metric, prep, workers=args.workers)
    best = {n: getattr(result.best, n) for n in ex.HYPERPARAMETERS}
    print("best " + " ".join(f"{k}={v}" for k, v in best.items()) + f"  {args.metric}={result.best_value:.4f}")


def cmd_consistency(args, config):
    Ks = tuple(int(k) for k in args.ks.split(","))
    rows = ex.consistency(config, Ks, args.list_size, _prepared(config, args))
    table = ex.kl_trend(rows)
    names = list(ex.COMBINATIONS)
    print("K    " + "  ".join(f"{n:>18}" for n in names))
    for K in Ks:
        print(f"{K:<4} " + "  ".join(f"{v:18.4f}" for v in table[K]))


def cmd_report(args):
    """Print stored results from output directories or json files."""
    status = EXIT_OK
    for target in args.paths:
        p = Path(target)
        files = [p] if p.is_file() else [f for f in (p / "report.json", p / "ablation.json") if f.exists()]
        if not files:
            raise DataError(f"{target}: no report.json or ablation.json found")
        for f in files:
            doc = json.loads(f.read_text(encoding="utf-8"))
            print(f"== {f}  (data sha256 {doc.get('data_sha256', '?')[:12]})")
            if "metrics" in doc:
                print(MetricReport.from_dict(doc["metrics"]).to_text())
            elif "rows" in doc:
                print(ex.format_table({k: MetricReport.from_dict(v) for k, v in doc["rows"].items()}))
            else:
                raise DataError(f"{f}: unrecognized result file")
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="freqgsp", description="Frequency-aware graph filtering experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, help_ in (("prepare", "split a dataset and save it"),
                        ("run", "fit on train+validation and evaluate on test"),
                        ("ablate", "evaluate every ablation row")):
        _add_config_flags(sub.add_parser(name, help=help_))

    sp_ = sub.add_parser("sweep", help="validation search over hyperparameters")
    _add_config_flags(sp_)
    sp_.add_argument("--grid", action="append", metavar="NAME=V1,V2",
                     help="explicit grid dimension (repeatable); default is the full default grid")
    sp_.add_argument("--mode", choices=("hierarchical", "grid"), default="hierarchical")
    sp_.add_argument("--metric", default="ndcg@10")
    sp_.add_argument("--workers", type=int, default=1)
    sp_.add_argument("--max-components", type=int, default=256)

    cp = sub.add_parser("consistency", help="KL between historical and predicted category mixes")
    _add_config_flags(cp)
    cp.add_argument("--ks", default="6,8,10,14,18")
    cp.add_argument("--list-size", type=int, default=20)

    rp = sub.add_parser("report", help="print stored results")
    rp.add_argument("paths", nargs="+")
    return ap


COMMANDS = {"prepare": cmd_prepare, "run": cmd_run, "ablate": cmd_ablate,
            "sweep": cmd_sweep, "consistency": cmd_consistency}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args)
        config = resolve_config(args)
        COMMANDS[args.command](args, config)
    except ParameterError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
