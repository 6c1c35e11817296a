"""Command-line interface: generate / fit / benchmark / report."""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

import numpy as np

from .baselines import kiv_fit
from .datagen import DESIGNS, MERROR_KINDS, DesignSpec, load_dataset, save_dataset, generate
from .estimator import GdConfig, MekivConfig, mekiv_fit
from .harness import (
    _BASELINE_KIND,
    METHODS,
    ExperimentConfig,
    mse_out_of_sample,
    read_results_csv,
    run_experiment,
    write_report,
)


def _cmd_generate(args) -> int:
    spec = DesignSpec(
        design=args.design,
        merror_kind=args.merror_kind,
        merror_level=args.merror_level,
        sample_size=args.n,
        seed=args.seed,
        rho=args.rho,
    )
    ds = generate(spec)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} records to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    ds = load_dataset(args.data, args.meta)
    n1 = args.n_stage1 if args.n_stage1 is not None else len(ds) // 2
    split1, split2 = ds.split(n1)
    start = time.perf_counter()
    summary = {
        "method": args.method,
        "design": ds.spec.design,
        "merror_kind": ds.spec.merror_kind,
        "merror_level": ds.spec.merror_level,
        "rho": ds.spec.rho,
        "n_stage1": len(split1),
        "n_stage2": len(split2),
    }
    if args.method == "mekiv":
        cfg = MekivConfig(
            alpha_count=args.alpha_count,
            pair_cap=args.pair_cap,
            gd=GdConfig(max_iters=args.max_iters),
            seed=args.seed,
        )
        fn, details = mekiv_fit(split1, split2, cfg, details=True)
        summary.update(
            lambda_n=details.stage1.lambda_n,
            lambda_mn=details.stage1.lambda_mn,
            lambda_x=details.recovery.lambda_x,
            dropped_pairs=details.recovery.dropped_pair_count,
            optimizer_steps=len(details.recovery.loss_trace) - 1,
            final_loss=float(details.recovery.loss_trace[-1]),
        )
    else:
        fn = kiv_fit(_BASELINE_KIND[args.method], split1, split2)
        summary.update(lambda_x=fn.lambda_x)
    summary.update(
        xi=fn.xi,
        mse_out_of_sample=mse_out_of_sample(
            fn, ds.spec.design, ds.spec.rho, args.test_grid_size, args.seed
        ),
        wall_time_seconds=time.perf_counter() - start,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"wrote model summary to {args.out}")
    return 0


def _cmd_benchmark(args) -> int:
    config = ExperimentConfig.from_json(args.config)
    rows = run_experiment(config, workers=args.workers)
    n_err = sum(1 for r in rows if r.status != "ok")
    print(
        f"completed {len(rows)} cells ({n_err} errors); "
        f"results in {Path(config.output_dir) / 'results.csv'}"
    )
    return 0


def _cmd_report(args) -> int:
    rows = read_results_csv(args.results)
    summary_path, long_path = write_report(rows, args.out)
    print(f"wrote {summary_path} and {long_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mekiv",
        description=(
            "Measurement-error-corrected kernel instrumental variable regression: "
            "synthetic data generation, model fitting, and benchmarking."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a dataset CSV plus design sidecar JSON")
    g.add_argument("--design", required=True, choices=DESIGNS)
    g.add_argument("--n", type=int, default=1000, help="number of records")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--merror-kind", choices=MERROR_KINDS, default="gaussian")
    g.add_argument("--merror-level", type=float, default=1.0)
    g.add_argument("--rho", type=float, default=None, help="demand confounding level")
    g.add_argument("--out", required=True, help="output CSV path")
    g.set_defaults(func=_cmd_generate)

    f = sub.add_parser("fit", help="fit one method on a dataset, write a summary JSON")
    f.add_argument("--data", required=True, help="dataset CSV")
    f.add_argument("--meta", default=None, help="design sidecar JSON (default: CSV with .json)")
    f.add_argument("--method", required=True, choices=METHODS)
    f.add_argument("--n-stage1", type=int, default=None, help="stage-1 rows (default: half)")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--alpha-count", type=int, default=64)
    f.add_argument("--pair-cap", type=int, default=20_000)
    f.add_argument("--max-iters", type=int, default=2000)
    f.add_argument("--test-grid-size", type=int, default=400)
    f.add_argument("--out", required=True, help="output summary JSON path")
    f.set_defaults(func=_cmd_fit)

    b = sub.add_parser("benchmark", help="run the full grid from a JSON config")
    b.add_argument("--config", required=True, help="experiment config JSON")
    b.add_argument("--workers", type=int, default=None, help="overrides MEKIV_WORKERS")
    b.set_defaults(func=_cmd_benchmark)

    r = sub.add_parser("report", help="aggregate a results CSV into summary tables")
    r.add_argument("--results", required=True, help="results CSV from benchmark")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
