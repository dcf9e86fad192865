"""Batch driver: simulate / fit / predict / evaluate / calibrate / benchmark.

Every command takes ``--config PATH`` (JSON, schema-versioned) plus optional
``--seed``, ``--jobs`` (env override HETDID_JOBS), ``--out`` and ``--verbose``.
Outputs are deterministic per (config, seed) and carry no timestamps; failures
write a structured error record (module, operation, message) to stderr and to
``errors.json`` in the output directory, and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import catt
from .config import RunConfig, load_config
from .dgp import DgpConfig, IvDgpConfig, simulate, simulate_iv
from .exceptions import SpecValidationError
from .panel import NEVER_TREATED
from .pipeline import (
    benchmark_from_config,
    calibrate_workflow,
    evaluate_workflow,
    fit_catt_workflow,
    fit_covshift_workflow,
    fit_iv_workflow,
    materialize_panel,
)
from .serialize import load_model, save_model


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_resolved(config: RunConfig, out: Path) -> None:
    with open(out / "resolved_config.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(config.resolved_json())
        fh.write("\n")


def _panel_long_rows(panel):
    for i, uid in enumerate(panel.unit_ids):
        cohort = "never" if panel.cohort[i] == NEVER_TREATED else int(panel.cohort[i])
        for t in range(panel.n_periods):
            yield [uid, t, panel.outcomes[i, t], cohort] + list(panel.covariates[i])


def cmd_simulate(config: RunConfig, out: Path) -> None:
    source, cfg = config.data_source
    if source == "iv_dgp":
        sim = simulate_iv(IvDgpConfig(**cfg))
        v = sim.view
        header = ["unit", "z", "dy", "dd"] + [f"w{j+1}" for j in range(v.w.shape[1])]
        rows = ([i, int(v.z[i]), v.dy[i], v.dd[i]] + list(v.w[i])
                for i in range(v.n_rows))
        write_csv(out / "iv_data.csv", header, rows)
        write_csv(out / "oracle.csv",
                  ["unit", "clate", "g_y", "g_d", "pi_z"],
                  ([i, sim.clate[i], sim.g_y[i], sim.g_d[i], sim.pi[i]]
                   for i in range(v.n_rows)))
        return
    panel, sim = materialize_panel(config)
    header = ["unit", "period", "outcome", "cohort"] + list(panel.covariate_names)
    write_csv(out / "panel.csv", header, _panel_long_rows(panel))
    if sim is not None:
        oracle_header = ["unit", "theta", "propensity", "g0", "y1_treated", "y1_control"]
        g0 = sim.g0
        write_csv(out / "oracle.csv", oracle_header,
                  ([panel.unit_ids[i], sim.theta[i], sim.propensity[i],
                    (g0[i] if g0 is not None else ""), sim.y1_treated[i],
                    sim.y1_control[i]] for i in range(panel.n_units)))


def _write_predictions(path: Path, ids, preds) -> None:
    write_csv(path, ["row", "prediction"], ([i, p] for i, p in zip(ids, preds)))


def cmd_fit(config: RunConfig, out: Path) -> None:
    mode = config.mode
    if mode == "catt":
        art = fit_catt_workflow(config)
        x = art.train_view.x
        x_names = list(art.train_x_names)
        ids = list(range(x.shape[0]))
    elif mode == "iv":
        art = fit_iv_workflow(config)
        x = art.view.x
        x_names = [f"x{j}" for j in art.view.x_cols]
        ids = list(range(x.shape[0]))
    elif mode == "covshift":
        art = fit_covshift_workflow(config)
        x = art.view.x
        x_names = [f"x{j}" for j in art.view.x_cols]
        ids = list(range(x.shape[0]))
    else:
        raise SpecValidationError(f"unknown mode {mode!r}")
    save_model(art.model, out / "model.json")
    write_json(out / "fit_report.json", art.report)
    write_csv(out / "train_features.csv", x_names,
              (list(row) for row in np.asarray(x)))
    _write_predictions(out / "train_predictions.csv", ids, art.model.predict(x))


def cmd_predict(model_path: str, data_path: str, out: Path) -> None:
    model = load_model(model_path)
    # exact float parsing so re-predicting reproduces stored predictions bytewise
    df = pd.read_csv(data_path, float_precision="round_trip")
    names = (model.metadata or {}).get("x_names")
    if names and all(n in df.columns for n in names):
        x = df[list(names)].to_numpy(dtype=float)
    else:
        x = df.to_numpy(dtype=float)
    preds = catt.predict(model, x)
    _write_predictions(out / "predictions.csv", list(range(len(preds))), preds)


def cmd_evaluate(config: RunConfig, out: Path) -> None:
    write_json(out / "mse_report.json", evaluate_workflow(config))


def cmd_calibrate(config: RunConfig, out: Path) -> None:
    report, oracle_bins, _model = calibrate_workflow(config)
    rows = report.to_rows()
    if oracle_bins is not None:
        for row, ob in zip(rows, oracle_bins):
            row["oracle_theta"] = ob
    header = list(rows[0].keys())
    write_csv(out / "calibration.csv", header,
              ([row[k] for k in header] for row in rows))
    write_json(out / "calibration.json", {
        "thresholds": list(report.thresholds),
        "overall_att": report.overall_att,
        "n_bins_requested": report.n_bins_requested,
        "collapsed": report.collapsed,
        "empty_bins": list(report.empty_bins),
        "bins": rows,
    })
    # Plot data for an external 45-degree line figure.
    def _midpoint(b):
        if np.isfinite(b.lower) and np.isfinite(b.upper):
            return (b.lower + b.upper) / 2.0
        return b.gatt_model

    write_csv(out / "calibration_plot.csv",
              ["bin", "midpoint", "gatt_model", "att", "ci_low", "ci_high"],
              ([b.index, _midpoint(b), b.gatt_model, b.att, b.ci_low, b.ci_high]
               for b in report.bins))


def cmd_benchmark(config: RunConfig, out: Path) -> None:
    result = benchmark_from_config(config)
    write_csv(out / "benchmark_results.csv",
              ["variant", "learner", "nuisance", "replication", "seed", "mse"],
              ([r.variant, r.learner, r.nuisance, r.replication, r.seed, r.mse]
               for r in result.rows))
    write_json(out / "benchmark_summary.json", {"cells": result.summary()})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetdid",
        description="Heterogeneous effects on the treated from panel data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "fit", "evaluate", "calibrate", "benchmark"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        _common_flags(p)
    p = sub.add_parser("predict")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    _common_flags(p)
    return parser


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int,
                   default=int(os.environ.get("HETDID_JOBS", "0")) or None)
    p.add_argument("--out", default=None)
    p.add_argument("--verbose", action="store_true")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out) if args.out else None
    config = None
    try:
        if args.command == "predict":
            out = out or Path("hetdid_out")
            out.mkdir(parents=True, exist_ok=True)
            cmd_predict(args.model, args.data, out)
            if args.verbose:
                print(f"predictions written to {out}", file=sys.stderr)
            return 0
        config = load_config(args.config).with_overrides(
            seed=args.seed, jobs=args.jobs,
            output_dir=str(out) if out else None,
        )
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_resolved(config, out)
        {
            "simulate": cmd_simulate,
            "fit": cmd_fit,
            "evaluate": cmd_evaluate,
            "calibrate": cmd_calibrate,
            "benchmark": cmd_benchmark,
        }[args.command](config, out)
        if args.verbose:
            print(f"{args.command}: outputs in {out}", file=sys.stderr)
        return 0
    except Exception as exc:  # structured error record, nonzero exit
        record = {
            "module": type(exc).__module__,
            "operation": args.command,
            "message": str(exc),
        }
        print(json.dumps(record), file=sys.stderr)
        if out is not None:
            try:
                out.mkdir(parents=True, exist_ok=True)
                write_json(out / "errors.json", record)
            except OSError:
                pass
        return 1


if __name__ == "__main__":
    sys.exit(main())
