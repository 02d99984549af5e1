"""Command-line interface: ``optimize``, ``run``, ``sweep`` and ``validate``.

Exit codes: 0 success, 1 a run or check failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, build_config, load_config
from .engine import ConvergenceError, cmlmc, trace_to_csv
from .errors import HierarchyError, InfeasibleToleranceError, UnsupportedCaseError
from .geometric import optimal_beta, optimal_geometric_hierarchy
from .hierarchy import round_hierarchy, total_work
from .optimizer import OptimalSetup, l_bounds, optimal_L
from .presets import PRESETS
from .validation import run_all

log = logging.getLogger("mlmc_hierarchy")

OPTIMIZE_COLUMNS = [
    "tol", "L", "theta", "work_real", "work_rounded", "rounded_over_real", "L_rounded",
    "geo_beta", "geo_L", "geo_theta", "work_geometric", "geometric_over_optimal", "L_lo", "L_hi", "error",
]
RUN_COLUMNS = [
    "tol", "seed", "status", "estimate", "error", "total_work", "theta", "bias", "stat", "L", "iterations",
]
SUMMARY_COLUMNS = [
    "tol", "runs", "failures", "work_median", "work_q05", "work_q95",
    "error_median", "error_q05", "error_q95", "exceed_fraction",
]


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def _write_csv(path: Path, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in columns])


def _print_rows(columns, rows):
    print(",".join(columns))
    for row in rows:
        print(",".join(str(_fmt(row.get(c, ""))) for c in columns))


def optimize_rows(cfg: ExperimentConfig) -> list:
    """One row per tolerance: optimal, rounded and geometric hierarchies and their predicted work."""
    sampler = cfg.sampler()
    rows = []
    for tol in cfg.tolerances:
        setup = cfg.setup(tol)
        row = {"tol": tol, "geo_beta": optimal_beta(cfg.rates), "error": ""}
        try:
            L, best = optimal_L(setup)
            rounded = round_hierarchy(best.hierarchy, sampler.mesh_rule)
            geo = optimal_geometric_hierarchy(setup)
            row.update(
                L=L, theta=best.theta, work_real=best.predicted_work,
                work_rounded=total_work(rounded, cfg.rates), L_rounded=rounded.levels,
                geo_L=geo.L, geo_theta=geo.theta, work_geometric=geo.predicted_work,
            )
            row["rounded_over_real"] = row["work_rounded"] / row["work_real"]
            row["geometric_over_optimal"] = geo.predicted_work / best.predicted_work
            try:
                row["L_lo"], row["L_hi"] = l_bounds(OptimalSetup(setup.rates, setup.constants, tol))
            except (InfeasibleToleranceError, UnsupportedCaseError):
                pass
        except (InfeasibleToleranceError, HierarchyError) as exc:
            row["error"] = str(exc)
        rows.append(row)
    return rows


def _one_run(args):
    cfg, tol, seed = args
    row = {"tol": tol, "seed": seed}
    try:
        report = cmlmc(cfg.continuation, cfg.setup(tol), cfg.sampler(), seed, cfg.mode)
    except ConvergenceError as exc:
        row.update(status="no_convergence", iterations=len(exc.trace))
        return row, None, str(exc)
    except (InfeasibleToleranceError, HierarchyError, RuntimeError) as exc:
        row.update(status="failed")
        return row, None, str(exc)
    row.update(
        status="ok", estimate=report.estimate, error=abs(report.estimate - cfg.reference_value),
        total_work=report.total_work, theta=report.theta_used, bias=report.bias_estimate,
        stat=report.stat_error_estimate, L=report.hierarchy.levels, iterations=len(report.iterations),
    )
    return row, report, None


def execute_runs(cfg: ExperimentConfig) -> list:
    """Run CMLMC for every (tolerance, seed) pair; results sorted by tolerance (descending) and seed."""
    jobs = [(cfg, tol, seed) for tol in cfg.tolerances for seed in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_one_run, jobs))
    else:
        results = [_one_run(job) for job in jobs]
    results.sort(key=lambda r: (-r[0]["tol"], r[0]["seed"]))
    return results


def summarize(rows: list, tolerances) -> list:
    out = []
    for tol in tolerances:
        mine = [r for r in rows if r["tol"] == tol]
        ok = [r for r in mine if r["status"] == "ok"]
        row = {"tol": tol, "runs": len(mine), "failures": len(mine) - len(ok)}
        if ok:
            work = np.array([r["total_work"] for r in ok])
            err = np.array([r["error"] for r in ok])
            for name, arr in (("work", work), ("error", err)):
                q05, med, q95 = np.quantile(arr, [0.05, 0.5, 0.95])
                row.update({f"{name}_median": float(med), f"{name}_q05": float(q05), f"{name}_q95": float(q95)})
            row["exceed_fraction"] = float(np.mean(err > tol))
        out.append(row)
    return out


def work_slope(summary: list) -> float:
    pts = [(r["tol"], r["work_median"]) for r in summary if "work_median" in r]
    if len(pts) < 2:
        return math.nan
    tol, work = np.log(np.array(pts)).T
    return float(np.polyfit(tol, work, 1)[0])


def _save_runs(cfg: ExperimentConfig, results: list, summary: list):
    out = cfg.output_dir
    if out is None:
        return
    _write_csv(out / "runs.csv", RUN_COLUMNS, [r[0] for r in results])
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    traces = []
    for row, report, _ in results:
        if report is not None:
            body = trace_to_csv(report.iterations).splitlines()[1:]
            traces.extend(f"{row['tol']!r},{row['seed']},{line}" for line in body)
    header = "target_tol,seed," + trace_to_csv([]).strip()
    (out / "traces.csv").write_text("\n".join([header] + traces) + "\n", encoding="utf-8")
    with open(out / "reports.jsonl", "w", encoding="utf-8") as fh:
        for row, report, _ in results:
            if report is not None:
                fh.write(json.dumps({"tol": row["tol"], "seed": row["seed"], **report.to_dict()}) + "\n")


def cmd_optimize(cfg: ExperimentConfig) -> int:
    rows = optimize_rows(cfg)
    _print_rows(OPTIMIZE_COLUMNS, rows)
    if cfg.output_dir is not None:
        _write_csv(cfg.output_dir / "optimize.csv", OPTIMIZE_COLUMNS, rows)
    return 0


def _run_and_report(cfg: ExperimentConfig) -> tuple:
    results = execute_runs(cfg)
    summary = summarize([r[0] for r in results], cfg.tolerances)
    _save_runs(cfg, results, summary)
    _print_rows(SUMMARY_COLUMNS, summary)
    for row, _, msg in results:
        if msg:
            log.error("tol=%g seed=%d: %s", row["tol"], row["seed"], msg)
    for row in summary:
        if "exceed_fraction" in row:
            print(f"tol={row['tol']:g}: {100 * row['exceed_fraction']:.1f}% of runs exceeded the tolerance")
    return (1 if any(msg for _, _, msg in results) else 0), summary


def cmd_run(cfg: ExperimentConfig) -> int:
    return _run_and_report(cfg)[0]


def cmd_sweep(cfg: ExperimentConfig) -> int:
    status, summary = _run_and_report(cfg)
    slope = work_slope(summary)
    print(f"work ~ tol^{slope:.3f} (expected exponent -{cfg.preset.rate:g})")
    if cfg.output_dir is not None:
        body = {"slope": slope, "expected": -cfg.preset.rate, "tolerances": list(cfg.tolerances)}
        (cfg.output_dir / "slope.json").write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
    return status


def cmd_validate(perturb: float = 0.0, milstein_samples: int = 100_000) -> int:
    results = run_all(perturb, milstein_samples)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    return 0 if all(r.passed for r in results) else 1


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment file; flags override its entries")
    common.add_argument("--preset", choices=sorted(PRESETS), help="parameter set (default ex2)")
    common.add_argument("--tol", type=float, nargs="+", help="target tolerance(s)")
    common.add_argument("--out", help="output directory for CSV/JSON files")

    runs = argparse.ArgumentParser(add_help=False)
    runs.add_argument("--seeds", type=int, help="number of independent runs per tolerance")
    runs.add_argument("--seed", type=int, help="first seed (default 0)")
    runs.add_argument("--mode", help="optimal | geometric[:beta] | fixed_theta:theta")
    runs.add_argument("--workers", type=int, help="worker processes")

    ap = argparse.ArgumentParser(prog="mlmc-hierarchy", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("optimize", parents=[common], help="optimal and geometric hierarchies per tolerance")
    sub.add_parser("run", parents=[common, runs], help="continuation MLMC runs with summary statistics")
    sub.add_parser("sweep", parents=[common, runs], help="like run, plus the fitted work-vs-tol slope")
    val = sub.add_parser("validate", help="oracle and property checks")
    val.add_argument("--perturb", type=float, default=0.0, help="relative mutation fed to the mesh formulas")
    val.add_argument("--milstein-samples", type=int, default=100_000)
    return ap


def _config_from_args(args) -> ExperimentConfig:
    data = load_config(args.config) if args.config else {}
    if args.preset:
        data["preset"] = args.preset
    if args.tol:
        data["tolerances"] = args.tol
    if args.out:
        data["output_dir"] = args.out
    for name, key in (("seeds", "seeds"), ("seed", "seed"), ("mode", "mode"), ("workers", "workers")):
        value = getattr(args, name, None)
        if value is not None:
            data[key] = value
    if args.command == "sweep" and "tolerances" not in data:
        data["tolerances"] = [0.04, 0.02, 0.01, 0.005, 0.0025]
    return build_config(data)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "validate":
        return cmd_validate(args.perturb, args.milstein_samples)
    try:
        cfg = _config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "optimize":
        return cmd_optimize(cfg)
    if args.command == "run":
        return cmd_run(cfg)
    return cmd_sweep(cfg)


if __name__ == "__main__":
    sys.exit(main())
