"""Command-line interface: simulate, fit, sweep, bootstrap, score.

All randomness is seeded at this boundary; library code never reads ambient
entropy, so every command is deterministic given its full flag set.  Exit
codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .data_model import DataError, load_ipd, load_schema, save_ipd, save_schema
from .evaluation import (
    aggregate,
    replicate_metrics,
    score_replicate,
    tidy_rows,
)
from .runner import resolve_threads, run_jobs
from .selection import (
    SelectionError,
    SelectionReport,
    bootstrap_draw,
    intervals_from_draws,
    run_fx_adlasso,
    run_het_adlasso,
)
from .simulator import (
    SCENARIO_IDS,
    TrueModel,
    generator_parameters,
    scenario_spec,
    simulate_dataset,
    true_support,
)
from .solver import SolverError

METHODS = ("het", "fx")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def _parse_boundaries(raw: str):
    if raw == "event-quantiles":
        return raw
    try:
        return [float(x) for x in _parse_list(raw)]
    except ValueError:
        raise DataError(
            f"--boundaries must be 'event-quantiles' or a comma list of cut "
            f"points, got {raw!r}"
        ) from None


def _truth_payload(spec, truth: TrueModel, seed: int) -> dict:
    return {
        "scenario": spec.scenario,
        "seed": seed,
        "support": list(truth.support),
        "effects": dict(truth.effects),
        "treatment_effects": dict(truth.treatment_effects),
        "tau": truth.tau,
        "baseline_sd": truth.baseline_sd,
        "nonproportional": list(truth.nonproportional),
        "generator": generator_parameters(spec),
    }


def _truth_from_payload(raw: dict) -> TrueModel:
    return TrueModel(
        support=tuple(raw["support"]),
        effects=dict(raw["effects"]),
        treatment_effects=dict(raw["treatment_effects"]),
        tau=float(raw["tau"]),
        baseline_sd=float(raw["baseline_sd"]),
        nonproportional=tuple(raw["nonproportional"]),
    )


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec = scenario_spec(args.scenario, args.tau, args.trials_per_edge)
    dataset, truth = simulate_dataset(spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_ipd(out / "ipd.csv", dataset)
    save_schema(out / "schema.json", dataset.covariate_schema, dataset.network.reference)
    _write_json(out / "truth.json", _truth_payload(spec, truth, args.seed))
    print(f"wrote {out / 'ipd.csv'} ({len(dataset.records)} patients, "
          f"{len(dataset.trials)} trials)")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _run_method(dataset, method: str, args):
    kwargs = dict(
        n_periods=args.periods,
        boundaries=_parse_boundaries(args.boundaries),
        grid_size=args.grid_points,
        grid_span=args.grid_span,
        collapse_mode="auto" if args.collapse is None else args.collapse,
    )
    if method == "het":
        return run_het_adlasso(dataset, heterogeneity=args.heterogeneity, **kwargs)
    return run_fx_adlasso(dataset, **kwargs)


def _write_report(out: Path, report: SelectionReport) -> None:
    payload = report.to_dict()
    if payload.get("tau") is None:
        payload.pop("tau", None)
    _write_json(out / "report.json", payload)
    with open(out / "coefficients.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "role", "estimate", "selected"])
        selectable = set(report.weights)
        for name in sorted(report.estimates):
            selected = ""
            if name in selectable:
                selected = "yes" if name in report.support else "no"
            writer.writerow(
                [name, report.roles[name], _fmt(report.estimates[name]), selected]
            )


def cmd_fit(args) -> int:
    reference, schema = load_schema(args.schema)
    if args.collapse is True and any(s.kind == "continuous" for s in schema.values()):
        raise DataError(
            "--collapse requires all covariates categorical; continuous "
            "covariates make covariate patterns patient-specific"
        )
    dataset = load_ipd(args.ipd, schema, reference)
    report = _run_method(dataset, args.method, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_report(out, report)
    print(
        f"method={report.method} support={list(report.support)} "
        f"n_obs={report.n_obs} bic_points={len(report.bic_table)}"
    )
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _dataset_seed(master: int, cell_index: int, replicate: int) -> int:
    ss = np.random.SeedSequence([int(master), int(cell_index), int(replicate)])
    return int(ss.generate_state(1, np.uint64)[0] % (2**31))


def _sweep_job(job: tuple) -> tuple:
    (scenario, tau, tpe, replicate, seed, methods, options) = job
    spec = scenario_spec(scenario, tau, tpe)
    dataset, truth = simulate_dataset(spec, seed)
    results = {}
    for method in methods:
        try:
            if method == "het":
                report = run_het_adlasso(dataset, **options)
            else:
                report = run_fx_adlasso(dataset, **options)
            results[method] = ("ok", score_replicate(report, truth))
        except (SolverError, SelectionError, DataError) as exc:
            results[method] = ("error", str(exc))
    return (scenario, tau, tpe, replicate, seed, results)


def cmd_sweep(args) -> int:
    scenarios = _parse_list(args.scenarios)
    for s in scenarios:
        if s not in SCENARIO_IDS:
            raise DataError(f"unknown scenario {s!r}; valid: {', '.join(SCENARIO_IDS)}")
    taus = [float(t) for t in _parse_list(args.taus)]
    tpes = [int(t) for t in _parse_list(str(args.trials_per_edge))]
    methods = tuple(_parse_list(args.methods))
    for m in methods:
        if m not in METHODS:
            raise DataError(f"unknown method {m!r}; valid: {', '.join(METHODS)}")
    if args.replicates < 1:
        raise DataError("--replicates must be >= 1")

    options = dict(
        n_periods=args.periods,
        boundaries="event-quantiles",
        grid_size=args.grid_points,
        grid_span=args.grid_span,
        collapse_mode="auto",
    )
    cells = [(s, t, n) for s in scenarios for t in taus for n in tpes]
    jobs = []
    for cell_index, (scenario, tau, tpe) in enumerate(cells):
        for replicate in range(args.replicates):
            seed = _dataset_seed(args.seed, cell_index, replicate)
            jobs.append((scenario, tau, tpe, replicate, seed, methods, options))

    threads = resolve_threads(args.threads)
    started = time.time()
    results = run_jobs(_sweep_job, jobs, threads)
    elapsed = time.time() - started

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    raw_rows = []
    failures = []
    by_cell_method: dict[tuple, list] = {}
    for scenario, tau, tpe, replicate, seed, per_method in results:
        for method, (status, payload) in per_method.items():
            if status == "error":
                failures.append(
                    {
                        "scenario": scenario,
                        "tau": tau,
                        "trials_per_edge": tpe,
                        "replicate": replicate,
                        "method": method,
                        "error": payload,
                    }
                )
                continue
            by_cell_method.setdefault((scenario, tau, tpe, method), []).append(payload)
            for metric, value in replicate_metrics(payload).items():
                if value is not None:
                    raw_rows.append(
                        (scenario, tau, tpe, method, replicate, metric, value)
                    )

    with open(out / "metrics_raw.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scenario", "tau", "trials_per_edge", "method", "replicate", "metric", "value"]
        )
        for row in raw_rows:
            writer.writerow([_fmt(v) for v in row])

    agg_rows = []
    for (scenario, tau, tpe, method), scores in sorted(by_cell_method.items()):
        summary = aggregate(scores)
        labels = {
            "scenario": scenario,
            "tau": tau,
            "trials_per_edge": tpe,
            "method": method,
        }
        agg_rows.extend(tidy_rows(labels, summary))
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "tau", "trials_per_edge", "method", "metric", "value"])
        for row in agg_rows:
            writer.writerow([_fmt(v) for v in row])

    manifest = {
        "command": "sweep",
        "version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "master_seed": args.seed,
        "scenarios": scenarios,
        "taus": taus,
        "trials_per_edge": tpes,
        "methods": list(methods),
        "replicates": args.replicates,
        "periods": args.periods,
        "grid_points": args.grid_points,
        "grid_span": args.grid_span,
        "seeds": [
            {
                "scenario": job[0],
                "tau": job[1],
                "trials_per_edge": job[2],
                "replicate": job[3],
                "dataset_seed": job[4],
            }
            for job in jobs
        ],
        "failures": failures,
    }
    _write_json(out / "manifest.json", manifest)
    print(
        f"sweep finished: {len(jobs)} replicate jobs, {len(failures)} failures, "
        f"{elapsed:.1f}s wall time",
        file=sys.stderr,
    )
    print(f"wrote {out / 'metrics.csv'}")
    return 0


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------

_BOOT_STATE: dict = {}


def _bootstrap_init(dataset, report, seed) -> None:
    _BOOT_STATE["dataset"] = dataset
    _BOOT_STATE["report"] = report
    _BOOT_STATE["seed"] = seed


def _bootstrap_job(index: int):
    return bootstrap_draw(
        _BOOT_STATE["dataset"], _BOOT_STATE["report"], _BOOT_STATE["seed"], index
    )


def cmd_bootstrap(args) -> int:
    reference, schema = load_schema(args.schema)
    dataset = load_ipd(args.ipd, schema, reference)
    with open(args.report, encoding="utf-8") as fh:
        report = SelectionReport.from_dict(json.load(fh))
    if args.resamples < 2:
        raise DataError("--resamples must be >= 2")

    threads = resolve_threads(args.threads)
    draws = run_jobs(
        _bootstrap_job,
        list(range(args.resamples)),
        threads,
        initializer=_bootstrap_init,
        initargs=(dataset, report, args.seed),
    )
    result = intervals_from_draws(report, draws)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "intervals.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["name", "role", "estimate", "lo", "hi", "hr", "hr_lo", "hr_hi"]
        )
        for name in sorted(report.estimates):
            est = report.estimates[name]
            lo, hi = result.intervals[name]
            hr_lo, hr_hi = result.hr_intervals[name]
            writer.writerow(
                [
                    name,
                    report.roles[name],
                    _fmt(est),
                    _fmt(lo),
                    _fmt(hi),
                    _fmt(math.exp(est)),
                    _fmt(hr_lo),
                    _fmt(hr_hi),
                ]
            )
    print(
        f"bootstrap: {result.n_resamples} resamples, {result.n_failed} failed",
        file=sys.stderr,
    )
    print(f"wrote {out / 'intervals.csv'}")
    if result.n_failed * 2 > result.n_resamples:
        print("more than half of the resample refits failed", file=sys.stderr)
        return 3
    return 0


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------


def cmd_score(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        raw = json.load(fh)
        if "tau" not in raw:
            raw["tau"] = None
        report = SelectionReport.from_dict(raw)
    with open(args.truth, encoding="utf-8") as fh:
        truth = _truth_from_payload(json.load(fh))
    score = score_replicate(report, truth)
    payload = {
        "confusion": {
            "tp": score.confusion.tp,
            "tn": score.confusion.tn,
            "fp": score.confusion.fp,
            "fn": score.confusion.fn,
        },
        "metrics": replicate_metrics(score),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, payload)
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pennma",
        description=(
            "Penalized Poisson network meta-analysis of individual patient "
            "time-to-event data: simulate datasets, select and fit models, "
            "sweep scenarios, bootstrap intervals, score against truth."
        ),
    )
    parser.add_argument("--version", action="version", version=f"pennma {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("simulate", help="generate one synthetic dataset", formatter_class=fmt)
    p.add_argument("--scenario", required=True, help=f"one of {', '.join(SCENARIO_IDS)}")
    p.add_argument("--tau", type=float, default=0.1, help="between-trial sd of contrasts")
    p.add_argument("--trials-per-edge", type=int, default=3)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run model selection on a dataset", formatter_class=fmt)
    p.add_argument("--ipd", required=True, help="IPD CSV file")
    p.add_argument("--schema", required=True, help="schema JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--method", choices=METHODS, default="het")
    p.add_argument("--periods", "--K", dest="periods", type=int, default=6,
                   help="number of follow-up periods")
    p.add_argument("--boundaries", default="event-quantiles",
                   help="'event-quantiles' or comma-separated cut points")
    p.add_argument("--grid-points", type=int, default=30)
    p.add_argument("--grid-span", type=float, default=1000.0)
    p.add_argument("--heterogeneity", choices=("per-contrast", "common"),
                   default="per-contrast")
    collapse = p.add_mutually_exclusive_group()
    collapse.add_argument("--collapse", dest="collapse", action="store_true",
                          default=None,
                          help="force collapsing identical risk cells")
    collapse.add_argument("--no-collapse", dest="collapse", action="store_false",
                          help="fit the expanded table")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep", help="simulate+fit+score over a scenario grid",
                       formatter_class=fmt)
    p.add_argument("--scenarios", required=True, help="comma list, e.g. S1,S4")
    p.add_argument("--taus", required=True, help="comma list, e.g. 0.1,0.5")
    p.add_argument("--trials-per-edge", default="3", help="comma list of trial counts")
    p.add_argument("--replicates", type=int, required=True)
    p.add_argument("--methods", default="het,fx")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--periods", "--K", dest="periods", type=int, default=6)
    p.add_argument("--grid-points", type=int, default=30)
    p.add_argument("--grid-span", type=float, default=1000.0)
    p.add_argument("--threads", type=int, default=None,
                   help="parallel workers (default: PENNMA_THREADS or all cores)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bootstrap", help="percentile intervals for a fitted report",
                       formatter_class=fmt)
    p.add_argument("--ipd", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--report", required=True, help="report.json from `fit`")
    p.add_argument("--resamples", "-B", dest="resamples", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("score", help="score a report against simulation truth",
                       formatter_class=fmt)
    p.add_argument("--report", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (SelectionError, SolverError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
