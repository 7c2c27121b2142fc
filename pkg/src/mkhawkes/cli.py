"""Command-line front end wiring ingestion, simulation, estimation and analytics.

Every stochastic subcommand requires an explicit --seed and is bit-for-bit
reproducible.  Exit codes: 0 on success, 2 on usage errors, 1 on computation
errors (with a machine-readable JSON object on stderr).
"""

from __future__ import annotations

import argparse
import csv
import glob as globmod
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import analysis, diagnostics, estimate, ingest, moments, simulate
from .model import ConstraintProfile, ModelParams, ParamMap


@dataclass
class RunConfig:
    """Validated run settings shared by the subcommand handlers."""

    subcommand: str
    args: argparse.Namespace
    seed: int | None = None
    jobs: int = 1


def _parse_session(text):
    try:
        start, end = text.split(":")
        return int(start), int(end)
    except ValueError:
        raise argparse.ArgumentTypeError("session must be start_ns:end_ns")


def _parse_axis(text):
    try:
        lo, hi, n = text.split(":")
        return np.geomspace(float(lo), float(hi), int(n))
    except ValueError:
        raise argparse.ArgumentTypeError("grid axis must be lo:hi:n")


def _parse_floats(text):
    return [float(v) for v in text.split(",") if v]


def _parse_ints(text):
    return [int(v) for v in text.split(",") if v]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mkhawkes",
        description="Multi-kernel Hawkes toolkit for up/down mid-price event streams",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("ingest", help="convert a quote CSV to an up/down event CSV")
    p.add_argument("--quotes", required=True, help="input CSV with header timestamp_ns,bid,ask")
    p.add_argument("--out", required=True, help="output event CSV")
    p.add_argument("--session", type=_parse_session, default=None,
                   help="observation window start_ns:end_ns (end exclusive)")

    p = sub.add_parser("simulate", help="simulate event streams by thinning")
    p.add_argument("--params", required=True, help="model parameter JSON")
    p.add_argument("--horizon", type=float, required=True, help="path length in seconds")
    p.add_argument("--paths", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--init", choices=[simulate.INIT_STATIONARY_MEAN, simulate.INIT_ZERO],
                   default=simulate.INIT_STATIONARY_MEAN)
    p.add_argument("--burn-in", type=float, default=0.0)
    p.add_argument("--max-events", type=int, default=1_000_000)
    p.add_argument("--out", required=True,
                   help="events CSV (single path) or ensemble summary JSON, by extension")

    p = sub.add_parser("moments", help="closed-form moment report")
    p.add_argument("--params", required=True)
    p.add_argument("--t", type=float, required=True, help="horizon in seconds")
    p.add_argument("--out", default="-", help="report JSON path, '-' for stdout")
    p.add_argument("--grid-csv", default=None, help="optional CSV of count moments over horizons")
    p.add_argument("--t-grid", default=None, help="horizon grid lo:hi:n for --grid-csv")

    p = sub.add_parser("estimate", help="maximum-likelihood fit of an event stream")
    p.add_argument("--events", required=True)
    p.add_argument("--kernels", type=int, required=True)
    p.add_argument("--profile", default="sym2",
                   choices=[c.value for c in ConstraintProfile])
    p.add_argument("--method", default="profile", choices=["profile", "direct"])
    p.add_argument("--out", required=True, help="fit JSON path")
    p.add_argument("--m", type=int, default=None, help="number of event types")
    p.add_argument("--start-ns", type=int, default=None)
    p.add_argument("--horizon-ns", type=int, default=None)
    p.add_argument("--no-se", action="store_true", help="skip standard errors")

    p = sub.add_parser("scan", help="conditional-maximum surface over a decay grid")
    p.add_argument("--events", required=True)
    p.add_argument("--kernels", type=int, required=True)
    p.add_argument("--profile", default="scalar", choices=[c.value for c in ConstraintProfile])
    p.add_argument("--beta-grid", default=None,
                   help="semicolon-separated axes lo:hi:n (defaults from the data)")
    p.add_argument("--out", required=True, help="surface CSV")
    p.add_argument("--m", type=int, default=None)

    p = sub.add_parser("diagnose", help="residuals, Q-Q table and KS statistic of a fit")
    p.add_argument("--events", required=True)
    p.add_argument("--fit", required=True, help="fit JSON from the estimate subcommand")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--m", type=int, default=None)

    p = sub.add_parser("respond", help="per-kernel expected response times of a fit")
    p.add_argument("--fit", required=True)
    p.add_argument("--out", required=True, help="responsiveness CSV")
    p.add_argument("--normalized", action="store_true",
                   help="condition the expected time on a finite arrival")

    p = sub.add_parser("attribute", help="event cause attribution shares of a fit")
    p.add_argument("--fit", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True, help="attribution CSV (percent shares)")
    p.add_argument("--m", type=int, default=None)

    p = sub.add_parser("experiment", help="estimability experiments")
    exp = p.add_subparsers(dest="experiment", required=True)
    e = exp.add_parser("success-rate", help="unique-local-maximum rate by branching and size")
    e.add_argument("--branching", type=_parse_floats, default=[0.1, 0.5, 0.9])
    e.add_argument("--sizes", type=_parse_ints, default=[150, 500])
    e.add_argument("--reps", type=int, default=20)
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--out", required=True, help="rate CSV")

    p = sub.add_parser("batch", help="estimate every matching event file and summarize")
    p.add_argument("--events-glob", required=True)
    p.add_argument("--kernels", type=int, required=True)
    p.add_argument("--profile", default="sym2", choices=[c.value for c in ConstraintProfile])
    p.add_argument("--method", default="profile", choices=["profile", "direct"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1, help="parallel workers over files")

    return parser


# ---------------------------------------------------------------------------
# handlers
# ---------------------------------------------------------------------------

def _load_stream(args):
    return ingest.read_events_csv(
        args.events,
        m=args.m,
        start_ns=getattr(args, "start_ns", None),
        horizon_ns=getattr(args, "horizon_ns", None),
    )


def _load_fit_params(path):
    with open(path) as fh:
        doc = json.load(fh)
    return ModelParams.from_dict(doc["params"] if "params" in doc else doc)


def _write_json(doc, path):
    if path == "-":
        json.dump(doc, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)


def cmd_ingest(args):
    stream, report = ingest.ingest_quotes_file(args.quotes, session_window=args.session)
    ingest.write_events_csv(stream, args.out)
    _write_json(report.as_dict(), "-")
    return 0


def cmd_simulate(args):
    params = ModelParams.load(args.params)
    config = simulate.SimConfig(
        horizon=args.horizon,
        n_paths=args.paths,
        seed=args.seed,
        init=args.init,
        burn_in=args.burn_in,
        max_events=args.max_events,
    )
    if args.out.endswith(".json"):
        summary = simulate.simulate_ensemble(params, config)
        _write_json(summary.as_dict(), args.out)
    else:
        if args.paths != 1:
            print("error: CSV output requires --paths 1", file=sys.stderr)
            return 2
        stream = simulate.simulate_path(params, config, np.random.SeedSequence(args.seed))
        ingest.write_events_csv(stream, args.out)
    return 0


def cmd_moments(args):
    params = ModelParams.load(args.params)
    report = moments.moment_report(params, args.t)
    _write_json(report.as_dict(), args.out)
    if args.grid_csv:
        if not args.t_grid:
            print("error: --grid-csv requires --t-grid", file=sys.stderr)
            return 2
        lo, hi, n = args.t_grid.split(":")
        with open(args.grid_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "E_N1", "E_NN_11", "E_NN_12", "E_NN_22", "var_diff"])
            for t in np.geomspace(float(lo), float(hi), int(n)):
                r = moments.moment_report(params, float(t))
                writer.writerow([
                    t, r.E_lambda[0] * t, r.E_NN[0, 0], r.E_NN[0, 1],
                    r.E_NN[-1, -1], r.var_diff,
                ])
    return 0


def cmd_estimate(args):
    stream = _load_stream(args)
    fit = _run_fit(stream, args.kernels, args.profile, args.method, not args.no_se)
    _write_json(fit.as_dict(), args.out)
    return 0


def _run_fit(stream, kernels, profile, method, compute_se=True):
    if method == "profile":
        return estimate.fit_profile(stream, kernels, profile, compute_se=compute_se)
    return estimate.fit_direct(stream, kernels, profile, compute_se=compute_se)


def cmd_scan(args):
    stream = _load_stream(args)
    grid = None
    if args.beta_grid:
        grid = [_parse_axis(part) for part in args.beta_grid.split(";")]
    result = diagnostics.scan_conditional_max(stream, args.kernels, beta_grid=grid,
                                              profile=args.profile)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        if len(result.axes) == 1:
            writer.writerow(["beta1", "Lstar"])
            for b, v in zip(result.axes[0], result.values.reshape(-1)):
                writer.writerow([b, v])
        else:
            writer.writerow(["beta1", "beta2", "Lstar"])
            for i, b1 in enumerate(result.axes[0]):
                for j, b2 in enumerate(result.axes[1]):
                    writer.writerow([b1, b2, result.values[i, j]])
    _write_json(
        {
            "n_local_max": result.n_local_max,
            "best_beta": result.best_beta.tolist(),
            "best_Lstar": result.best_value,
            "n_failures": len(result.failures),
        },
        "-",
    )
    return 0


def cmd_diagnose(args):
    stream = _load_stream(args)
    params = _load_fit_params(args.fit)
    res = diagnostics.residuals(params, stream)
    with open(f"{args.out_prefix}_residuals.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["type", "increment"])
        for i, vals in enumerate(res.per_type, start=1):
            for v in vals:
                writer.writerow([i, v])
    pooled = res.pooled()
    qq = diagnostics.qq_exponential(pooled)
    with open(f"{args.out_prefix}_qq.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["empirical", "exponential"])
        for emp, theo in qq:
            writer.writerow([emp, theo])
    stat, pvalue = diagnostics.ks_exponential(pooled)
    summary = {
        "ks_statistic": stat,
        "ks_pvalue": pvalue,
        "n_increments": int(pooled.size),
        "total_compensator": res.total_compensator.tolist(),
        "counts": stream.counts().tolist(),
    }
    _write_json(summary, f"{args.out_prefix}_summary.json")
    _write_json(summary, "-")
    return 0


def cmd_respond(args):
    params = _load_fit_params(args.fit)
    report = analysis.responsiveness_report(params, normalized=args.normalized)
    with open(args.out, "w", newline="") as fh:
        rows = list(report.rows())
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return 0


def cmd_attribute(args):
    params = _load_fit_params(args.fit)
    stream = _load_stream(args)
    report = analysis.attribute_causes(params, stream)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["scope", "base_pct"] + [f"kernel_{k + 1}_pct" for k in range(params.K)]
        writer.writerow(header + ["n_events"])
        for i in range(params.m):
            writer.writerow(
                [f"type_{i + 1}", 100.0 * report.share_base[i]]
                + [100.0 * report.share_kernel[k, i] for k in range(params.K)]
                + [int(report.n_events[i])]
            )
        writer.writerow(
            ["pooled", 100.0 * report.pooled_base]
            + [100.0 * v for v in report.pooled_kernel]
            + [int(report.n_events.sum())]
        )
    return 0


def cmd_experiment(args):
    rows = diagnostics.success_rate_experiment(
        args.branching, args.sizes, args.reps, args.seed
    )
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["branching", "n", "successes", "reps", "rate"])
        for row in rows:
            writer.writerow([row.branching, row.n_events, row.successes, row.reps, row.rate])
    return 0


def _batch_one(path, kernels, profile, method, m, out_dir):
    stream = ingest.read_events_csv(path, m=m)
    fit = _run_fit(stream, kernels, profile, method)
    stem = path.replace("\\", "/").rsplit("/", 1)[-1].rsplit(".", 1)[0]
    out_path = f"{out_dir}/{stem}_fit.json"
    with open(out_path, "w") as fh:
        json.dump(fit.as_dict(), fh, indent=2)
    pm = ParamMap(fit.params_hat.constraint_profile, fit.params_hat.m, fit.params_hat.K)
    return {
        "file": path,
        "fit": out_path,
        "names": pm.param_names(),
        "values": pm.pack(fit.params_hat).tolist(),
        "loglik": fit.loglik,
        "aic": fit.aic,
        "converged": fit.converged,
    }


def cmd_batch(args):
    files = sorted(globmod.glob(args.events_glob))
    if not files:
        print(f"error: no files match {args.events_glob!r}", file=sys.stderr)
        return 2
    os.makedirs(args.out_dir, exist_ok=True)
    records, failures = [], []

    if args.jobs != 1:
        from joblib import Parallel, delayed

        outcomes = Parallel(n_jobs=args.jobs)(
            delayed(_safe_batch_one)(
                path, args.kernels, args.profile, args.method, args.m, args.out_dir
            )
            for path in files
        )
        for path, record, error in outcomes:
            if error is None:
                records.append(record)
            else:
                failures.append({"file": path, "error": error})
    else:
        for path in files:
            path, record, error = _safe_batch_one(
                path, args.kernels, args.profile, args.method, args.m, args.out_dir
            )
            if error is None:
                records.append(record)
            else:
                failures.append({"file": path, "error": error})

    summary = {"n_files": len(files), "n_fits": len(records), "failures": failures}
    if records:
        names = records[0]["names"]
        table = np.array([r["values"] for r in records])
        with open(f"{args.out_dir}/summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["param", "mean", "median", "sd"])
            for c, name in enumerate(names):
                col = table[:, c]
                writer.writerow([name, col.mean(), np.median(col),
                                 col.std(ddof=1) if col.size > 1 else 0.0])
        summary["summary_csv"] = f"{args.out_dir}/summary.csv"
    with open(f"{args.out_dir}/summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    _write_json(summary, "-")
    return 0


def _safe_batch_one(path, kernels, profile, method, m, out_dir):
    try:
        record = _batch_one(path, kernels, profile, method, m, out_dir)
        return path, record, None
    except Exception as exc:  # noqa: BLE001 - per-file failures must not stop the batch
        return path, None, f"{type(exc).__name__}: {exc}"


_HANDLERS = {
    "ingest": cmd_ingest,
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "estimate": cmd_estimate,
    "scan": cmd_scan,
    "diagnose": cmd_diagnose,
    "respond": cmd_respond,
    "attribute": cmd_attribute,
    "experiment": cmd_experiment,
    "batch": cmd_batch,
}


def run(argv):
    """Parse argv and dispatch; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    config = RunConfig(
        subcommand=args.subcommand,
        args=args,
        seed=getattr(args, "seed", None),
        jobs=getattr(args, "jobs", 1),
    )
    handler = _HANDLERS[config.subcommand]
    try:
        return int(handler(args))
    except Exception as exc:  # noqa: BLE001 - uniform machine-readable error contract
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
