"""Command-line interface: ``fit``, ``simulate``, ``distances``, ``design`` and ``report``.

Exit codes: 0 success, 2 input/validation error, 3 convergence failure,
4 data-integrity error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .comparators import Method, fit_complete_case, fit_gold, fit_naive
from .core import Dataset, DesignSpec, MisclassMode
from .em import EmConfig, fit_mle
from .errors import ConvergenceError, MisclassRegError, ValidationError
from .geo import (
    AccessTable,
    build_access_table,
    draw_query_design,
    merge_route_distances,
    retailers_from_rows,
    routes_from_rows,
    threshold_label,
    tracts_from_rows,
)
from .inference import parse_contrast, pr_summary, wald_ci
from .sim import (
    METHODS,
    RECORD_FIELDS,
    SimConfig,
    default_workers,
    run_records,
    summarize,
)
from .tables import read_csv, read_key_value, to_float, write_csv, write_manifest

log = logging.getLogger("misclassreg")

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_INTEGRITY = 0, 2, 3, 4

SUMMARY_KEYS = ["setting", "N", "PPV", "NPV", "q", "beta0", "beta1", "beta2", "reps", "seed", "init"]
SUMMARY_COUNTS = ["reps_used", "n_failed", "n_fallback", "n_nonconverged", "ascent_violations", "bias_kind"]
METRICS = ["bias", "ese", "ase", "cp", "re"]
_SHORT = {Method.GOLD: "gold", Method.NAIVE: "naive", Method.COMPLETE_CASE: "cc", Method.MLE: "mle"}


def _csv_list(s):
    return [t.strip() for t in s.split(",") if t.strip()] if s else []


# -- fit ------------------------------------------------------------------


def load_dataset(args):
    cols = [args.y, args.offset, args.xstar] + _csv_list(args.covariates) + ([args.x] if args.x else [])
    _, rows = read_csv(args.data, required=cols)
    covs = _csv_list(args.covariates)
    y = [to_float(r[args.y]) for r in rows]
    off = [to_float(r[args.offset]) for r in rows]
    xs = [to_float(r[args.xstar]) for r in rows]
    x = [to_float(r[args.x]) for r in rows] if args.x else [np.nan] * len(rows)
    z = np.array([[to_float(r[c]) for c in covs] for r in rows], dtype=float).reshape(len(rows), len(covs))
    for name, col in (("y", y), ("offset", off), ("xstar", xs)):
        if np.any(np.isnan(col)):
            raise ValidationError(f"column for {name} has empty values")
    ids = [r.get(args.id_column, i) for i, r in enumerate(rows)] if args.id_column else list(range(len(rows)))
    return Dataset(y=y, offset=off, xstar=xs, x=x, z=z, covariate_names=tuple(covs),
                   mode=MisclassMode.parse(args.mode), ids=np.array(ids, dtype=object))


def _interactions(spec, exposure):
    out = []
    for item in _csv_list(spec):
        parts = item.split(":")
        if len(parts) == 2 and exposure in parts:
            item = parts[1] if parts[0] == exposure else parts[0]
        out.append(item)
    return tuple(out)


def cmd_fit(args):
    data = load_dataset(args)
    exposure = args.exposure_name or args.x or args.xstar
    design = DesignSpec(data.covariate_names, _interactions(args.interactions, exposure), exposure)
    methods = list(METHODS) if args.method == "all" else [Method(args.method)]
    if args.method == "all" and not np.all(data.queried):
        methods.remove(Method.GOLD)
        log.info("gold standard skipped: X missing for %d rows", int((~data.queried).sum()))
    config = EmConfig(init_strategy=args.init, tolerance=args.tolerance, max_iterations=args.max_iter,
                      separation_policy=args.separation_policy)
    out = Path(args.out_dir)
    coef_rows, pr_rows, fit_rows = [], [], []
    status = EXIT_OK
    for m in methods:
        if m is Method.MLE:
            res = fit_mle(data, config, design)
            beta, cov = res.beta_hat, res.beta_covariance
            fit_rows.append(dict(method=m.value, n_used=data.n, loglik=res.loglik, iterations=res.iterations,
                                 converged=res.converged, fallback_used=res.fallback_used,
                                 hessian_ok=res.hessian_ok))
            if not res.converged:
                status = EXIT_CONVERGENCE
            eta_cov = None if res.covariance is None else res.covariance[design.n_params:, design.n_params:]
            for j, name in enumerate(res.eta_names):
                se = float(np.sqrt(eta_cov[j, j])) if eta_cov is not None and np.isfinite(eta_cov[j, j]) else np.nan
                lo, hi = wald_ci(res.eta_hat[j], se) if se > 0 else (np.nan, np.nan)
                coef_rows.append(dict(method=m.value, model="misclassification", term=name,
                                      estimate=res.eta_hat[j], se=se, ci_low=lo, ci_high=hi))
        else:
            fitter = {Method.GOLD: fit_gold, Method.NAIVE: fit_naive, Method.COMPLETE_CASE: fit_complete_case}[m]
            res = fitter(data, design)
            beta, cov = res.beta_hat, res.covariance
            fit_rows.append(dict(method=m.value, n_used=res.n_used, loglik=res.loglik, iterations=res.iterations,
                                 converged=True, fallback_used=False, hessian_ok=None))
        se = np.sqrt(np.clip(np.diag(cov), 0, None))
        for j, term in enumerate(design.terms):
            lo, hi = wald_ci(beta[j], se[j]) if se[j] > 0 else (np.nan, np.nan)
            coef_rows.append(dict(method=m.value, model="outcome", term=term, estimate=beta[j], se=se[j],
                                  ci_low=lo, ci_high=hi))
        for expr in args.pr_contrast or []:
            c = parse_contrast(expr, design.terms)
            s = pr_summary(expr, beta, cov, c)
            pr_rows.append(dict(method=m.value, contrast=expr, pr=s.estimate, ci_low=s.ci_low,
                                ci_high=s.ci_high, log_pr=s.log_estimate, se=s.se))

    files = [
        write_csv(out / "coefficients.csv", ["method", "model", "term", "estimate", "se", "ci_low", "ci_high"],
                  coef_rows),
        write_csv(out / "fit_summary.csv",
                  ["method", "n_used", "loglik", "iterations", "converged", "fallback_used", "hessian_ok"], fit_rows),
    ]
    if pr_rows:
        files.append(write_csv(out / "prevalence_ratios.csv",
                               ["method", "contrast", "pr", "ci_low", "ci_high", "log_pr", "se"], pr_rows))
    write_manifest(out / "manifest.json", "fit", _resolved(args), inputs=[args.data], outputs=files)
    for r in fit_rows:
        log.info("%s: loglik=%s iterations=%s converged=%s fallback=%s", r["method"], r["loglik"],
                 r["iterations"], r["converged"], r["fallback_used"])
    return status


# -- simulate -------------------------------------------------------------


def summary_row(summary):
    c = summary.config
    row = dict(setting=c.misclass_mode.value, N=c.n_obs, PPV=c.ppv,
               NPV=c.npv if c.misclass_mode is MisclassMode.TWO_SIDED else None, q=c.q,
               beta0=c.beta[0], beta1=c.beta[1], beta2=c.beta[2], reps=c.n_reps, seed=c.seed,
               init=c.init_strategy.value, reps_used=summary.n_reps_used, n_failed=summary.n_failed,
               n_fallback=summary.n_fallback, n_nonconverged=summary.n_nonconverged,
               ascent_violations=summary.ascent_violations, bias_kind=summary.bias_kind)
    for m in METHODS:
        ms = summary.methods[m]
        for k in METRICS:
            row[f"{_SHORT[m]}_{k}"] = getattr(ms, k)
    return row


SUMMARY_HEADER = SUMMARY_KEYS + SUMMARY_COUNTS + [f"{_SHORT[m]}_{k}" for m in METHODS for k in METRICS]


def cmd_simulate(args):
    config = SimConfig(
        n_obs=args.n, ppv=args.ppv, npv=args.npv, q=args.q, beta=(args.beta0, args.beta1, args.beta2),
        misclass_mode=args.setting, n_reps=args.reps, seed=args.seed, init_strategy=args.init,
    )
    workers = args.workers if args.workers else default_workers()
    out = Path(args.out_dir)
    records = run_records(config, workers)
    summary = summarize(config, records)
    rep_file = write_csv(out / "replicates.csv", RECORD_FIELDS, [vars(r) for r in records])
    sum_file = write_csv(out / "summary.csv", SUMMARY_HEADER, [summary_row(summary)])
    write_manifest(out / "manifest.json", "simulate", {**_resolved(args), "sim_config": config.as_dict(),
                                                       "kernel_backend": kernels.BACKEND},
                   seed=config.seed, outputs=[rep_file, sum_file])
    m = summary.methods
    log.info("reps used %d/%d, fallbacks %d", summary.n_reps_used, config.n_reps, summary.n_fallback)
    for meth in METHODS:
        log.info("%-13s bias=%.4f ese=%.4f ase=%.4f cp=%.3f re=%.3f", meth.value, m[meth].bias, m[meth].ese,
                 m[meth].ase, m[meth].cp, m[meth].re)
    if summary.n_nonconverged:
        return EXIT_CONVERGENCE
    return EXIT_OK


# -- distances / design ---------------------------------------------------


def access_header(thresholds):
    cols = ["id", "metro", "cases", "population", "nearest_retailer", "d_haversine", "d_route"]
    for t in thresholds:
        cols += [f"xstar_{threshold_label(t)}", f"x_{threshold_label(t)}"]
    return cols


def write_access_table(path, table: AccessTable):
    rows = []
    xs = {t: table.xstar(t) for t in table.thresholds}
    xx = {t: table.x(t) for t in table.thresholds}
    for i, tid in enumerate(table.ids):
        row = dict(id=tid, metro=table.metro[i], cases=table.y_cases[i], population=table.population[i],
                   nearest_retailer=table.nearest_id[i] if table.nearest_id else None,
                   d_haversine=table.d_haversine[i], d_route=table.d_route[i])
        for t in table.thresholds:
            row[f"xstar_{threshold_label(t)}"] = xs[t][i]
            row[f"x_{threshold_label(t)}"] = xx[t][i]
        rows.append(row)
    return write_csv(path, access_header(table.thresholds), rows)


def read_access_table(path):
    fields_, rows = read_csv(path, required=["id", "metro", "d_haversine"])
    thresholds = sorted(float(f.split("_", 1)[1]) for f in fields_ if f.startswith("xstar_"))
    ids = [r["id"] for r in rows]
    try:
        ids = [int(v) for v in ids]
    except ValueError:
        pass
    return AccessTable(
        ids=ids,
        metro=np.array([int(float(r["metro"] or 0)) for r in rows]),
        y_cases=np.array([to_float(r.get("cases", "")) for r in rows]),
        population=np.array([to_float(r.get("population", "")) for r in rows]),
        d_haversine=np.array([to_float(r["d_haversine"]) for r in rows]),
        thresholds=tuple(thresholds) or (1.0,),
        d_route=np.array([to_float(r.get("d_route", "")) for r in rows]),
        nearest_id=[r.get("nearest_retailer", "") for r in rows],
    )


def cmd_distances(args):
    thresholds = [float(t) for t in _csv_list(args.thresholds)]
    if not thresholds:
        raise ValidationError("at least one threshold is required")
    _, trows = read_csv(args.tracts, required=["id", "lat", "lon"])
    _, rrows = read_csv(args.retailers, required=["id", "lat", "lon"])
    table = build_access_table(tracts_from_rows(trows), retailers_from_rows(rrows), thresholds)
    inputs = [args.tracts, args.retailers]
    if args.routes:
        _, prow = read_csv(args.routes, required=["id", "route_miles"])
        table = merge_route_distances(table, routes_from_rows(prow))
        inputs.append(args.routes)
        for t in table.thresholds:
            tp, pos = table.ppv(t)
            pct = 100.0 * tp / pos if pos else float("nan")
            log.info("threshold %s mi: PPV = %d/%d = %.0f%%", threshold_label(t), tp, pos, pct)
    out = write_access_table(args.out, table)
    write_manifest(Path(str(args.out) + ".manifest.json"), "distances", _resolved(args), inputs=inputs,
                   outputs=[out])
    return EXIT_OK


def cmd_design(args):
    import numpy.random as npr

    table = read_access_table(args.access)
    rng = npr.default_rng(args.seed)
    ids, metro = draw_query_design(table, args.n, rng, args.threshold)
    out = write_csv(args.out, ["id", "metro"], zip(ids, metro))
    log.info("selected %d tracts: %d metropolitan, %d non-metropolitan", len(ids), sum(metro),
             len(metro) - sum(metro))
    write_manifest(Path(str(args.out) + ".manifest.json"), "design", _resolved(args), seed=args.seed,
                   inputs=[args.access], outputs=[out])
    return EXIT_OK


# -- report ---------------------------------------------------------------

REPORT_REQUIRED = ["setting", "N", "PPV"] + [f"{_SHORT[m]}_bias" for m in METHODS]


def cmd_report(args):
    rows = []
    header = None
    for path in args.summaries:
        fields_, rs = read_csv(path)
        missing = [c for c in REPORT_REQUIRED if c not in fields_]
        if missing:
            raise ValidationError(f"{path} is not a simulation summary (missing {missing})")
        header = list(fields_) if header is None else header + [f for f in fields_ if f not in header]
        rows.extend(rs)
    rows.sort(key=lambda r: (r["setting"], float(r["N"]), float(r["PPV"]), float(r.get("q") or 0)))
    wide = ["setting", "N", "PPV", "q",
            "gold_bias", "gold_ese", "naive_bias", "naive_ese", "cc_bias", "cc_ese", "cc_re",
            "mle_bias", "mle_ese", "mle_ase", "mle_cp", "mle_re", "n_fallback"]
    table = [[r.get(c, "") for c in wide] for r in rows]
    out = write_csv(args.out, wide, table)
    text = format_table(wide, table)
    Path(str(args.out) + ".txt").write_text(text)
    print(text, end="")
    write_manifest(Path(str(args.out) + ".manifest.json"), "report", _resolved(args), inputs=args.summaries,
                   outputs=[out])
    return EXIT_OK


def format_table(header, rows):
    def cell(c, v):
        if v in ("", None):
            return ""
        if c in ("setting", "N", "n_fallback"):
            return str(v)
        try:
            return f"{float(v):.3f}"
        except ValueError:
            return str(v)

    cells = [[cell(c, v) for c, v in zip(header, r)] for r in rows]
    widths = [max([len(h)] + [len(r[j]) for r in cells]) for j, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells]
    return "\n".join(lines) + "\n"


# -- plumbing -------------------------------------------------------------


def _resolved(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config", "verbose")}


def build_parser():
    p = argparse.ArgumentParser(prog="misclassreg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value file; command-line flags take precedence")
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    f = sub.add_parser("fit", help="fit MLE and comparator analyses to a data file")
    common(f)
    f.add_argument("--data", required=True)
    f.add_argument("--y", required=True)
    f.add_argument("--offset", required=True, help="population column (positive, not logged)")
    f.add_argument("--xstar", required=True)
    f.add_argument("--x", help="true exposure column; empty cells mean unqueried")
    f.add_argument("--covariates", default="")
    f.add_argument("--interactions", default="", help="comma list, e.g. 'metro' or 'access:metro'")
    f.add_argument("--exposure-name", help="label of the exposure term (default: the --x column name)")
    f.add_argument("--id-column")
    f.add_argument("--mode", default="one-sided", choices=["one-sided", "two-sided"])
    f.add_argument("--method", default="all", choices=["mle", "naive", "complete-case", "gold", "all"])
    f.add_argument("--pr-contrast", action="append", help="e.g. 'access+access:metro'; repeatable")
    f.add_argument("--init", default="complete-case", choices=["complete-case", "zeros"])
    f.add_argument("--tolerance", type=float, default=1e-3)
    f.add_argument("--max-iter", type=int, default=1000)
    f.add_argument("--separation-policy", default="fallback-naive", choices=["fallback-naive", "error"])
    f.add_argument("--out-dir", default="fit_out")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="run a Monte-Carlo study for one setting")
    common(s)
    s.add_argument("--setting", default="one-sided", choices=["one-sided", "two-sided"])
    s.add_argument("--n", type=int, default=2200)
    s.add_argument("--ppv", type=float, default=0.6)
    s.add_argument("--npv", type=float, default=0.75)
    s.add_argument("--q", type=float, default=0.1)
    s.add_argument("--beta0", type=float, default=-2.28)
    s.add_argument("--beta1", type=float, default=0.18)
    s.add_argument("--beta2", type=float, default=0.14)
    s.add_argument("--reps", type=int, default=1000)
    s.add_argument("--seed", type=int, default=2024)
    s.add_argument("--init", default="complete-case", choices=["complete-case", "zeros"])
    s.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: $MISCLASSREG_WORKERS or CPU count)")
    s.add_argument("--out-dir", default="sim_out")
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("distances", help="haversine access table, optionally merged with route distances")
    common(d)
    d.add_argument("--tracts", required=True)
    d.add_argument("--retailers", required=True)
    d.add_argument("--routes")
    d.add_argument("--thresholds", default="0.5,1.0")
    d.add_argument("--out", default="access.csv")
    d.set_defaults(func=cmd_distances)

    g = sub.add_parser("design", help="draw a metro-stratified validation sample")
    common(g)
    g.add_argument("--access", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--threshold", type=float)
    g.add_argument("--out", default="queried.csv")
    g.set_defaults(func=cmd_design)

    r = sub.add_parser("report", help="merge simulation summaries into one table")
    common(r)
    r.add_argument("summaries", nargs="+")
    r.add_argument("--out", default="report.csv")
    r.set_defaults(func=cmd_report)
    return p


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sp = parser._subparsers._group_actions[0].choices[args.command]
        conf = read_key_value(args.config)
        known = {a.dest for a in sp._actions}
        unknown = [k for k in conf if k not in known]
        if unknown:
            raise ValidationError(f"unknown keys in {args.config}: {unknown}")
        typed = {}
        for a in sp._actions:
            if a.dest in conf:
                typed[a.dest] = a.type(conf[a.dest]) if a.type else conf[a.dest]
        sp.set_defaults(**typed)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    try:
        args = parse_args(argv)
    except MisclassRegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConvergenceError as exc:
        log.error("%s", exc)
        return EXIT_CONVERGENCE
    except MisclassRegError as exc:
        log.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
