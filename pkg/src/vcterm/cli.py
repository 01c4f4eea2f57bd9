"""Command line interface.

Subcommands: fit, slice, cv, simulate, study, kernel-moments, heatmap.
Exit codes: 0 success, 2 usage, 3 data errors, 4 numerical failures.
Errors are written to stderr as a single JSON line.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from . import io as iomod
from . import svg as svgmod
from .bandwidth import select_bandwidth
from .data import Dataset
from .errors import DataError, NumericalError, VctermError
from .experiments import run_study
from .fit import (STATUS_OK, confidence_interval, local_fit, slice_fit,
                  standard_errors)
from .kernel import DEFAULT_KERNEL, kernel_moments
from .simulate import gen_dataset


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=None,
                        help="override the relevant random seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads; results do not depend on this")
    parser.add_argument("--transform", default="none", choices=("none", "log1000"),
                        help="response transform applied on load")
    parser.add_argument("--format", default="csv", choices=("csv", "json"),
                        dest="fmt", help="stdout format for structured output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vcterm",
        description="Kernel estimation of time-varying coefficients for "
                    "longitudinal data with a terminal event.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate coefficients at one target point")
    p.add_argument("--data", required=True)
    p.add_argument("--t0", type=float, required=True)
    p.add_argument("--s0", type=float, required=True)
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("slice", help="estimates along lines of fixed total time")
    p.add_argument("--data", required=True)
    p.add_argument("--T", type=float, action="append", required=True,
                   help="total time of a slice; repeatable")
    p.add_argument("--t-step", type=float, default=1.0)
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--svg", action="store_true",
                   help="also write one SVG per slice (needs --out-dir)")
    _add_common(p)
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("cv", help="cross-validated bandwidth selection")
    p.add_argument("--data", required=True)
    p.add_argument("--h-grid", default=None,
                   help="comma-separated candidates; default 0.5,1,2,4")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--gamma", type=float, default=1.0 / 20.0)
    _add_common(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", help="generate a synthetic cohort CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", default=None,
                   help="also write generator-side event/censoring times")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("study", help="replication study with coverage accounting")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-resume", action="store_true",
                   help="ignore partial records from an interrupted run")
    _add_common(p)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("kernel-moments", help="quadrature diagnostics of the kernel")
    p.add_argument("--quadrature-n", type=int, default=256)
    _add_common(p)
    p.set_defaults(func=cmd_kernel_moments)

    p = sub.add_parser("heatmap", help="render a coverage table to SVG")
    p.add_argument("--coverage", required=True,
                   help="coverage CSV written by the study command")
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="")
    _add_common(p)
    p.set_defaults(func=cmd_heatmap)
    return parser


def _load(args) -> Dataset:
    transform = iomod.parse_transform(args.transform)
    dataset, report = iomod.load_csv(args.data, transform=transform)
    if report.rows_rejected or report.subjects_dropped:
        for diag in report.diagnostics[:20]:
            print(f"warning: {diag}", file=sys.stderr)
        extra = len(report.diagnostics) - 20
        if extra > 0:
            print(f"warning: ... and {extra} more", file=sys.stderr)
    print(
        f"loaded {report.subjects_kept} subjects ({report.rows_kept} rows kept, "
        f"{report.rows_rejected} rejected, {report.rows_from_dropped_subjects} "
        f"from dropped subjects)",
        file=sys.stderr,
    )
    return dataset


def _need_complete_cases(dataset: Dataset):
    if dataset.n_complete_case == 0:
        raise DataError("no complete-case subjects: every follow-up is censored")


def _emit_rows(fmt: str, header, rows, meta: dict, stream=None):
    stream = stream or sys.stdout
    if fmt == "json":
        payload = {"meta": meta, "rows": [dict(zip(header, row)) for row in rows]}
        json.dump(payload, stream, sort_keys=True, default=_json_default)
        stream.write("\n")
        return
    for key in sorted(meta):
        stream.write(f"# {key}={meta[key]}\n")
    stream.write(",".join(header) + "\n")
    for row in rows:
        stream.write(",".join(_cell(v) for v in row) + "\n")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return float(v)
    raise TypeError(f"not serializable: {type(v)}")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def cmd_fit(args) -> int:
    dataset = _load(args)
    _need_complete_cases(dataset)
    fp = local_fit(dataset, args.t0, args.s0, args.h)
    if fp.status != STATUS_OK:
        raise NumericalError(
            f"fit at ({args.t0:g}, {args.s0:g}) failed: {fp.status} (n_eff={fp.n_eff})"
        )
    from .fit import sandwich_variance

    fp.v_hat = sandwich_variance(dataset, args.t0, args.s0, args.h)
    n_cc = dataset.n_complete_case
    ci = confidence_interval(fp, n_cc, args.alpha)
    se = standard_errors(fp, n_cc)
    rows = [
        (k + 1, float(fp.beta_hat[k]), float(se[k]), float(ci[k, 0]), float(ci[k, 1]))
        for k in range(dataset.p)
    ]
    meta = {"t0": _cell(args.t0), "s0": _cell(args.s0), "h": _cell(args.h),
            "alpha": _cell(args.alpha), "n_complete_case": n_cc,
            "n_eff": fp.n_eff, "status": fp.status}
    _emit_rows(args.fmt, ("coef", "estimate", "se", "lower", "upper"), rows, meta)
    return 0


_SLICE_HEADER = ("T", "t", "s", "coef", "estimate", "se", "lower", "upper",
                 "n_eff", "status")


def cmd_slice(args) -> int:
    dataset = _load(args)
    _need_complete_cases(dataset)
    if args.svg and not args.out_dir:
        raise DataError("--svg needs --out-dir")
    n_cc = dataset.n_complete_case
    all_rows = []
    per_slice = {}
    for T in args.T:
        count = int(math.floor((T - 1e-9) / args.t_step))
        if count < 1:
            raise DataError(f"slice T={T:g} leaves no interior points at step {args.t_step:g}")
        ts = [i * args.t_step for i in range(1, count + 1)]
        fits = slice_fit(dataset, T, ts, args.h, with_variance=True,
                         threads=max(1, args.threads))
        rows = []
        for fp in fits:
            if fp.status == STATUS_OK:
                ci = confidence_interval(fp, n_cc, args.alpha)
                se = standard_errors(fp, n_cc)
                for k in range(dataset.p):
                    rows.append((T, fp.t0, fp.s0, k + 1, float(fp.beta_hat[k]),
                                 float(se[k]), float(ci[k, 0]), float(ci[k, 1]),
                                 fp.n_eff, fp.status))
            else:
                for k in range(dataset.p):
                    rows.append((T, fp.t0, fp.s0, k + 1, None, None, None, None,
                                 fp.n_eff, fp.status))
        per_slice[T] = rows
        all_rows.extend(rows)

    meta = {"h": _cell(args.h), "alpha": _cell(args.alpha), "n_complete_case": n_cc}
    if args.out_dir is None:
        _emit_rows(args.fmt, _SLICE_HEADER, all_rows, meta)
        return 0
    os.makedirs(args.out_dir, exist_ok=True)
    for T, rows in per_slice.items():
        name = ("slice_T%g" % T).replace(".", "_")
        path = os.path.join(args.out_dir, name + ".csv")
        with open(path, "w", encoding="utf-8") as fh:
            _emit_rows("csv", _SLICE_HEADER, rows, {**meta, "T": _cell(T)}, stream=fh)
        if args.svg:
            _slice_svg(os.path.join(args.out_dir, name + ".svg"), T, rows, dataset.p)
    print(f"wrote {len(per_slice)} slice tables to {args.out_dir}", file=sys.stderr)
    return 0


def _slice_svg(path: str, T: float, rows, p: int):
    ts = sorted({r[1] for r in rows})
    curves = []
    bands = []
    for k in range(1, p + 1):
        by_t = {r[1]: r for r in rows if r[3] == k}
        est = [by_t[t][4] if by_t[t][4] is not None else math.nan for t in ts]
        lo = [by_t[t][6] if by_t[t][6] is not None else math.nan for t in ts]
        hi = [by_t[t][7] if by_t[t][7] is not None else math.nan for t in ts]
        color = svgmod.PALETTE[(k - 1) % len(svgmod.PALETTE)]
        curves.append((f"b{k}", est, color, None))
        bands.append((lo, hi, color))
    svgmod.line_chart(path, ts, curves, bands, title=f"T = {T:g}",
                      x_label="t", y_label="estimate")


def cmd_cv(args) -> int:
    dataset = _load(args)
    _need_complete_cases(dataset)
    h_grid = None
    if args.h_grid:
        try:
            h_grid = tuple(float(v) for v in args.h_grid.split(","))
        except ValueError:
            raise DataError(f"--h-grid: expected comma-separated numbers, got {args.h_grid!r}")
    seed = 0 if args.seed is None else args.seed
    result = select_bandwidth(dataset, h_grid=h_grid, seed=seed, k=args.folds,
                              gamma=args.gamma, threads=max(1, args.threads))
    rows = [
        (h, None if math.isinf(s) else s, e)
        for h, s, e in zip(result.h_grid, result.scores, result.excluded_fraction)
    ]
    meta = {"h_selected": _cell(result.h_selected),
            "h_undersmoothed": _cell(result.h_undersmoothed),
            "factor": _cell(result.factor), "gamma": _cell(result.gamma),
            "n_used": result.n_used, "n_complete_case": dataset.n_complete_case,
            "folds": result.folds, "seed": result.seed}
    _emit_rows(args.fmt, ("h", "score", "excluded_fraction"), rows, meta)
    return 0


def cmd_simulate(args) -> int:
    cfg = cfgmod.load_sim_config(args.config, seed_override=args.seed)
    dataset, truths = gen_dataset(cfg)
    iomod.write_dataset_csv(dataset, args.out)
    if args.truth_out:
        iomod.write_truth_csv(truths, args.truth_out)
    n_events = sum(1 for t in truths if t.event_observed)
    print(
        f"simulated {cfg.n} subjects: {dataset.n_subjects} with visits, "
        f"{n_events} events observed, {dataset.n_observations} observations "
        f"-> {args.out}",
        file=sys.stderr,
    )
    return 0


def cmd_study(args) -> int:
    cfg = cfgmod.load_study_config(args.config, seed_override=args.seed)
    result = run_study(cfg, threads=max(1, args.threads), out_dir=args.out_dir,
                       resume=not args.no_resume)
    print(
        f"study complete: {cfg.replications} replications, "
        f"{result.points.shape[0]} grid points -> {args.out_dir}",
        file=sys.stderr,
    )
    if result.zero_valid_points:
        raise NumericalError(
            f"{result.zero_valid_points} grid points had zero valid replications"
        )
    return 0


def cmd_kernel_moments(args) -> int:
    moments = kernel_moments(DEFAULT_KERNEL, quadrature_n=args.quadrature_n)
    rows = [
        ("mass", moments.mass),
        ("mu0", moments.mu0),
        ("mu1_x", moments.mu1[0]),
        ("mu1_y", moments.mu1[1]),
        ("mu2_xx", moments.mu2[0, 0]),
        ("mu2_xy", moments.mu2[0, 1]),
        ("mu2_yy", moments.mu2[1, 1]),
    ]
    meta = {"quadrature_n": args.quadrature_n,
            "truncation_radius": _cell(DEFAULT_KERNEL.truncation_radius),
            "normalizer": _cell(DEFAULT_KERNEL.normalizer)}
    _emit_rows(args.fmt, ("moment", "value"), rows, meta)
    return 0


def cmd_heatmap(args) -> int:
    meta, header, rows = iomod.read_table(args.coverage)
    needed = {"t", "s", "coverage"}
    if not needed.issubset(header):
        raise DataError(f"{args.coverage}: expected columns t, s, coverage")
    try:
        pts = [(float(r["t"]), float(r["s"]),
                float(r["coverage"]) if r["coverage"] else math.nan) for r in rows]
    except (ValueError, TypeError):
        raise DataError(f"{args.coverage}: malformed numeric fields")
    if not pts:
        raise DataError(f"{args.coverage}: no rows")
    t_vals = sorted({p[0] for p in pts})
    s_vals = sorted({p[1] for p in pts})
    lookup = {(p[0], p[1]): p[2] for p in pts}
    if len(lookup) != len(t_vals) * len(s_vals):
        raise DataError(f"{args.coverage}: grid is not rectangular")
    grid = np.full((len(s_vals), len(t_vals)), math.nan)
    for j, s in enumerate(s_vals):
        for i, t in enumerate(t_vals):
            grid[j, i] = lookup[(t, s)]
    title = args.title or f"coverage (coefficient {meta.get('coefficient', '?')})"
    svgmod.heatmap_chart(args.out, t_vals, s_vals, grid, title=title,
                         x_label="t", y_label="s", vmin=None, vmax=None)
    print(f"wrote {args.out}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles usage errors and --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except VctermError as exc:
        print(json.dumps({"error": str(exc), "code": exc.exit_code}),
              file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(json.dumps({"error": str(exc), "code": 2}), file=sys.stderr)
        return 2


def run():
    raise SystemExit(main())


if __name__ == "__main__":
    run()
