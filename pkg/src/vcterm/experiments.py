"""Replication studies: repeated simulation, fitting, and coverage accounting.

A study draws R independent cohorts, fits the model with variance on a
fixed evaluation grid, and aggregates bias, spread, estimated standard
errors, and confidence-interval coverage per grid point and coefficient.
Per-replication rows are persisted append-only so a crashed study resumes.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from statistics import NormalDist

import numpy as np

from .bandwidth import CVResult, DEFAULT_FOLDS, DEFAULT_GAMMA, select_bandwidth
from .data import Dataset
from .errors import DataError
from .fit import (DEFAULT_KERNEL, STATUS_EMPTY, STATUS_OK, STATUS_SINGULAR,
                  Kernel, fit_grid, standard_errors)
from .simulate import SimConfig, beta_value, gen_dataset, spawn_stateless

H_POLICIES = ("fixed", "cv-once", "cv-per-rep")

_STATUS_CODE = {STATUS_OK: 0, STATUS_SINGULAR: 1, STATUS_EMPTY: 2}
_STATUS_NAME = {v: k for k, v in _STATUS_CODE.items()}

PARTIAL_RECORDS = "records.partial.csv"
RECORDS_FILE = "records.csv"
SUMMARY_FILE = "summary.csv"
METADATA_FILE = "metadata.json"


@dataclass(frozen=True)
class GridSpec:
    """Evaluation grid: anti-diagonal slices at fixed total time, a
    rectangular mesh, or explicit points."""

    kind: str = "slices"
    slice_T: tuple = (8.0, 12.0, 16.0)
    slice_t_step: float = 1.0
    rect_t: tuple = ()
    rect_s: tuple = ()
    points: tuple = ()

    def __post_init__(self):
        if self.kind not in ("slices", "rect", "points"):
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if self.kind == "slices" and (not self.slice_T or self.slice_t_step <= 0):
            raise ValueError("slices grid needs slice_T values and a positive step")
        if self.kind == "rect" and (not self.rect_t or not self.rect_s):
            raise ValueError("rect grid needs rect_t and rect_s values")
        if self.kind == "points" and not self.points:
            raise ValueError("points grid needs explicit points")

    def eval_points(self) -> list[tuple[float, float]]:
        if self.kind == "slices":
            pts = []
            for T in self.slice_T:
                count = int(math.floor((float(T) - 1e-9) / self.slice_t_step))
                for i in range(1, count + 1):
                    t = i * self.slice_t_step
                    pts.append((t, float(T) - t))
            return pts
        if self.kind == "rect":
            return [(float(t), float(s)) for t in self.rect_t for s in self.rect_s]
        return [(float(t), float(s)) for t, s in self.points]


@dataclass(frozen=True)
class CvSettings:
    h_grid: tuple | None = None
    folds: int = DEFAULT_FOLDS
    seed: int = 0


@dataclass(frozen=True)
class StudyConfig:
    sim: SimConfig
    replications: int
    h_policy: str = "cv-once"
    h_fixed: float | None = None
    gamma: float = DEFAULT_GAMMA
    alpha: float = 0.05
    grid: GridSpec = field(default_factory=GridSpec)
    cv: CvSettings = field(default_factory=CvSettings)

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.h_policy not in H_POLICIES:
            raise ValueError(f"h_policy must be one of {H_POLICIES}")
        if self.h_policy == "fixed" and not (self.h_fixed and self.h_fixed > 0):
            raise ValueError("fixed h_policy needs a positive h_fixed")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        for t, s in self.grid.eval_points():
            if t < 0 or s < 0:
                raise ValueError(f"grid point ({t}, {s}) leaves the first quadrant")


@dataclass
class RepRecord:
    """One replication's estimates on the grid."""

    rep: int
    h: float
    estimate: np.ndarray  # (G, p), NaN where not ok
    se: np.ndarray        # (G, p), NaN where not ok
    status: np.ndarray    # (G,), int codes


@dataclass
class StudyResult:
    config: StudyConfig
    points: np.ndarray          # (G, 2)
    truth: np.ndarray           # (G, p)
    mean_estimate: np.ndarray   # (G, p)
    bias: np.ndarray
    emp_sd: np.ndarray
    mean_se: np.ndarray
    coverage: np.ndarray
    coverage_mc_se: np.ndarray
    valid: np.ndarray           # (G,) replications with status ok per point
    h_values: tuple             # one bandwidth per replication
    cv: CVResult | None
    records: tuple

    @property
    def p(self) -> int:
        return self.truth.shape[1]

    @property
    def zero_valid_points(self) -> int:
        return int(np.count_nonzero(self.valid == 0))


def replication_seed_sequences(seed: int, replications: int):
    """Independent substreams, one per replication, stable in the index."""
    return spawn_stateless(np.random.SeedSequence(seed), replications)


def study_fingerprint(config: StudyConfig) -> str:
    """Hash identifying a study's full configuration (not its thread count)."""
    return hashlib.sha256(repr(config).encode()).hexdigest()[:16]


def truth_matrix(sim: SimConfig, points) -> np.ndarray:
    t = np.array([pt[0] for pt in points])
    s = np.array([pt[1] for pt in points])
    return np.column_stack([beta_value(sim, k, t, s) for k in range(1, sim.p + 1)])


def _run_replication(config: StudyConfig, rep: int, seed_seq, h: float | None,
                     kernel: Kernel, points) -> RepRecord:
    ds, _ = gen_dataset(config.sim, seed_seq=seed_seq)
    if h is None:
        cv = select_bandwidth(ds, h_grid=config.cv.h_grid, k=config.cv.folds,
                              seed=config.cv.seed, gamma=config.gamma, kernel=kernel)
        h = cv.h_undersmoothed
    n_cc = ds.n_complete_case
    fits = fit_grid(ds, points, h, kernel, with_variance=True)
    G, p = len(points), config.sim.p
    est = np.full((G, p), np.nan)
    se = np.full((G, p), np.nan)
    status = np.empty(G, dtype=np.int8)
    for g, fp in enumerate(fits):
        status[g] = _STATUS_CODE[fp.status]
        if fp.status == STATUS_OK:
            est[g] = fp.beta_hat
            se[g] = standard_errors(fp, n_cc)
    return RepRecord(rep=rep, h=float(h), estimate=est, se=se, status=status)


def _record_rows(record: RepRecord, points):
    rows = []
    G, p = record.estimate.shape
    for g in range(G):
        name = _STATUS_NAME[int(record.status[g])]
        for k in range(p):
            est = record.estimate[g, k]
            sev = record.se[g, k]
            rows.append((record.rep, g, points[g][0], points[g][1], k + 1,
                         record.h,
                         est if math.isfinite(est) else None,
                         sev if math.isfinite(sev) else None,
                         name))
    return rows


_RECORD_HEADER = ("rep", "point", "t", "s", "coef", "h", "estimate", "se", "status")


def _format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _append_partial(path: str, rows, lock: threading.Lock):
    text = "".join(",".join(_format_cell(v) for v in row) + "\n" for row in rows)
    with lock:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()


def _load_partial(path: str, fingerprint: str, G: int, p: int) -> dict[int, RepRecord]:
    """Completed replications from an interrupted run; ignores partial reps."""
    if not os.path.exists(path):
        return {}
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines:
        return {}
    head = lines[0]
    if not head.startswith("# fingerprint="):
        raise DataError(f"{path}: missing fingerprint line; remove the file to restart")
    if head.split("=", 1)[1] != fingerprint:
        raise DataError(
            f"{path}: was written by a different study configuration; "
            "remove the file or use a fresh output directory"
        )
    by_rep: dict[int, list] = {}
    for ln in lines[1:]:
        if not ln or ln.startswith("#") or ln.startswith("rep,"):
            continue
        parts = ln.split(",")
        if len(parts) != len(_RECORD_HEADER):
            continue  # torn tail line from a crash
        by_rep.setdefault(int(parts[0]), []).append(parts)
    out = {}
    for rep, rows in by_rep.items():
        if len(rows) != G * p:
            continue
        est = np.full((G, p), np.nan)
        se = np.full((G, p), np.nan)
        status = np.empty(G, dtype=np.int8)
        h = float(rows[0][5])
        for parts in rows:
            g, k = int(parts[1]), int(parts[4]) - 1
            status[g] = _STATUS_CODE[parts[8]]
            if parts[6]:
                est[g, k] = float(parts[6])
            if parts[7]:
                se[g, k] = float(parts[7])
        out[rep] = RepRecord(rep=rep, h=h, estimate=est, se=se, status=status)
    return out


def aggregate_records(config: StudyConfig, points, truth, records) -> StudyResult:
    """Reduce per-replication records in replication order."""
    G, p = truth.shape
    z = NormalDist().inv_cdf(1.0 - config.alpha / 2.0)
    mean_est = np.full((G, p), np.nan)
    emp_sd = np.full((G, p), np.nan)
    mean_se = np.full((G, p), np.nan)
    coverage = np.full((G, p), np.nan)
    cov_mc_se = np.full((G, p), np.nan)
    valid = np.zeros(G, dtype=int)
    ordered = sorted(records, key=lambda r: r.rep)
    for g in range(G):
        ok = [r for r in ordered if r.status[g] == 0]
        valid[g] = len(ok)
        if not ok:
            continue
        for k in range(p):
            ests = [float(r.estimate[g, k]) for r in ok]
            ses = [float(r.se[g, k]) for r in ok]
            nv = len(ests)
            m = math.fsum(ests) / nv
            mean_est[g, k] = m
            mean_se[g, k] = math.fsum(ses) / nv
            if nv > 1:
                emp_sd[g, k] = math.sqrt(
                    math.fsum((e - m) ** 2 for e in ests) / (nv - 1)
                )
            hits = sum(1 for e, s in zip(ests, ses) if abs(e - truth[g, k]) <= z * s)
            c = hits / nv
            coverage[g, k] = c
            cov_mc_se[g, k] = math.sqrt(c * (1.0 - c) / nv)
    pts = np.array([[pt[0], pt[1]] for pt in points])
    return StudyResult(
        config=config, points=pts, truth=truth, mean_estimate=mean_est,
        bias=mean_est - truth, emp_sd=emp_sd, mean_se=mean_se, coverage=coverage,
        coverage_mc_se=cov_mc_se, valid=valid,
        h_values=tuple(r.h for r in ordered), cv=None, records=tuple(ordered),
    )


def run_study(config: StudyConfig, threads: int = 1, out_dir: str | None = None,
              resume: bool = True, kernel: Kernel = DEFAULT_KERNEL) -> StudyResult:
    """Run (or resume) a replication study; results are independent of threads.

    Bandwidth policies: "fixed" uses h_fixed everywhere; "cv-once" selects on
    the first replication's cohort and reuses it; "cv-per-rep" reselects per
    replication.
    """
    points = config.grid.eval_points()
    truth = truth_matrix(config.sim, points)
    R = config.replications
    seqs = replication_seed_sequences(config.sim.seed, R)
    fingerprint = study_fingerprint(config)

    cv_result = None
    h0: float | None = None
    if config.h_policy == "fixed":
        h0 = float(config.h_fixed)
    elif config.h_policy == "cv-once":
        ds0, _ = gen_dataset(config.sim, seed_seq=seqs[0])
        cv_result = select_bandwidth(
            ds0, h_grid=config.cv.h_grid, k=config.cv.folds, seed=config.cv.seed,
            gamma=config.gamma, kernel=kernel, threads=threads,
        )
        h0 = cv_result.h_undersmoothed
        # first replication re-derives its seed substream below; the selection
        # cohort and the fitted cohort for rep 0 are identical by construction

    done: dict[int, RepRecord] = {}
    partial_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        partial_path = os.path.join(out_dir, PARTIAL_RECORDS)
        if resume:
            done = _load_partial(partial_path, fingerprint, len(points), config.sim.p)
        elif os.path.exists(partial_path):
            os.remove(partial_path)
        if not os.path.exists(partial_path):
            with open(partial_path, "w", encoding="utf-8") as fh:
                fh.write(f"# fingerprint={fingerprint}\n")
                fh.write(",".join(_RECORD_HEADER) + "\n")

    missing = [r for r in range(R) if r not in done]
    lock = threading.Lock()

    def work(rep: int) -> RepRecord:
        record = _run_replication(config, rep, seqs[rep], h0, kernel, points)
        if partial_path is not None:
            _append_partial(partial_path, _record_rows(record, points), lock)
        return record

    if threads > 1 and len(missing) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(work, rep): rep for rep in missing}
            for fut in as_completed(futures):
                record = fut.result()
                done[record.rep] = record
    else:
        for rep in missing:
            done[rep] = work(rep)

    result = aggregate_records(config, points, truth,
                               [done[r] for r in range(R)])
    result.cv = cv_result
    if out_dir is not None:
        write_study_artifacts(result, out_dir)
        # the scratch file only matters for crash recovery; removing it keeps
        # the finished directory identical across runs and thread counts
        if partial_path is not None and os.path.exists(partial_path):
            os.remove(partial_path)
    return result


@dataclass
class HeatmapTable:
    """Coverage of one coefficient on a rectangular grid; NaN marks points
    with zero valid replications (distinct from zero coverage)."""

    coefficient: int
    t_values: tuple
    s_values: tuple
    coverage: np.ndarray  # (len(s_values), len(t_values))
    valid: np.ndarray     # same shape, ints

    def rows(self):
        out = []
        for j, s in enumerate(self.s_values):
            for i, t in enumerate(self.t_values):
                c = self.coverage[j, i]
                out.append((t, s, None if math.isnan(c) else c, int(self.valid[j, i])))
        return out


def coverage_heatmap(result: StudyResult, coefficient: int) -> HeatmapTable:
    """Long-format coverage table for one coefficient; grid must be rectangular."""
    if not 1 <= coefficient <= result.p:
        raise ValueError(f"coefficient must be in 1..{result.p}")
    pts = [(float(t), float(s)) for t, s in result.points]
    t_vals = tuple(sorted({pt[0] for pt in pts}))
    s_vals = tuple(sorted({pt[1] for pt in pts}))
    index = {pt: g for g, pt in enumerate(pts)}
    if len(index) != len(pts) or len(t_vals) * len(s_vals) != len(pts):
        raise ValueError("evaluation grid is not rectangular; cannot build a heatmap")
    cov = np.full((len(s_vals), len(t_vals)), np.nan)
    val = np.zeros((len(s_vals), len(t_vals)), dtype=int)
    k = coefficient - 1
    for j, s in enumerate(s_vals):
        for i, t in enumerate(t_vals):
            g = index.get((t, s))
            if g is None:
                raise ValueError("evaluation grid is not rectangular; cannot build a heatmap")
            val[j, i] = result.valid[g]
            if result.valid[g] > 0:
                cov[j, i] = result.coverage[g, k]
    return HeatmapTable(coefficient, t_vals, s_vals, cov, val)


@dataclass
class SliceTable:
    """Aggregated curves along one fixed total time T = t + s."""

    T: float
    alpha: float
    t: np.ndarray
    s: np.ndarray
    truth: np.ndarray          # (nt, p)
    mean_estimate: np.ndarray
    emp_sd: np.ndarray
    mean_se: np.ndarray
    lower_emp: np.ndarray      # mean - z * empirical SD
    upper_emp: np.ndarray
    lower_est: np.ndarray      # mean - z * mean estimated SE
    upper_est: np.ndarray
    valid: np.ndarray          # (nt,)

    def rows(self):
        out = []
        p = self.truth.shape[1]
        for i in range(self.t.size):
            for k in range(p):
                out.append((
                    k + 1, float(self.t[i]), float(self.s[i]),
                    float(self.truth[i, k]), self.mean_estimate[i, k],
                    self.emp_sd[i, k], self.mean_se[i, k],
                    self.lower_emp[i, k], self.upper_emp[i, k],
                    self.lower_est[i, k], self.upper_est[i, k],
                    int(self.valid[i]),
                ))
        return out


def slice_summary(result: StudyResult, T_fixed: float, atol: float = 1e-9) -> SliceTable:
    """Truth, mean estimate, and both confidence envelopes along t + s = T."""
    T_fixed = float(T_fixed)
    total = result.points[:, 0] + result.points[:, 1]
    idx = np.nonzero(np.abs(total - T_fixed) <= atol)[0]
    if idx.size == 0:
        raise ValueError(f"no evaluation points on the slice t + s = {T_fixed}")
    idx = idx[np.argsort(result.points[idx, 0])]
    z = NormalDist().inv_cdf(1.0 - result.config.alpha / 2.0)
    mean = result.mean_estimate[idx]
    emp = result.emp_sd[idx]
    est = result.mean_se[idx]
    return SliceTable(
        T=T_fixed, alpha=result.config.alpha,
        t=result.points[idx, 0], s=result.points[idx, 1],
        truth=result.truth[idx], mean_estimate=mean, emp_sd=emp, mean_se=est,
        lower_emp=mean - z * emp, upper_emp=mean + z * emp,
        lower_est=mean - z * est, upper_est=mean + z * est,
        valid=result.valid[idx],
    )


_SUMMARY_HEADER = ("point", "t", "s", "coef", "truth", "mean_estimate", "bias",
                   "emp_sd", "mean_se", "coverage", "coverage_mc_se", "valid")
_SLICE_HEADER = ("coef", "t", "s", "truth", "mean_estimate", "emp_sd", "mean_se",
                 "lower_emp", "upper_emp", "lower_est", "upper_est", "valid")
_HEATMAP_HEADER = ("t", "s", "coverage", "valid")


def _write_table(path: str, meta: dict, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(meta):
            fh.write(f"# {key}={meta[key]}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(v) for v in row) + "\n")


def _nan_none(x: float):
    return None if math.isnan(x) else float(x)


def write_study_artifacts(result: StudyResult, out_dir: str):
    """summary.csv, sorted records.csv, metadata.json, and per-grid extras."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = result.config
    fingerprint = study_fingerprint(cfg)
    meta = {"fingerprint": fingerprint, "replications": cfg.replications,
            "alpha": _format_cell(cfg.alpha), "h_policy": cfg.h_policy}

    rows = []
    G, p = result.truth.shape
    for g in range(G):
        for k in range(p):
            rows.append((
                g, float(result.points[g, 0]), float(result.points[g, 1]), k + 1,
                float(result.truth[g, k]), _nan_none(result.mean_estimate[g, k]),
                _nan_none(result.bias[g, k]), _nan_none(result.emp_sd[g, k]),
                _nan_none(result.mean_se[g, k]), _nan_none(result.coverage[g, k]),
                _nan_none(result.coverage_mc_se[g, k]), int(result.valid[g]),
            ))
    _write_table(os.path.join(out_dir, SUMMARY_FILE), meta, _SUMMARY_HEADER, rows)

    points = [(float(t), float(s)) for t, s in result.points]
    record_rows = []
    for record in result.records:
        record_rows.extend(_record_rows(record, points))
    record_rows.sort(key=lambda r: (r[0], r[1], r[4]))
    _write_table(os.path.join(out_dir, RECORDS_FILE),
                 {"fingerprint": fingerprint}, _RECORD_HEADER, record_rows)

    if cfg.grid.kind == "rect":
        for k in range(1, p + 1):
            table = coverage_heatmap(result, k)
            _write_table(os.path.join(out_dir, f"coverage_b{k}.csv"),
                         {"fingerprint": fingerprint, "coefficient": k},
                         _HEATMAP_HEADER, table.rows())
    if cfg.grid.kind == "slices":
        for T in cfg.grid.slice_T:
            table = slice_summary(result, float(T))
            name = ("slice_T%g" % float(T)).replace(".", "_") + ".csv"
            _write_table(os.path.join(out_dir, name),
                         {"fingerprint": fingerprint, "T": _format_cell(float(T))},
                         _SLICE_HEADER,
                         [tuple(_nan_none(v) if isinstance(v, float) else v for v in row)
                          for row in table.rows()])

    cv_meta = None
    if result.cv is not None:
        cv_meta = asdict(result.cv)
        # infeasible candidates carry +inf scores, which strict JSON lacks
        cv_meta["scores"] = [s if math.isfinite(s) else None for s in cv_meta["scores"]]
    metadata = {
        "fingerprint": fingerprint,
        "config": asdict(cfg),
        "h_values": list(result.h_values),
        "cv": cv_meta,
        "zero_valid_points": result.zero_valid_points,
        "status_codes": {v: k for k, v in _STATUS_CODE.items()},
    }
    with open(os.path.join(out_dir, METADATA_FILE), "w", encoding="utf-8") as fh:
        json.dump(metadata, fh, sort_keys=True, indent=2)
        fh.write("\n")
