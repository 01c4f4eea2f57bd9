"""Long-format CSV ingestion and emission.

One row per visit with columns subject_id, visit_time, response,
followup_end, event_observed, and one x_-prefixed column per non-intercept
covariate. The intercept is injected on load. Numeric fields are written
with 17 significant digits so a write/load round trip is exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Subject
from .errors import DataError

REQUIRED_COLUMNS = ("subject_id", "visit_time", "response", "followup_end",
                    "event_observed")
COVARIATE_PREFIX = "x_"

_FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class TransformSpec:
    """Optional response transform y -> ln(y / scale + 1)."""

    kind: str = "none"  # "none" | "log_scale"
    scale: float = 1000.0

    def __post_init__(self):
        if self.kind not in ("none", "log_scale"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("transform scale must be positive")

    def apply(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "none":
            return y
        scaled = y / self.scale
        if np.any(scaled <= -1.0):
            raise DataError(
                f"log transform undefined: response below -scale ({-self.scale:g})"
            )
        return np.log1p(scaled)


def parse_transform(text: str) -> TransformSpec:
    """CLI transform names: "none" or "log1000"."""
    if text == "none":
        return TransformSpec("none")
    if text == "log1000":
        return TransformSpec("log_scale", 1000.0)
    raise DataError(f"unknown transform {text!r} (expected log1000 or none)")


@dataclass
class IngestionReport:
    rows_in: int = 0
    rows_kept: int = 0
    rows_rejected: int = 0
    rows_from_dropped_subjects: int = 0
    subjects_in: int = 0
    subjects_kept: int = 0
    subjects_dropped: int = 0
    diagnostics: list = field(default_factory=list)


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ValueError(f"line {line}: {column} {text!r} is not numeric")
    if not math.isfinite(value):
        raise ValueError(f"line {line}: {column} must be finite, got {text!r}")
    return value


class _RawSubject:
    __slots__ = ("sid", "first_line", "followup_end", "event_observed", "rows", "bad")

    def __init__(self, sid, first_line):
        self.sid = sid
        self.first_line = first_line
        self.followup_end = None
        self.event_observed = None
        self.rows = []  # (line, time, response, xvec)
        self.bad = None  # subject-level drop reason


def load_csv(path: str, transform: TransformSpec = TransformSpec()
             ) -> tuple[Dataset, IngestionReport]:
    """Parse and validate a long-format CSV.

    Row-level violations (bad numerics, visit after follow-up, duplicate or
    negative times) reject the row with a line-numbered diagnostic. Invalid
    subject-level fields drop the whole subject. A followup_end or
    event_observed value that changes within a subject is a hard error.
    """
    report = IngestionReport()
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file, no header")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing required columns {missing}")
        x_cols = [c for c in reader.fieldnames if c.startswith(COVARIATE_PREFIX)]

        order: list[str] = []
        groups: dict[str, _RawSubject] = {}
        for row in reader:
            line = reader.line_num
            report.rows_in += 1
            sid = row.get("subject_id") or ""
            if not sid:
                report.rows_rejected += 1
                report.diagnostics.append(f"line {line}: empty subject_id")
                continue
            raw = groups.get(sid)
            if raw is None:
                raw = _RawSubject(sid, line)
                groups[sid] = raw
                order.append(sid)

            # subject-level fields first: consistency is a hard error
            try:
                fup = _parse_float(row.get("followup_end"), line, "followup_end")
                flag_text = (row.get("event_observed") or "").strip()
                if flag_text not in ("0", "1"):
                    raise ValueError(
                        f"line {line}: event_observed must be 0 or 1, got {flag_text!r}"
                    )
                flag = flag_text == "1"
            except ValueError as exc:
                raw.rows.append((line, None, None, None))
                report.diagnostics.append(str(exc))
                if raw.bad is None:
                    raw.bad = str(exc)
                continue
            if raw.followup_end is None:
                raw.followup_end = fup
                raw.event_observed = flag
                if fup <= 0:
                    raw.bad = f"line {line}: followup_end must be positive"
                    report.diagnostics.append(raw.bad)
            else:
                if fup != raw.followup_end:
                    raise DataError(
                        f"{path} line {line}: followup_end changed within "
                        f"subject {sid!r} ({raw.followup_end!r} -> {fup!r})"
                    )
                if flag != raw.event_observed:
                    raise DataError(
                        f"{path} line {line}: event_observed changed within subject {sid!r}"
                    )

            try:
                t = _parse_float(row.get("visit_time"), line, "visit_time")
                y = _parse_float(row.get("response"), line, "response")
                x = [_parse_float(row.get(c), line, c) for c in x_cols]
            except ValueError as exc:
                raw.rows.append((line, None, None, None))
                report.diagnostics.append(str(exc))
                continue
            raw.rows.append((line, t, y, x))

    report.subjects_in = len(order)
    subjects = []
    for sid in order:
        raw = groups[sid]
        if raw.bad is not None:
            report.subjects_dropped += 1
            report.rows_from_dropped_subjects += sum(
                1 for r in raw.rows if r[1] is not None
            )
            report.rows_rejected += sum(1 for r in raw.rows if r[1] is None)
            continue
        kept = []
        seen_times = {}
        for line, t, y, x in sorted(
            (r for r in raw.rows if r[1] is not None), key=lambda r: (r[1], r[0])
        ):
            if t < 0:
                report.rows_rejected += 1
                report.diagnostics.append(f"line {line}: negative visit_time {t!r}")
            elif t > raw.followup_end:
                report.rows_rejected += 1
                report.diagnostics.append(
                    f"line {line}: visit_time {t!r} after followup_end {raw.followup_end!r}"
                )
            elif t in seen_times:
                report.rows_rejected += 1
                report.diagnostics.append(
                    f"line {line}: duplicate visit_time {t!r} (first at line {seen_times[t]})"
                )
            else:
                seen_times[t] = line
                kept.append((t, y, x))
        report.rows_rejected += sum(1 for r in raw.rows if r[1] is None)
        if not kept:
            report.subjects_dropped += 1
            report.diagnostics.append(
                f"subject {sid!r}: no valid visits left, dropped"
            )
            continue
        times = np.array([r[0] for r in kept])
        responses = transform.apply(np.array([r[1] for r in kept]))
        covs = np.column_stack(
            [np.ones(len(kept))] + [np.array([r[2][j] for r in kept])
                                    for j in range(len(x_cols))]
        )
        subjects.append(Subject(sid, times, covs, responses,
                                raw.followup_end, raw.event_observed))
        report.subjects_kept += 1
        report.rows_kept += len(kept)

    dataset = Dataset(subjects, p=1 + len(x_cols))
    return dataset, report


def fmt_float(x: float) -> str:
    return _FLOAT_FMT % float(x)


def covariate_headers(p: int) -> list[str]:
    """Non-intercept covariate column names x_2 .. x_p."""
    return [f"{COVARIATE_PREFIX}{k}" for k in range(2, p + 1)]


def write_dataset_csv(dataset: Dataset, path: str):
    """Emit the long format; loading the file back is an exact round trip."""
    headers = list(REQUIRED_COLUMNS) + covariate_headers(dataset.p)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(headers)
        for s in dataset.subjects:
            for j in range(s.n_visits):
                row = [s.id, fmt_float(s.times[j]), fmt_float(s.responses[j]),
                       fmt_float(s.followup_end), "1" if s.event_observed else "0"]
                row.extend(fmt_float(v) for v in s.covariates[j, 1:])
                writer.writerow(row)


def write_truth_csv(truths, path: str):
    """Generator-side record for simulated cohorts."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "x2", "x3_at_zero", "event_time",
                         "censor_time", "event_observed"])
        for tr in truths:
            writer.writerow([tr.subject_id, fmt_float(tr.x2), fmt_float(tr.x3_at_zero),
                             fmt_float(tr.event_time), fmt_float(tr.censor_time),
                             "1" if tr.event_observed else "0"])


@dataclass
class SubsampleResult:
    dataset: Dataset
    observations_in: int
    observations_kept: int
    subjects_dropped: int


def subsample_observation_times(data: Dataset, fraction: float, seed: int
                                ) -> SubsampleResult:
    """Keep each observation independently with the given probability.

    Mimics sparser visit schedules. Subjects left with no observations are
    dropped and counted. Deterministic in (data order, seed).
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    kept_subjects = []
    kept_obs = 0
    dropped = 0
    for s in data.subjects:
        mask = rng.random(s.n_visits) < fraction
        if not mask.any():
            dropped += 1
            continue
        kept_obs += int(mask.sum())
        kept_subjects.append(Subject(s.id, s.times[mask], s.covariates[mask],
                                     s.responses[mask], s.followup_end,
                                     s.event_observed))
    return SubsampleResult(Dataset(kept_subjects, p=data.p), data.n_observations,
                           kept_obs, dropped)


def read_table(path: str) -> tuple[dict, list[str], list[dict]]:
    """Read a CSV with `# key=value` comment headers (study artifacts)."""
    meta = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        lines = []
        for ln in fh:
            if ln.startswith("#"):
                body = ln[1:].strip()
                if "=" in body:
                    key, value = body.split("=", 1)
                    meta[key.strip()] = value.strip()
                continue
            lines.append(ln)
    if not lines:
        raise DataError(f"{path}: no table content")
    reader = csv.DictReader(lines)
    return meta, list(reader.fieldnames or []), list(reader)
