"""Longitudinal data containers: visits, subjects, validated datasets.

A subject carries repeated measurements up to a follow-up end that is
either the terminal event time (event_observed) or a censoring time.
Estimation only ever uses the complete-case subjects, i.e. those whose
event was observed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Visit:
    """One measurement occasion: time, covariate row (intercept first), response."""

    time: float
    covariates: np.ndarray
    response: float


class Subject:
    """All visits of one subject plus its follow-up outcome."""

    __slots__ = ("id", "times", "covariates", "responses", "followup_end", "event_observed")

    def __init__(self, id, times, covariates, responses, followup_end, event_observed):
        self.id = str(id)
        self.times = np.asarray(times, dtype=float)
        self.covariates = np.asarray(covariates, dtype=float)
        self.responses = np.asarray(responses, dtype=float)
        self.followup_end = float(followup_end)
        self.event_observed = bool(event_observed)
        self._validate()

    def _validate(self):
        if self.times.ndim != 1 or self.times.size == 0:
            raise ValueError(f"subject {self.id}: needs at least one visit")
        m = self.times.size
        if self.covariates.shape != (m, self.covariates.shape[-1]) or self.covariates.ndim != 2:
            raise ValueError(f"subject {self.id}: covariates must be (n_visits, p)")
        if self.responses.shape != (m,):
            raise ValueError(f"subject {self.id}: responses must match visit count")
        if not np.all(np.diff(self.times) > 0):
            raise ValueError(f"subject {self.id}: visit times must be strictly increasing")
        if not self.followup_end > 0:
            raise ValueError(f"subject {self.id}: followup_end must be positive")
        if float(self.times[-1]) > self.followup_end:
            raise ValueError(f"subject {self.id}: visit time exceeds followup_end")
        if not np.all(self.covariates[:, 0] == 1.0):
            raise ValueError(f"subject {self.id}: first covariate column must be 1 (intercept)")
        if not (np.all(np.isfinite(self.covariates)) and np.all(np.isfinite(self.responses))):
            raise ValueError(f"subject {self.id}: non-finite covariate or response")

    @property
    def n_visits(self) -> int:
        return int(self.times.size)

    @property
    def p(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def event_time(self):
        """Terminal event time; defined only when the event was observed."""
        return self.followup_end if self.event_observed else None

    @property
    def visits(self) -> list[Visit]:
        return [
            Visit(float(t), x, float(y))
            for t, x, y in zip(self.times, self.covariates, self.responses)
        ]

    @classmethod
    def from_visits(cls, id, visits, followup_end, event_observed) -> "Subject":
        times = [v.time for v in visits]
        covs = [np.asarray(v.covariates, dtype=float) for v in visits]
        resp = [v.response for v in visits]
        return cls(id, times, np.array(covs), resp, followup_end, event_observed)


class Dataset:
    """Validated collection of subjects with a common covariate dimension."""

    def __init__(self, subjects, p: int | None = None):
        self.subjects = tuple(subjects)
        if not self.subjects and p is None:
            raise ValueError("empty dataset needs an explicit covariate dimension p")
        self.p = int(p) if p is not None else self.subjects[0].p
        seen = set()
        for s in self.subjects:
            if s.p != self.p:
                raise ValueError(f"subject {s.id}: covariate dimension {s.p} != {self.p}")
            if s.id in seen:
                raise ValueError(f"duplicate subject id {s.id!r}")
            seen.add(s.id)
        # lazy caches used by the fitting layer
        self._fit_view = None
        self._resid_cache = {}

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_complete_case(self) -> int:
        return sum(1 for s in self.subjects if s.event_observed)

    @property
    def n_observations(self) -> int:
        return sum(s.n_visits for s in self.subjects)

    def complete_case(self) -> "Dataset":
        """View restricted to subjects whose terminal event was observed."""
        return Dataset([s for s in self.subjects if s.event_observed], p=self.p)
