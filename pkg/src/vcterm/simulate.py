"""Synthetic longitudinal cohorts with a terminal event and informative censoring.

Per subject: roughly annual visit times, a time-varying covariate process
correlated with a scalar covariate, event and censoring times driven by
covariate-dependent truncated-exponential rates, and an error process that
adds a decaying-variance correlated component to white noise. Responses
follow the varying-coefficient model in (visit time, time-to-event).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Subject
from .errors import NumericalError

BETA_MODES = ("surfaces", "constant")

_CLAMP = 1e-12
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class SimConfig:
    """Full description of one synthetic cohort.

    event_coefs / censor_coefs act on (X2, X3(0), 1) inside an exponential
    rate; the raw event and censoring delays live on [0, truncation] and are
    shifted by ``shift``. zero_errors and beta_mode="constant" give the
    noiseless exact-recovery configuration.
    """

    n: int
    m: int = 20
    p: int = 3
    nu: float = 0.01
    event_coefs: tuple = (3.0, 1.0, -5.0)
    censor_coefs: tuple = (1.0, 3.0, -5.0)
    truncation: float = 15.0
    shift: float = 5.0
    error_var_params: tuple = (1.0, -0.1)
    error_corr_base: float = 0.5
    white_noise_var: float = 1.0
    seed: int = 0
    zero_errors: bool = False
    beta_mode: str = "surfaces"
    constant_beta: tuple = (2.0, -1.0, 0.5)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if not 1 <= self.p <= 3:
            raise ValueError("p must be 1, 2, or 3")
        if not 0.0 < self.nu <= 0.5:
            raise ValueError("nu must be in (0, 0.5]")
        if len(self.event_coefs) != 3 or len(self.censor_coefs) != 3:
            raise ValueError("event_coefs and censor_coefs must have 3 entries")
        if not self.truncation > 0:
            raise ValueError("truncation must be positive")
        if self.shift < 0:
            raise ValueError("shift must be nonnegative")
        if not 0.0 < self.error_corr_base <= 1.0:
            raise ValueError("error_corr_base must be in (0, 1]")
        if self.white_noise_var < 0:
            raise ValueError("white_noise_var must be nonnegative")
        if self.beta_mode not in BETA_MODES:
            raise ValueError(f"beta_mode must be one of {BETA_MODES}")
        if len(self.constant_beta) < self.p:
            raise ValueError("constant_beta must provide one value per coefficient")


@dataclass(frozen=True)
class TruthRecord:
    """Generator-side values hidden from the estimator."""

    subject_id: str
    x2: float
    x3_at_zero: float
    event_time: float
    censor_time: float
    event_observed: bool


def true_beta(k: int, x, y):
    """The three coefficient surfaces over (visit time, time-to-event)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if k == 1:
        out = (x / 4.0) * np.exp(-(x * x + y * y) / 100.0)
    elif k == 2:
        out = 0.5 * (np.sin(2.0 * x / 5.0) - np.sin(y / 2.0))
    elif k == 3:
        out = np.cos((x * x + y * y) / 100.0)
    else:
        raise ValueError("k must be 1, 2, or 3")
    if out.ndim == 0:
        return float(out)
    return out


def beta_value(config: SimConfig, k: int, x, y):
    """Coefficient k of the configured model at (x, y)."""
    if not 1 <= k <= config.p:
        raise ValueError(f"k must be in 1..{config.p}")
    if config.beta_mode == "constant":
        c = float(config.constant_beta[k - 1])
        shaped = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))[0]
        out = np.full_like(shaped, c)
        if out.ndim == 0:
            return c
        return out
    return true_beta(k, x, y)


def beta_interarrival_params(tau1: float, nu: float) -> tuple[float, float]:
    """Beta-distribution parameters for the within-year visit offsets."""
    scale = 4.0 * nu * nu
    return tau1 / scale, (1.0 - tau1) / scale


def gen_visit_times(rng: np.random.Generator, m: int = 20, nu: float = 0.01) -> np.ndarray:
    """First visit uniform on [0, 1]; visit j sits in year j with a Beta offset
    centered on the first visit's phase. Output is strictly increasing."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if not 0.0 < nu <= 0.5:
        raise ValueError("nu must be in (0, 0.5]")
    tau1 = float(rng.uniform())
    tau1 = min(max(tau1, _CLAMP), 1.0 - _CLAMP)
    times = np.empty(m)
    times[0] = tau1
    if m > 1:
        a, b = beta_interarrival_params(tau1, nu)
        times[1:] = np.arange(1, m) + rng.beta(a, b, size=m - 1)
    return times


def _chol_with_jitter(sigma: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor with escalating diagonal jitter up to 1e-6."""
    dim = sigma.shape[0]
    eye = np.eye(dim)
    for jit in _JITTERS:
        try:
            return np.linalg.cholesky(sigma + jit * eye if jit else sigma), jit
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"covariance factorization failed after jitter up to {_JITTERS[-1]:g} (dim={dim})"
    )


def covariate_covariance(times) -> np.ndarray:
    """Joint covariance of (X2, X3(t) for t in times)."""
    t = np.asarray(times, dtype=float)
    dim = t.size + 1
    sigma = np.empty((dim, dim))
    sigma[0, 0] = 1.0
    cross = 0.8 * np.exp(-t * t)
    sigma[0, 1:] = cross
    sigma[1:, 0] = cross
    diff = t[:, None] - t[None, :]
    sigma[1:, 1:] = np.exp(-diff * diff)
    return sigma


def gen_covariates(rng: np.random.Generator, times) -> tuple[float, np.ndarray]:
    """One draw of (X2, X3 path on the given times)."""
    sigma = covariate_covariance(times)
    L, _ = _chol_with_jitter(sigma)
    draw = L @ rng.standard_normal(sigma.shape[0])
    return float(draw[0]), draw[1:]


def _rate(coefs, x2: float, x3_0: float) -> float:
    return math.exp(coefs[0] * x2 + coefs[1] * x3_0 + coefs[2])


def trunc_exp_inverse(u: float, rate: float, upper: float) -> float:
    """Inverse CDF of an Exponential(rate) truncated to [0, upper]."""
    return -math.log1p(u * math.expm1(-rate * upper)) / rate


def gen_event_times(rng: np.random.Generator, x2: float, x3_0: float,
                    config: SimConfig) -> tuple[float, float]:
    """(event time, censoring time), both in [shift, shift + truncation]."""
    rate_t = _rate(config.event_coefs, x2, x3_0)
    rate_c = _rate(config.censor_coefs, x2, x3_0)
    t = config.shift + trunc_exp_inverse(float(rng.uniform()), rate_t, config.truncation)
    c = config.shift + trunc_exp_inverse(float(rng.uniform()), rate_c, config.truncation)
    return t, c


def error_covariance(times, config: SimConfig) -> np.ndarray:
    """Covariance of the correlated error component on the given times."""
    t = np.asarray(times, dtype=float)
    a, b = config.error_var_params
    sd = np.exp(0.5 * (a + b * t))
    gaps = np.abs(t[:, None] - t[None, :])
    return np.outer(sd, sd) * config.error_corr_base**gaps


def gen_errors(rng: np.random.Generator, times, config: SimConfig) -> np.ndarray:
    """Correlated component plus white noise; all zeros under zero_errors."""
    t = np.asarray(times, dtype=float)
    if config.zero_errors:
        return np.zeros(t.size)
    sigma = error_covariance(t, config)
    L, _ = _chol_with_jitter(sigma)
    u = L @ rng.standard_normal(t.size)
    z = math.sqrt(config.white_noise_var) * rng.standard_normal(t.size)
    return u + z


def spawn_stateless(seq: np.random.SeedSequence, count: int):
    """The first `count` children of a seed sequence, without mutating it.

    Unlike SeedSequence.spawn, calling this twice gives the same children,
    so a dataset can be regenerated from the same sequence object.
    """
    return [
        np.random.SeedSequence(entropy=seq.entropy, spawn_key=tuple(seq.spawn_key) + (i,))
        for i in range(count)
    ]


def gen_dataset(config: SimConfig,
                seed_seq: np.random.SeedSequence | None = None
                ) -> tuple[Dataset, list[TruthRecord]]:
    """Generate a cohort; every subject uses its own RNG substream.

    Visits after min(event, censoring) are discarded; responses are built
    from the true event time even for censored subjects. Per-subject draw
    order is fixed: visits, covariates, event times, errors.
    """
    ss = np.random.SeedSequence(config.seed) if seed_seq is None else seed_seq
    children = spawn_stateless(ss, config.n)
    subjects = []
    truths = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        taus = gen_visit_times(rng, config.m, config.nu)
        # X3 is also sampled at time zero, where the event rates look at it
        x2, x3 = gen_covariates(rng, np.concatenate(([0.0], taus)))
        x3_0 = float(x3[0])
        x3_visits = x3[1:]
        t_event, t_cens = gen_event_times(rng, x2, x3_0, config)
        eps = gen_errors(rng, taus, config)

        followup = min(t_event, t_cens)
        keep = taus <= followup
        kept_t = taus[keep]
        if kept_t.size == 0:
            # only possible when shift < 1; such subjects carry no observations
            truths.append(TruthRecord(f"s{i:06d}", x2, x3_0, t_event, t_cens,
                                      t_event <= t_cens))
            continue
        columns = [np.ones(kept_t.size), np.full(kept_t.size, x2), x3_visits[keep]]
        X = np.column_stack(columns[: config.p])
        s_axis = t_event - kept_t
        y = eps[keep].copy()
        for k in range(1, config.p + 1):
            y += X[:, k - 1] * beta_value(config, k, kept_t, s_axis)

        sid = f"s{i:06d}"
        subjects.append(
            Subject(sid, kept_t, X, y, followup_end=followup,
                    event_observed=t_event <= t_cens)
        )
        truths.append(
            TruthRecord(sid, x2, x3_0, t_event, t_cens, t_event <= t_cens)
        )
    return Dataset(subjects, p=config.p), truths
