"""Local weighted least squares on the (visit time, time-to-event) plane.

For a target point (t0, s0) the estimate solves

    beta_hat = (sum_i Xi' Ki Xi)^{-1} (sum_i Xi' Ki Yi)

over complete-case subjects, where Ki is diagonal with entries
h^{-2} K((tau_ij - t0)/h, (Ti - tau_ij - s0)/h). The sandwich variance
follows the moment-based plug-in form with per-subject score vectors.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .data import Dataset
from .errors import NumericalError
from .kernel import DEFAULT_KERNEL, Kernel, kernel_eval

STATUS_OK = "ok"
STATUS_SINGULAR = "singular"
STATUS_EMPTY = "empty_support"

# reciprocal condition number below which the local Gram matrix is
# declared singular
RCOND_MIN = 1e-12


class FitError(NumericalError):
    """A pointwise fit could not be produced (no support or singular Gram)."""

    def __init__(self, status: str, n_eff: int):
        super().__init__(f"local fit failed: {status} (n_eff={n_eff})")
        self.status = status
        self.n_eff = n_eff


@dataclass
class FitPoint:
    t0: float
    s0: float
    h: float
    beta_hat: np.ndarray | None
    v_hat: np.ndarray | None
    n_eff: int
    status: str


@dataclass
class ResidualTable:
    """Per-observation residuals at a fixed bandwidth, in pooled view order.

    Observations whose own local fit failed are flagged invalid and carry NaN.
    """

    h: float
    subject_ids: tuple
    times: np.ndarray
    resid: np.ndarray
    valid: np.ndarray

    @property
    def n_invalid(self) -> int:
        return int(self.valid.size - np.count_nonzero(self.valid))


class _View:
    """Complete-case observations pooled across subjects, sorted by visit time."""

    __slots__ = ("p", "n_subjects", "n_obs", "t", "s", "X", "y", "subj", "subject_ids")

    def __init__(self, p, n_subjects, t, s, X, y, subj, subject_ids):
        self.p = p
        self.n_subjects = n_subjects
        self.n_obs = t.size
        self.t = t
        self.s = s
        self.X = X
        self.y = y
        self.subj = subj
        self.subject_ids = subject_ids

    @classmethod
    def build(cls, dataset: Dataset) -> "_View":
        cc = [s for s in dataset.subjects if s.event_observed]
        p = dataset.p
        if not cc:
            empty = np.empty(0)
            return cls(p, 0, empty, empty, np.empty((0, p)), empty,
                       np.empty(0, dtype=np.intp), ())
        t = np.concatenate([s.times for s in cc])
        X = np.vstack([s.covariates for s in cc])
        y = np.concatenate([s.responses for s in cc])
        # residual lifetime at each visit; followup_end is the event time here
        s_axis = np.concatenate([s.followup_end - s.times for s in cc])
        subj = np.concatenate(
            [np.full(s.n_visits, i, dtype=np.intp) for i, s in enumerate(cc)]
        )
        order = np.argsort(t, kind="stable")
        return cls(p, len(cc), t[order], s_axis[order], X[order], y[order],
                   subj[order], tuple(s.id for s in cc))

    def subset(self, mask: np.ndarray) -> "_View":
        return _View(self.p, self.n_subjects, self.t[mask], self.s[mask],
                     self.X[mask], self.y[mask], self.subj[mask], self.subject_ids)


def _view_of(data: Dataset) -> _View:
    if data._fit_view is None:
        data._fit_view = _View.build(data)
    return data._fit_view


def _check_h(h: float):
    if not h > 0:
        raise ValueError("bandwidth h must be positive")


def _band(view: _View, t0: float, h: float, kernel: Kernel):
    reach = kernel.truncation_radius * h
    lo = int(np.searchsorted(view.t, t0 - reach, side="left"))
    hi = int(np.searchsorted(view.t, t0 + reach, side="right"))
    return lo, hi


def _weights(view, lo, hi, t0, s0, h, kernel):
    u = (view.t[lo:hi] - t0) / h
    v = (view.s[lo:hi] - s0) / h
    return kernel_eval(kernel, u, v) / (h * h)


def _normal_equations(view, t0, s0, h, kernel):
    """Gram matrix, moment vector, effective count and the weight band."""
    lo, hi = _band(view, t0, h, kernel)
    w = _weights(view, lo, hi, t0, s0, h, kernel)
    n_eff = int(np.count_nonzero(w))
    if n_eff < view.p:
        return None, None, n_eff, w, lo, hi
    Xb = view.X[lo:hi]
    Aw = Xb * w[:, None]
    A = Aw.T @ Xb
    b = Aw.T @ view.y[lo:hi]
    return A, b, n_eff, w, lo, hi


def _spd_factor(A: np.ndarray):
    """Eigendecomposition of the symmetric Gram matrix; None when singular."""
    evals, evecs = np.linalg.eigh(A)
    lam_max = float(evals[-1])
    if lam_max <= 0.0 or float(evals[0]) < RCOND_MIN * lam_max:
        return None
    return evals, evecs


def _solve_at(view, t0, s0, h, kernel):
    """(beta | None, n_eff, status) at one target point."""
    A, b, n_eff, _, _, _ = _normal_equations(view, t0, s0, h, kernel)
    if A is None:
        return None, n_eff, STATUS_EMPTY
    factor = _spd_factor(A)
    if factor is None:
        return None, n_eff, STATUS_SINGULAR
    evals, evecs = factor
    beta = evecs @ ((evecs.T @ b) / evals)
    return beta, n_eff, STATUS_OK


def local_fit(data: Dataset, t0: float, s0: float, h: float,
              kernel: Kernel = DEFAULT_KERNEL) -> FitPoint:
    """Pointwise estimate at (t0, s0); never raises on thin support.

    status is "empty_support" when fewer weighted observations than
    coefficients fall in the kernel disk, "singular" when the Gram matrix
    fails the reciprocal-condition test. Callers decide whether to skip.
    """
    _check_h(h)
    view = _view_of(data)
    beta, n_eff, status = _solve_at(view, float(t0), float(s0), float(h), kernel)
    return FitPoint(float(t0), float(s0), float(h), beta, None, n_eff, status)


def residuals(data: Dataset, h: float, kernel: Kernel = DEFAULT_KERNEL) -> ResidualTable:
    """Residual of every complete-case observation against its own local fit.

    Each observation (i, j) is compared with x_ij' beta_hat(tau_ij, Ti - tau_ij)
    at the same bandwidth. Tables are cached per (h, kernel) on the dataset.
    """
    _check_h(h)
    view = _view_of(data)
    key = (float(h), kernel)
    cached = data._resid_cache.get(key)
    if cached is not None:
        return cached
    n = view.n_obs
    resid = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)
    for i in range(n):
        beta, _, status = _solve_at(view, view.t[i], view.s[i], float(h), kernel)
        if status == STATUS_OK:
            resid[i] = view.y[i] - view.X[i] @ beta
            valid[i] = True
    ids = tuple(view.subject_ids[j] for j in view.subj)
    table = ResidualTable(h=float(h), subject_ids=ids, times=view.t.copy(),
                          resid=resid, valid=valid)
    data._resid_cache[key] = table
    return table


def sandwich_variance(data: Dataset, t0: float, s0: float, h: float,
                      kernel: Kernel = DEFAULT_KERNEL,
                      resid: ResidualTable | None = None) -> np.ndarray:
    """Moment-based sandwich V_hat = n h^2 A^{-1} M A^{-1} at (t0, s0).

    M aggregates per-subject score vectors g_i = Xi' Ki eps_i, so within-subject
    correlation is kept. Residuals must come from the same bandwidth;
    observations with invalid residuals contribute zero to M. n is the number
    of complete-case subjects. Raises FitError on empty support or a singular
    Gram matrix. The result is symmetrized.
    """
    _check_h(h)
    view = _view_of(data)
    if resid is None:
        resid = residuals(data, h, kernel)
    if resid.h != float(h):
        raise ValueError("residual table was computed at a different bandwidth")
    if resid.resid.shape[0] != view.n_obs:
        raise ValueError("residual table does not match this dataset")
    t0, s0, h = float(t0), float(s0), float(h)
    A, _, n_eff, w, lo, hi = _normal_equations(view, t0, s0, h, kernel)
    if A is None:
        raise FitError(STATUS_EMPTY, n_eff)
    factor = _spd_factor(A)
    if factor is None:
        raise FitError(STATUS_SINGULAR, n_eff)
    evals, evecs = factor

    eps = np.where(resid.valid[lo:hi], resid.resid[lo:hi], 0.0)
    c = w * eps
    seg = view.subj[lo:hi]
    G = np.empty((view.n_subjects, view.p))
    for k in range(view.p):
        G[:, k] = np.bincount(seg, weights=c * view.X[lo:hi, k],
                              minlength=view.n_subjects)
    M = G.T @ G
    A_inv = evecs @ (evecs.T / evals[:, None])
    V = view.n_subjects * h * h * (A_inv @ M @ A_inv)
    return 0.5 * (V + V.T)


def confidence_interval(fit: FitPoint, n: int, alpha: float = 0.05) -> np.ndarray:
    """Pointwise normal intervals beta_k +/- z_{alpha/2} sqrt(V_kk / (n h^2)).

    n must be the complete-case subject count used by the sandwich.
    Returns an array of (lower, upper) rows, one per coefficient.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if fit.status != STATUS_OK:
        raise FitError(fit.status, fit.n_eff)
    if fit.v_hat is None:
        raise ValueError("fit has no variance; compute sandwich_variance first")
    if not n > 0:
        raise ValueError("n must be positive")
    z = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    # tiny negative diagonals are eigen-roundoff from an exact zero
    se = np.sqrt(np.clip(np.diag(fit.v_hat), 0.0, None) / (n * fit.h * fit.h))
    return np.column_stack([fit.beta_hat - z * se, fit.beta_hat + z * se])


def standard_errors(fit: FitPoint, n: int) -> np.ndarray:
    """sqrt(V_kk / (n h^2)) per coefficient, the scale used by the intervals."""
    if fit.v_hat is None:
        raise ValueError("fit has no variance; compute sandwich_variance first")
    return np.sqrt(np.clip(np.diag(fit.v_hat), 0.0, None) / (n * fit.h * fit.h))


def fit_grid(data: Dataset, grid, h: float, kernel: Kernel = DEFAULT_KERNEL,
             with_variance: bool = False, threads: int = 1) -> list[FitPoint]:
    """Fit every (t0, s0) in the grid; per-point failures never abort the grid.

    With with_variance the residual table is computed once and shared by all
    points. Results are ordered like the input grid and do not depend on the
    thread count.
    """
    _check_h(h)
    points = [(float(t), float(s)) for t, s in grid]
    if not points:
        raise ValueError("grid must contain at least one point")
    resid = residuals(data, h, kernel) if with_variance else None

    def one(pt):
        fp = local_fit(data, pt[0], pt[1], h, kernel)
        if with_variance and fp.status == STATUS_OK:
            fp.v_hat = sandwich_variance(data, pt[0], pt[1], h, kernel, resid)
        return fp

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, points))
    return [one(pt) for pt in points]


def slice_fit(data: Dataset, T_fixed: float, t_values, h: float,
              kernel: Kernel = DEFAULT_KERNEL, with_variance: bool = False,
              threads: int = 1) -> list[FitPoint]:
    """Fits along the line t + s = T_fixed, i.e. fixed total event time."""
    T_fixed = float(T_fixed)
    ts = [float(t) for t in t_values]
    if not ts:
        raise ValueError("t_values must be nonempty")
    for t in ts:
        if not 0.0 <= t < T_fixed:
            raise ValueError(f"slice time t={t} outside [0, T_fixed)")
    grid = [(t, T_fixed - t) for t in ts]
    return fit_grid(data, grid, h, kernel, with_variance=with_variance, threads=threads)
