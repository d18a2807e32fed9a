"""NEES/NIS statistics, chi-square interval tests and scalar tuning costs."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

log = logging.getLogger(__name__)


def _normalized_square(err, cov) -> np.ndarray | float:
    err = np.asarray(err, dtype=float)
    cov = np.asarray(cov, dtype=float)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("covariance is not positive definite") from None
    w = np.linalg.solve(L, err[..., None])[..., 0]
    out = np.sum(w * w, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def nees(err, P):
    """Normalized estimation error squared ``e^T P^-1 e`` (broadcasts)."""
    return _normalized_square(err, P)


def nis(innov, S):
    """Normalized innovation squared ``e^T S^-1 e`` (broadcasts)."""
    return _normalized_square(innov, S)


@dataclass(frozen=True)
class StatSeries:
    values: np.ndarray
    dof: int
    n_runs: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 1:
            raise ValueError("series must have at least one step")
        if np.any(v < 0):
            raise ValueError("statistics must be non-negative")
        object.__setattr__(self, "values", v)


def average_series(per_run, dof: int, n_runs: int | None = None) -> StatSeries:
    """Average an ``(N, T)`` array of per-run statistics across runs."""
    a = np.atleast_2d(np.asarray(per_run, dtype=float))
    n = a.shape[0] if n_runs is None else n_runs
    if n < 1 or a.shape[0] != n:
        raise ValueError("n_runs must match the number of rows")
    return StatSeries(a.sum(axis=0) / n, dof, n)


@dataclass(frozen=True)
class ChiSquareBounds:
    lower: float
    upper: float
    alpha: float


def chi2_bounds(alpha: float, n_runs: int, dof: int) -> ChiSquareBounds:
    """Two-sided interval for the mean of ``n_runs`` iid chi-square(dof) draws."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    m = n_runs * dof
    return ChiSquareBounds(float(chi2.ppf(0.5 * alpha, m) / n_runs),
                           float(chi2.ppf(1.0 - 0.5 * alpha, m) / n_runs), alpha)


@dataclass
class ConsistencyReport:
    stat: str
    dof: int
    alpha: float
    n_runs: int
    bounds: ChiSquareBounds
    values: np.ndarray
    flags: np.ndarray  # -1 below, 0 inside, +1 above
    pass_fraction: float
    verdict: str
    cost: float

    def to_dict(self) -> dict:
        return {
            "stat": self.stat,
            "dof": self.dof,
            "alpha": self.alpha,
            "n_runs": self.n_runs,
            "bounds": {"lower": self.bounds.lower, "upper": self.bounds.upper},
            "pass_fraction": self.pass_fraction,
            "verdict": self.verdict,
            "cost": self.cost,
            "per_step": {
                "k": list(range(1, self.values.size + 1)),
                "stat": self.values.tolist(),
                "flag": [FLAG_NAMES[f] for f in self.flags],
            },
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "stat", "lower", "upper", "flag"])
            for k, (v, f) in enumerate(zip(self.values, self.flags), start=1):
                w.writerow([k, repr(float(v)), repr(self.bounds.lower),
                            repr(self.bounds.upper), FLAG_NAMES[f]])


FLAG_NAMES = {-1: "below", 0: "in", 1: "above"}


def consistency_test(series: StatSeries, bounds: ChiSquareBounds, stat: str = "nis",
                     min_pass_fraction: float | None = None) -> ConsistencyReport:
    """Flag each step against the chi-square band and classify the tuning.

    The filter is called consistent when the pass fraction is at least
    ``min_pass_fraction`` (default ``1 - 2 alpha``). Otherwise the verdict
    follows the majority side of the violations: below the band is
    pessimistic, above is optimistic.
    """
    v = series.values
    flags = np.where(v < bounds.lower, -1, np.where(v > bounds.upper, 1, 0))
    frac = float(np.mean(flags == 0))
    if min_pass_fraction is None:
        min_pass_fraction = 1.0 - 2.0 * bounds.alpha
    if frac >= min_pass_fraction:
        verdict = "consistent"
    else:
        verdict = "pessimistic" if np.sum(flags < 0) > np.sum(flags > 0) else "optimistic"
    return ConsistencyReport(stat, series.dof, bounds.alpha, series.n_runs, bounds, v,
                             flags, frac, verdict, log_ratio_cost(series))


def log_ratio_cost(series: StatSeries, discard: int = 0) -> float:
    """``|log(mean_k stat_k / dof)|`` over steps ``discard`` onward."""
    v = series.values[discard:]
    if v.size == 0:
        raise ValueError("discard removes every step")
    m = float(np.mean(v))
    if m <= 0:
        log.warning("time-averaged statistic is zero; cost is +inf")
        return np.inf
    return abs(np.log(m / series.dof))


def j_nees(series: StatSeries, discard: int = 0) -> float:
    return log_ratio_cost(series, discard)


def j_nis(series: StatSeries, discard: int = 0) -> float:
    return log_ratio_cost(series, discard)
