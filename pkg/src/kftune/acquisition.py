"""Expected improvement under a Student-t predictive, and next-point proposal."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .direct import BoxBounds, DirectBudget, direct_minimize
from .stp import StudentTPosterior, Surrogate, TrainingSet

# below this predictive standard deviation EI reduces to the plain improvement
SIGMA_FLOOR = 1e-12


def student_t_pdf(z, v):
    """Density of the standard Student-t with ``v`` degrees of freedom."""
    z = np.asarray(z, dtype=float)
    logc = special.gammaln(0.5 * (v + 1.0)) - special.gammaln(0.5 * v) - 0.5 * np.log(v * np.pi)
    return np.exp(logc - 0.5 * (v + 1.0) * np.log1p(z * z / v))


def student_t_cdf(z, v):
    """CDF of the standard Student-t with ``v`` degrees of freedom."""
    return special.stdtr(v, np.asarray(z, dtype=float))


def _ei(best, u, s, v):
    u = np.asarray(u, dtype=float)
    s = np.asarray(s, dtype=float)
    gain = best - u
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(s > SIGMA_FLOOR, gain / np.where(s > SIGMA_FLOOR, s, 1.0), 0.0)
        # keeps z*z finite; both terms have reached their limits long before
        z = np.clip(z, -1e100, 1e100)
        ei = gain * student_t_cdf(z, v) + v / (v - 1.0) * (1.0 + z * z / v) * s * student_t_pdf(z, v)
    ei = np.where(s > SIGMA_FLOOR, ei, np.maximum(gain, 0.0))
    return np.maximum(ei, 0.0)


def expected_improvement(post: StudentTPosterior, best_value: float) -> float:
    """Closed-form EI of ``best_value - Y`` for a Student-t predictive ``Y``.

    ``post.scale`` is a squared scale; its square root enters the formula.
    """
    if post.dof <= 1:
        raise ValueError("expected improvement needs dof > 1")
    s = math.sqrt(max(post.scale, 0.0))
    return float(_ei(best_value, post.mean, s, post.dof))


@dataclass(frozen=True)
class AcquisitionState:
    best_value: float
    surrogate: TrainingSet

    @classmethod
    def from_training_set(cls, ts: TrainingSet) -> "AcquisitionState":
        return cls(float(np.min(ts.values)), ts)


@dataclass(frozen=True)
class Proposal:
    point: np.ndarray
    ei: float
    status: str  # "ei" or "max_scale" (exploration fallback)
    nfev: int


def propose_next(ts: TrainingSet, bounds: BoxBounds, budget: DirectBudget | None = None,
                 best_value: float | None = None) -> Proposal:
    """Maximize EI over ``bounds`` with DIRECT.

    ``best_value`` defaults to the minimum observed value. When EI is zero at
    every evaluated point the point of largest predictive scale is returned.
    """
    budget = budget or DirectBudget()
    surrogate = Surrogate(ts)
    if best_value is None:
        best_value = float(np.min(ts.values))
    v = ts.dof + ts.n

    def neg_ei(x):
        u, s2 = surrogate.predict_many(x[None, :])
        return -float(_ei(best_value, u[0], math.sqrt(s2[0]), v))

    res = direct_minimize(neg_ei, bounds, budget)
    if res.fun < 0.0:
        return Proposal(res.x, -res.fun, "ei", res.nfev)

    def neg_scale(x):
        return -float(surrogate.predict_many(x[None, :])[1][0])

    res2 = direct_minimize(neg_scale, bounds, budget)
    return Proposal(res2.x, 0.0, "max_scale", res.nfev + res2.nfev)
