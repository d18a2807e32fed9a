"""Bayesian optimization with a Student-t process surrogate (TPBO).

Seed the surrogate with a Latin-hypercube design, then repeatedly refit the
kernel hyperparameters, maximize expected improvement, evaluate the
objective at the proposal and add it to the data. The incumbent is the
lowest observed value.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .acquisition import propose_next
from .direct import BoxBounds, DirectBudget
from .stp import KernelSpec, fit_hyperparameters, make_training_set

log = logging.getLogger(__name__)


@dataclass
class TuningProblem:
    objective: Callable[[np.ndarray], float]
    bounds: BoxBounds
    n_seed: int = 10
    max_iterations: int = 50
    min_improvement: float = 1e-4
    patience: int | None = 10
    rng_seed: int = 0
    dof: float = 5.0
    optimize_dof: bool = False
    kernel_family: str = "matern52"
    center: bool = True
    direct_evaluations: int | None = None
    n_starts: int = 8

    def __post_init__(self):
        if self.n_seed < 2:
            raise ValueError("n_seed must be at least 2")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.min_improvement < 0:
            raise ValueError("min_improvement must be non-negative")

    def direct_budget(self) -> DirectBudget:
        n = self.direct_evaluations
        if n is None:
            d = self.bounds.dim
            n = 400 * d if d > 2 else 400
        return DirectBudget(max_evaluations=n)


@dataclass(frozen=True)
class Sample:
    point: np.ndarray
    value: float
    tag: str  # "seed" or "proposed"
    wall_time: float


@dataclass(frozen=True)
class ProgressRecord:
    iteration: int  # 0 for seed samples
    point: np.ndarray
    cost: float
    incumbent_point: np.ndarray
    incumbent_cost: float
    tag: str


@dataclass
class TuningTrace:
    samples: list[Sample] = field(default_factory=list)
    incumbents: list[tuple[np.ndarray, float]] = field(default_factory=list)
    hyperparameters: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def best(self) -> tuple[np.ndarray, float]:
        values = np.array([s.value for s in self.samples])
        i = int(np.argmin(values))
        return self.samples[i].point, self.samples[i].value

    @property
    def n_iterations(self) -> int:
        return sum(s.tag == "proposed" for s in self.samples)


def seed_design(bounds: BoxBounds, n_seed: int, rng_seed: int) -> np.ndarray:
    """Latin-hypercube design of ``n_seed`` points in ``bounds``."""
    u = qmc.LatinHypercube(d=bounds.dim, seed=rng_seed).random(n_seed)
    return bounds.from_unit(u)


def _fit_values(values: np.ndarray) -> np.ndarray:
    # infinite costs would wreck the surrogate; cap at the worst finite cost
    finite = np.isfinite(values)
    if finite.all():
        return values
    cap = values[finite].max() if finite.any() else 0.0
    return np.where(finite, values, cap)


def run_tpbo(problem: TuningProblem, sink: Callable[[ProgressRecord], None] | None = None) -> TuningTrace:
    """Run the TPBO loop and return the full sample trace."""
    trace = TuningTrace()
    bounds = problem.bounds
    budget = problem.direct_budget()
    X: list[np.ndarray] = []
    Y: list[float] = []

    def record(x, tag, iteration):
        t0 = time.perf_counter()
        y = float(problem.objective(np.array(x)))
        if not np.isfinite(y):
            msg = f"objective non-finite at {np.array2string(np.asarray(x))}; recorded as +inf"
            log.warning(msg)
            trace.warnings.append(msg)
            y = np.inf
        X.append(np.array(x, dtype=float))
        Y.append(y)
        trace.samples.append(Sample(np.array(x, dtype=float), y, tag, time.perf_counter() - t0))
        best_pt, best_val = trace.best
        if sink is not None:
            sink(ProgressRecord(iteration, np.array(x, dtype=float), y, best_pt, best_val, tag))

    for x in seed_design(bounds, problem.n_seed, problem.rng_seed):
        record(x, "seed", 0)
    trace.incumbents.append(trace.best)

    kernel = KernelSpec(problem.kernel_family, np.full(bounds.dim, 0.3), 1.0)
    dof = problem.dof
    stall = 0
    trace.stop_reason = "max_iterations"
    for it in range(1, problem.max_iterations + 1):
        ts = make_training_set(np.array(X), _fit_values(np.array(Y)), dof=dof, kernel=kernel,
                               lower=bounds.lower, upper=bounds.upper, center=problem.center)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = fit_hyperparameters(ts, n_starts=problem.n_starts,
                                      seed=problem.rng_seed + it,
                                      optimize_dof=problem.optimize_dof)
        if not fit.ok:
            msg = f"iteration {it}: hyperparameter fit failed, reusing previous kernel"
            log.warning(msg)
            trace.warnings.append(msg)
        ts = fit.training_set
        kernel, dof = ts.kernel, ts.dof
        trace.hyperparameters.append({
            "iteration": it,
            "length_scales": kernel.length_scales.tolist(),
            "signal_variance": kernel.signal_variance,
            "dof": dof,
            "log_likelihood": fit.log_likelihood,
        })

        prev_best = trace.best[1]
        prop = propose_next(ts, bounds, budget, best_value=float(np.min(ts.values)))
        if prop.status != "ei":
            trace.warnings.append(f"iteration {it}: EI vanished, exploring max predictive scale")
        record(np.clip(prop.point, bounds.lower, bounds.upper), "proposed", it)
        trace.incumbents.append(trace.best)

        new_best = trace.best[1]
        gain = prev_best - new_best if np.isfinite(prev_best) else np.inf
        stall = stall + 1 if gain < problem.min_improvement else 0
        if problem.patience is not None and stall >= problem.patience:
            trace.stop_reason = "stalled"
            break
    return trace
