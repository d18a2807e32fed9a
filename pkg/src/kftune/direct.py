"""DIRECT (DIviding RECTangles) global minimization over a box.

Deterministic, derivative-free. Works in the unit hypercube; each hyper-
rectangle is stored by its center and the number of trisections applied to
each axis, so side lengths are exact powers of 1/3.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class BoxBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("need lower < upper in every dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def from_unit(self, c: np.ndarray) -> np.ndarray:
        return self.lower + c * (self.upper - self.lower)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass(frozen=True)
class DirectBudget:
    max_evaluations: int = 400
    max_rectangle_divisions: int = 10**6
    epsilon: float = 1e-4

    def __post_init__(self):
        if self.max_evaluations < 1:
            raise ValueError("max_evaluations must be at least 1")
        if self.max_rectangle_divisions < 1:
            raise ValueError("max_rectangle_divisions must be at least 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


@dataclass
class DirectResult:
    x: np.ndarray
    fun: float
    nfev: int
    n_divisions: int
    points: list = field(repr=False, default_factory=list)
    values: list = field(repr=False, default_factory=list)
    best_history: list = field(repr=False, default_factory=list)


def _potentially_optimal(sizes, fvals, fmin, eps) -> list[int]:
    """Indices of potentially optimal rectangles (lower-right convex hull).

    One candidate per distinct size: the lowest value, ties to lowest index.
    """
    by_size: dict[float, int] = {}
    for i, (s, f) in enumerate(zip(sizes, fvals)):
        j = by_size.get(s)
        if j is None or f < fvals[j]:
            by_size[s] = i
    cand = sorted(by_size.items())  # ascending size
    ds = np.array([s for s, _ in cand])
    fs = np.array([fvals[i] for _, i in cand])
    idx = [i for _, i in cand]

    # start from the smallest-value rectangle among the largest-or-equal sizes
    start = int(np.argmin(fs[::-1]))
    start = len(fs) - 1 - start
    # only rectangles at least as large as the best one can be optimal
    hull = [start]
    j = start
    while j < len(fs) - 1:
        slopes = (fs[j + 1:] - fs[j]) / (ds[j + 1:] - ds[j])
        k = j + 1 + int(np.argmin(slopes))
        hull.append(k)
        j = k

    selected = []
    thresh = eps * abs(fmin) if fmin != 0 else eps
    for pos, j in enumerate(hull):
        if pos + 1 < len(hull):
            k = hull[pos + 1]
            slope = (fs[k] - fs[j]) / (ds[k] - ds[j])
            # sufficient decrease condition
            if fs[j] - slope * ds[j] > fmin - thresh:
                continue
        selected.append(idx[j])
    return selected


def direct_minimize(objective: Callable[[np.ndarray], float], bounds: BoxBounds,
                    budget: DirectBudget | None = None) -> DirectResult:
    """Minimize ``objective`` over ``bounds`` with the DIRECT algorithm.

    Non-finite objective values are recorded as ``+inf``; during rectangle
    selection they are replaced by the largest finite value seen so far.
    Evaluations never exceed ``budget.max_evaluations``.
    """
    budget = budget or DirectBudget()
    n = bounds.dim

    points: list[np.ndarray] = []
    values: list[float] = []
    history: list[float] = []
    best = [np.inf, None]

    def evaluate(c):
        x = bounds.from_unit(c)
        f = float(objective(x))
        if not np.isfinite(f):
            f = np.inf
        points.append(x)
        values.append(f)
        if f < best[0] or best[1] is None:
            best[0], best[1] = f, x
        history.append(best[0])
        return f

    centers = [np.full(n, 0.5)]
    levels = [np.zeros(n, dtype=int)]
    fvals = [evaluate(centers[0])]
    n_div = 0

    def size(level):
        # half diagonal of the rectangle in unit coordinates
        return 0.5 * float(np.sqrt(np.sum(3.0 ** (-2.0 * level))))

    while len(values) < budget.max_evaluations and n_div < budget.max_rectangle_divisions:
        finite = [f for f in fvals if np.isfinite(f)]
        fill = max(finite) if finite else 0.0
        fsel = [f if np.isfinite(f) else fill for f in fvals]
        sizes = [size(lv) for lv in levels]
        fmin = min(fsel)
        selected = _potentially_optimal(sizes, fsel, fmin, budget.epsilon)
        progressed = False
        for r in selected:
            lv = levels[r]
            dims = np.flatnonzero(lv == lv.min())
            if len(values) + 2 * dims.size > budget.max_evaluations:
                break
            if n_div >= budget.max_rectangle_divisions:
                break
            delta = 3.0 ** (-(lv.min() + 1))
            c = centers[r]
            samples = []
            for i in dims:
                e = np.zeros(n)
                e[i] = delta
                f_plus = evaluate(c + e)
                f_minus = evaluate(c - e)
                samples.append((min(f_plus, f_minus), int(i), f_plus, f_minus))
            # split along dimensions with the best samples first
            samples.sort(key=lambda t: (t[0], t[1]))
            lv = lv.copy()
            for _, i, f_plus, f_minus in samples:
                lv[i] += 1
                for sign, f in ((1.0, f_plus), (-1.0, f_minus)):
                    e = np.zeros(n)
                    e[i] = sign * delta
                    centers.append(c + e)
                    levels.append(lv.copy())
                    fvals.append(f)
            levels[r] = lv
            n_div += 1
            progressed = True
        if not progressed:
            break

    if not np.isfinite(best[0]):
        raise FloatingPointError("objective was non-finite at every evaluated point")
    return DirectResult(np.array(best[1]), float(best[0]), len(values), n_div,
                        points, values, history)
