"""Student-t process regression.

A Student-t process (TP) surrogate with a constant (zero) prior mean. Finite
collections of outputs are multivariate Student-t with ``dof`` degrees of
freedom and covariance matrix ``K`` built from a stationary kernel, using the
scaled parameterization in which ``K`` is the covariance of the outputs::

    p(y) = Gamma((v+n)/2) / (Gamma(v/2) ((v-2) pi)^(n/2) |K|^(1/2))
           * (1 + y^T K^-1 y / (v-2))^(-(v+n)/2)

The predictive distribution at a new point is univariate Student-t with
``v + n`` degrees of freedom, mean ``K21 K11^-1 y`` and squared scale
``(v + d)/(v + n) (K22 - K21 K11^-1 K12)`` where ``d = y^T K11^-1 y``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize
from scipy.special import gammaln
from scipy.stats import qmc

KERNEL_FAMILIES = ("squared_exponential", "matern32", "matern52")

# relative jitter ladder used when a Cholesky factorization fails
JITTER_START = 1e-8
JITTER_MAX = 1e-2


class FactorizationError(np.linalg.LinAlgError):
    """Covariance matrix could not be factorized even with maximal jitter."""


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel with per-dimension length scales."""

    family: str = "matern52"
    length_scales: np.ndarray = field(default_factory=lambda: np.array([0.3]))
    signal_variance: float = 1.0
    jitter: float = 1e-8

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise ValueError("length scales must be positive and finite")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")

    @property
    def dim(self) -> int:
        return self.length_scales.size


def _kernel_from_distance(family: str, r: np.ndarray, variance: float) -> np.ndarray:
    if family == "squared_exponential":
        return variance * np.exp(-0.5 * r**2)
    if family == "matern32":
        s = math.sqrt(3.0) * r
        return variance * (1.0 + s) * np.exp(-s)
    s = math.sqrt(5.0) * r
    return variance * (1.0 + s + s**2 / 3.0) * np.exp(-s)


def _scaled_distance(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = (a[:, None, :] - b[None, :, :]) / spec.length_scales
    return np.sqrt(np.sum(diff**2, axis=-1))


def _as_points(points, dim: int) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, dim)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"points must have {dim} columns, got shape {np.shape(points)}")
    return x


def kernel_eval(spec: KernelSpec, a, b) -> float:
    """Evaluate the kernel between two single points."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != (spec.dim,) or b.shape != (spec.dim,):
        raise ValueError(
            f"points must have dimension {spec.dim}, got {a.shape} and {b.shape}"
        )
    r = _scaled_distance(spec, a[None], b[None])
    return float(_kernel_from_distance(spec.family, r, spec.signal_variance)[0, 0])


def cross_covariance(spec: KernelSpec, a, b) -> np.ndarray:
    """Kernel matrix between two point sets (no jitter)."""
    a = _as_points(a, spec.dim)
    b = _as_points(b, spec.dim)
    return _kernel_from_distance(spec.family, _scaled_distance(spec, a, b), spec.signal_variance)


def build_covariance(spec: KernelSpec, points) -> np.ndarray:
    """Kernel matrix of ``points`` with ``spec.jitter`` added to the diagonal."""
    x = _as_points(points, spec.dim)
    if x.shape[0] == 0:
        raise ValueError("need at least one point")
    K = cross_covariance(spec, x, x)
    if not np.all(np.isfinite(K)):
        raise FloatingPointError("non-finite kernel value")
    K[np.diag_indices_from(K)] += spec.jitter
    return K


def robust_cholesky(K: np.ndarray, scale: float = 1.0) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K``, adding diagonal jitter on failure.

    Jitter starts at ``JITTER_START * scale`` and doubles up to
    ``JITTER_MAX * scale``. Returns the factor and the extra jitter used.
    """
    try:
        return linalg.cholesky(K, lower=True), 0.0
    except linalg.LinAlgError:
        pass
    extra = JITTER_START * scale
    eye = np.eye(K.shape[0])
    while extra <= JITTER_MAX * scale:
        try:
            return linalg.cholesky(K + extra * eye, lower=True), extra
        except linalg.LinAlgError:
            extra *= 2.0
    raise FactorizationError("covariance factorization failed at maximal jitter")


@dataclass(frozen=True)
class TrainingSet:
    """Observed design points and values backing a TP surrogate.

    ``points`` are stored in original units. When ``lower``/``upper`` are
    given, points are mapped to the unit box before kernel evaluation. When
    ``center`` is set, the sample mean of ``values`` is subtracted before
    fitting and added back on prediction.
    """

    points: np.ndarray
    values: np.ndarray
    dof: float = 5.0
    kernel: KernelSpec = field(default_factory=KernelSpec)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    center: bool = False

    def __post_init__(self):
        x = np.asarray(self.points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.values, dtype=float).ravel()
        if x.shape[0] != y.size:
            raise ValueError("points and values must have equal length")
        if x.shape[0] == 0:
            raise ValueError("training set is empty")
        if x.shape[1] != self.kernel.dim:
            raise ValueError(
                f"kernel has {self.kernel.dim} length scales but points have {x.shape[1]} columns"
            )
        if not self.dof > 2:
            raise ValueError("dof must exceed 2")
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "values", y)
        if self.lower is not None:
            object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float).ravel())
            object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float).ravel())

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def offset(self) -> float:
        return float(np.mean(self.values)) if self.center else 0.0

    def to_unit(self, x) -> np.ndarray:
        x = _as_points(x, self.kernel.dim)
        if self.lower is None:
            return x
        return (x - self.lower) / (self.upper - self.lower)


def make_training_set(points, values, *, dof=5.0, kernel=None, lower=None,
                      upper=None, center=False) -> TrainingSet:
    """Build a TrainingSet, merging exact duplicate points by averaging."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(values, dtype=float).ravel()
    if kernel is None:
        kernel = KernelSpec(length_scales=np.full(x.shape[1], 0.3))
    uniq, inverse = np.unique(x, axis=0, return_inverse=True)
    if uniq.shape[0] < x.shape[0]:
        inverse = inverse.ravel()
        sums = np.zeros(uniq.shape[0])
        np.add.at(sums, inverse, y)
        counts = np.bincount(inverse, minlength=uniq.shape[0])
        # keep first-occurrence order so results do not depend on sorting
        first = np.full(uniq.shape[0], x.shape[0])
        np.minimum.at(first, inverse, np.arange(x.shape[0]))
        order = np.argsort(first)
        x = uniq[order]
        y = (sums / counts)[order]
    return TrainingSet(x, y, dof=dof, kernel=kernel, lower=lower, upper=upper, center=center)


@dataclass(frozen=True)
class StudentTPosterior:
    """Univariate Student-t predictive: dof, location and squared scale."""

    dof: float
    mean: float
    scale: float


class _Factor:
    """Cached Cholesky quantities for a training set."""

    def __init__(self, ts: TrainingSet):
        self.ts = ts
        self.x = ts.to_unit(ts.points)
        self.y = ts.values - ts.offset
        K = build_covariance(ts.kernel, self.x)
        self.L, self.extra_jitter = robust_cholesky(K, ts.kernel.signal_variance)
        self.alpha = linalg.cho_solve((self.L, True), self.y)
        self.d = float(self.y @ self.alpha)
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.L))))


def log_marginal_likelihood(ts: TrainingSet) -> float:
    """Log multivariate Student-t density of the (centered) training values."""
    try:
        fac = _Factor(ts)
    except FactorizationError as exc:
        raise FactorizationError(
            f"cannot factorize covariance for length_scales={ts.kernel.length_scales}, "
            f"signal_variance={ts.kernel.signal_variance}, dof={ts.dof}"
        ) from exc
    return _mvt_logpdf(fac.d, fac.logdet, ts.n, ts.dof)


def _mvt_logpdf(d: float, logdet: float, n: int, v: float) -> float:
    return (
        gammaln(0.5 * (v + n))
        - gammaln(0.5 * v)
        - 0.5 * n * math.log((v - 2.0) * math.pi)
        - 0.5 * logdet
        - 0.5 * (v + n) * math.log1p(d / (v - 2.0))
    )


class Surrogate:
    """Fitted TP ready for repeated prediction.

    Holds the Cholesky factor of the training covariance so each query costs
    one triangular solve.
    """

    def __init__(self, ts: TrainingSet):
        self.ts = ts
        self._fac = _Factor(ts)

    def predict(self, query) -> StudentTPosterior:
        u, s = self.predict_many(np.atleast_2d(np.asarray(query, dtype=float).reshape(1, -1)))
        return StudentTPosterior(self.ts.dof + self.ts.n, float(u[0]), float(s[0]))

    def predict_many(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Predictive means and squared scales at each row of ``queries``."""
        ts, fac = self.ts, self._fac
        q = ts.to_unit(queries)
        k12 = cross_covariance(ts.kernel, fac.x, q)
        mean = k12.T @ fac.alpha + ts.offset
        w = linalg.solve_triangular(fac.L, k12, lower=True)
        k22 = ts.kernel.signal_variance + ts.kernel.jitter
        var = k22 - np.sum(w**2, axis=0)
        scale = (ts.dof + fac.d) / (ts.dof + ts.n) * var
        return mean, np.maximum(scale, 0.0)


def posterior_predict(ts: TrainingSet, query) -> StudentTPosterior:
    """Conditional Student-t predictive distribution at ``query``."""
    query = np.atleast_1d(np.asarray(query, dtype=float))
    if query.shape != (ts.kernel.dim,):
        raise ValueError(f"query must have dimension {ts.kernel.dim}")
    return Surrogate(ts).predict(query)


@dataclass(frozen=True)
class FitResult:
    training_set: TrainingSet
    log_likelihood: float
    ok: bool
    n_starts: int


def default_hyper_bounds(ts: TrainingSet, optimize_dof: bool = False) -> np.ndarray:
    """Box over log hyperparameters: log length scales, log signal variance[, log(dof-2)].

    Length scales live in unit-box coordinates when the training set carries
    bounds. The signal-variance range is relative to the sample variance.
    """
    d = ts.kernel.dim
    yvar = float(np.var(ts.values))
    s = yvar if yvar > 0 else 1.0
    rows = [[math.log(1e-2), math.log(10.0)]] * d
    rows.append([math.log(1e-4 * s), math.log(1e2 * s)])
    if optimize_dof:
        rows.append([math.log(1e-2), math.log(28.0)])
    return np.array(rows)


def _unpack(theta: np.ndarray, ts: TrainingSet, optimize_dof: bool) -> TrainingSet:
    d = ts.kernel.dim
    var = math.exp(theta[d])
    kernel = replace(
        ts.kernel,
        length_scales=np.exp(theta[:d]),
        signal_variance=var,
        jitter=JITTER_START * var,
    )
    dof = 2.0 + math.exp(theta[d + 1]) if optimize_dof else ts.dof
    return replace(ts, kernel=kernel, dof=dof)


def fit_hyperparameters(ts: TrainingSet, bounds=None, *, n_starts: int = 8,
                        seed: int = 0, optimize_dof: bool = False) -> FitResult:
    """Maximize the log marginal likelihood by multi-start L-BFGS-B.

    Starts are a Latin hypercube over the log-hyperparameter box. If every
    start fails to factorize, the input training set is returned unchanged
    with ``ok=False`` and a warning.
    """
    if ts.n < 2:
        raise ValueError("need at least two training pairs to fit hyperparameters")
    if bounds is None:
        bounds = default_hyper_bounds(ts, optimize_dof)
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]

    def neg_lml(theta):
        try:
            return -log_marginal_likelihood(_unpack(theta, ts, optimize_dof))
        except (FactorizationError, FloatingPointError, ValueError):
            return 1e25

    starts = qmc.LatinHypercube(d=len(lo), seed=seed).random(n_starts)
    starts = lo + starts * (hi - lo)
    best_theta, best_val = None, np.inf
    for x0 in starts:
        f0 = neg_lml(x0)
        if f0 < best_val:
            best_theta, best_val = x0, f0
        res = optimize.minimize(neg_lml, x0, method="L-BFGS-B", bounds=bounds)
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = res.x, float(res.fun)
    if best_theta is None or best_val >= 1e25:
        warnings.warn("hyperparameter fit failed for every start; keeping previous kernel",
                      RuntimeWarning, stacklevel=2)
        return FitResult(ts, -np.inf, False, n_starts)
    return FitResult(_unpack(best_theta, ts, optimize_dof), -best_val, True, n_starts)
