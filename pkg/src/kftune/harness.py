"""Monte-Carlo closed-loop simulation and the stochastic tuning objective.

Each run samples an initial truth state around the filter's prior, then
steps the closed loop: LQR thrust from the current EKF estimate, truth
propagation with random acceleration disturbances, a noisy measurement, and
an EKF predict/update. The N runs of one evaluation are stepped together as
a batch; runs are independent, so results do not depend on how the runs
are split across workers.

Random numbers come from one stream per ``(seed, evaluation, run)`` key,
from which the initial-state, disturbance and sensor-noise draws are taken
in a fixed order.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import ekf
from .consistency import (
    ConsistencyReport,
    average_series,
    chi2_bounds,
    consistency_test,
    log_ratio_cost,
)
from .skycrane import (
    NOISE_MAP,
    X_REF,
    LqrDesign,
    SkycraneParams,
    ThrustClamp,
    control,
    lqr_gain,
    skycrane_model,
)

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
MAX_EXCLUDED_FRACTION = 0.1

PARAMETERIZATIONS = ("1d", "2d", "3d")
# evaluation index reserved for validation runs, disjoint from tuning calls
VALIDATION_STREAM = 2**31


@dataclass(frozen=True)
class ExperimentConfig:
    process_var: tuple = (0.01, 0.01, 0.001)
    meas_var: tuple = (1.0, 0.5, 0.025, 0.0225)
    sensor_var: tuple | None = None  # truth sensor noise; None means meas_var
    truth_p0: tuple | None = None  # truth initial spread; None means p0
    n_runs: int = 200
    t_steps: int = 100
    dt: float = 0.1
    x0: tuple = tuple(X_REF)
    p0: tuple = (1.0, 0.1, 1.0, 0.1, 0.01, 0.01)
    cost: str = "nis"
    alpha: float = 0.05
    seed: int = 0
    parameterization: str = "1d"
    fixed_qz: float = 0.1
    discard_steps: int = 0
    crn: bool = False
    noise_convention: str = "continuous"
    joseph: bool = False
    threads: int = 1
    params: SkycraneParams = field(default_factory=SkycraneParams)
    q_con: tuple = (200.0, 15.0, 200.0, 15.0, 10000.0, 15.0)
    r_con: tuple = (0.01, 0.01)

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be at least 1")
        if self.t_steps < 1:
            raise ValueError("t_steps must be at least 1")
        if len(self.process_var) != 3 or min(self.process_var) < 0:
            raise ValueError("process_var needs three non-negative entries")
        if len(self.meas_var) != 4 or min(self.meas_var) <= 0:
            raise ValueError("meas_var needs four positive entries")
        if self.sensor_var is not None and (len(self.sensor_var) != 4 or min(self.sensor_var) < 0):
            raise ValueError("sensor_var needs four non-negative entries")
        if self.truth_p0 is not None and (len(self.truth_p0) != 6 or min(self.truth_p0) < 0):
            raise ValueError("truth_p0 needs six non-negative entries")
        if len(self.x0) != 6 or len(self.p0) != 6 or min(self.p0) < 0:
            raise ValueError("x0 and p0 need six entries, p0 non-negative")
        if self.cost not in ("nis", "nees"):
            raise ValueError("cost must be 'nis' or 'nees'")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")
        if self.noise_convention not in ("discrete", "continuous"):
            raise ValueError("noise_convention must be 'discrete' or 'continuous'")
        if not 0 <= self.discard_steps < self.t_steps:
            raise ValueError("discard_steps must lie in [0, t_steps)")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.meas_var)

    def lqr(self) -> LqrDesign:
        return lqr_gain(LqrDesign(np.diag(self.q_con), np.diag(self.r_con)), self.params)


def matched_process_noise(config: ExperimentConfig) -> np.ndarray:
    """Filter ``Q`` whose one-period covariance equals the truth disturbance's.

    The filter adds ``(dt Gamma) Q (dt Gamma)^T`` per step, so a per-step
    acceleration of variance ``q`` is matched by ``Q = q`` and white noise of
    density ``q`` by ``Q = q / dt``.
    """
    q = np.asarray(config.process_var, dtype=float)
    return q if config.noise_convention == "discrete" else q / config.dt


def process_noise_from_design(q, parameterization: str, fixed_qz: float = 0.1) -> np.ndarray:
    """Map a design point to the filter's diagonal ``(Q_xi, Q_z, Q_theta)``.

    ``1d``: ``Q_xi = Q_z = 10 Q_theta = q``; ``2d``: ``q = (Q_xi, Q_theta)``
    with ``Q_z`` fixed; ``3d``: all three free.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if parameterization == "1d":
        if q.size != 1:
            raise ValueError("1d parameterization takes one value")
        return np.array([q[0], q[0], 0.1 * q[0]])
    if parameterization == "2d":
        if q.size != 2:
            raise ValueError("2d parameterization takes two values")
        return np.array([q[0], fixed_qz, q[1]])
    if q.size != 3:
        raise ValueError("3d parameterization takes three values")
    return q.copy()


def _run_stream(config: ExperimentConfig, eval_index: int, run_index: int) -> np.random.Generator:
    key = [config.seed, 0 if config.crn else eval_index, run_index]
    return np.random.default_rng(np.random.SeedSequence(key))


def _draw_noise(config: ExperimentConfig, eval_index: int, runs: np.ndarray):
    T = config.t_steps
    init, w, v = [], [], []
    for r in runs:
        g = _run_stream(config, eval_index, int(r))
        init.append(g.standard_normal(6))
        w.append(g.standard_normal((T, 3)))
        v.append(g.standard_normal((T, 4)))
    return np.array(init), np.array(w), np.array(v)


@dataclass
class Rollout:
    """Arrays from a batch of closed-loop runs, indexed ``(run, step, ...)``.

    ``truth``/``estimate``/``cov`` include the initial condition at step 0;
    ``measurements``/``controls``/``nis``/``nees`` cover steps 1..T.
    """

    run_indices: np.ndarray
    truth: np.ndarray
    estimate: np.ndarray
    cov: np.ndarray
    measurements: np.ndarray
    controls: np.ndarray
    nees: np.ndarray
    nis: np.ndarray
    valid: np.ndarray
    clamp_count: int = 0

    def rmse(self, channels=(0, 2, 4)) -> np.ndarray:
        """Per-run RMS estimation error over steps 1..T for the given state channels."""
        err = self.estimate[:, 1:, channels] - self.truth[:, 1:, channels]
        return np.sqrt(np.mean(err**2, axis=1))


def _simulate_chunk(config: ExperimentConfig, Q: np.ndarray, runs: np.ndarray,
                    eval_index: int, design: LqrDesign) -> Rollout:
    p = config.params
    model = skycrane_model(p, config.dt)
    noise = ekf.NoiseSpec(np.diag(Q), config.R)
    N, T = runs.size, config.t_steps
    init, w, v = _draw_noise(config, eval_index, runs)
    x0 = np.asarray(config.x0, dtype=float)
    P0 = np.diag(np.asarray(config.p0, dtype=float))
    truth = np.empty((N, T + 1, 6))
    est = np.empty((N, T + 1, 6))
    cov = np.empty((N, T + 1, 6, 6))
    zs = np.empty((N, T, 4))
    us = np.empty((N, T, 2))
    nees_k = np.zeros((N, T))
    nis_k = np.zeros((N, T))
    valid = np.ones(N, dtype=bool)

    spread = config.p0 if config.truth_p0 is None else config.truth_p0
    truth[:, 0] = x0 + init * np.sqrt(np.asarray(spread, dtype=float))
    est[:, 0] = x0
    cov[:, 0] = P0
    state = ekf.FilterState(np.tile(x0, (N, 1)), np.tile(P0, (N, 1, 1)))
    x = truth[:, 0].copy()
    sensor = config.meas_var if config.sensor_var is None else config.sensor_var
    sqrt_r = np.sqrt(np.asarray(sensor, dtype=float))
    clamp = ThrustClamp()
    incr = disturbance_increments(config, w)

    for k in range(T):
        u = control(state.mean, design, p, clamp)
        x = model.integrate(x, u) + incr[:, k]
        z = model.measurement(x, u) + sqrt_r * v[:, k]
        bad = ~np.all(np.isfinite(x), axis=1) | np.any(np.abs(x) > DIVERGENCE_LIMIT, axis=1)
        state, rec, failed = _filter_step(model, state, z, u, noise, config.joseph, valid & ~bad)
        valid &= ~bad & ~failed
        truth[:, k + 1] = x
        est[:, k + 1] = state.mean
        cov[:, k + 1] = state.cov
        zs[:, k] = z
        us[:, k] = u
        nis_k[:, k] = np.where(valid, rec, 0.0)
        nees_k[:, k] = _nees_masked(state.mean - x, state.cov, valid)
        if not valid.all():
            # freeze failed runs at a harmless state so the batch stays finite
            x = np.where(valid[:, None], x, x0)
            state = ekf.FilterState(np.where(valid[:, None], state.mean, x0),
                                    np.where(valid[:, None, None], state.cov, P0))
    return Rollout(runs, truth, est, cov, zs, us, nees_k, nis_k, valid, clamp.count)


def disturbance_increments(config: ExperimentConfig, w: np.ndarray) -> np.ndarray:
    """Map standard-normal draws ``(N, T, 3)`` to state increments ``(N, T, 6)``.

    ``discrete``: a per-step acceleration with the configured variance held
    over the period, entering the rates as ``dt * w``.
    ``continuous``: white acceleration noise whose spectral density is the
    configured value; the rate increment over one period has variance
    ``q dt``, again applied to the rates.
    """
    dt = config.dt
    q = np.asarray(config.process_var, dtype=float)
    if config.noise_convention == "discrete":
        return (dt * np.sqrt(q) * w) @ NOISE_MAP.T
    return (np.sqrt(q * dt) * w) @ NOISE_MAP.T


def _filter_step(model, state, z, u, noise, joseph, active):
    """One predict/update for the whole batch, isolating runs that fail."""
    failed = np.zeros(active.size, dtype=bool)
    idx = np.flatnonzero(active)
    while True:
        sub = ekf.FilterState(state.mean[idx], state.cov[idx])
        try:
            pred = ekf.predict(model, sub, u[idx], noise)
            post, rec = ekf.update(model, pred, z[idx], u[idx], noise, joseph)
            break
        except ekf.FilterNumericError as exc:
            if exc.failed.size == 0:
                raise
            failed[idx[exc.failed]] = True
            idx = np.delete(idx, exc.failed)
    mean = state.mean.copy()
    P = state.cov.copy()
    mean[idx] = post.mean
    P[idx] = post.cov
    nis = np.zeros(active.size)
    nis[idx] = rec.nis
    return ekf.FilterState(mean, P), nis, failed


def _nees_masked(err, P, valid):
    out = np.zeros(err.shape[0])
    if valid.any():
        L = np.linalg.cholesky(P[valid])
        y = np.linalg.solve(L, err[valid][..., None])[..., 0]
        out[valid] = np.sum(y * y, axis=-1)
    return out


def simulate(config: ExperimentConfig, Q=None, run_indices=None, eval_index: int = 0,
             design: LqrDesign | None = None) -> Rollout:
    """Closed-loop rollouts with the EKF assuming process noise ``Q``.

    ``Q`` is the filter's diagonal ``(Q_xi, Q_z, Q_theta)``; it defaults to
    the matched value.
    """
    Q = matched_process_noise(config) if Q is None else np.asarray(Q, dtype=float)
    runs = np.arange(config.n_runs) if run_indices is None else np.asarray(run_indices, dtype=int)
    design = design or config.lqr()
    if config.threads <= 1 or runs.size < 2:
        return _simulate_chunk(config, Q, runs, eval_index, design)
    chunks = [c for c in np.array_split(runs, min(config.threads, runs.size)) if c.size]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(lambda c: _simulate_chunk(config, Q, c, eval_index, design), chunks))
    return Rollout(
        runs,
        *(np.concatenate([getattr(r, name) for r in parts])
          for name in ("truth", "estimate", "cov", "measurements", "controls", "nees", "nis", "valid")),
        clamp_count=sum(r.clamp_count for r in parts),
    )


def simulate_truth(config: ExperimentConfig, run_index: int, Q=None, eval_index: int = 0) -> Rollout:
    """Single closed-loop run: truth trajectory, measurements and thrust history."""
    return simulate(replace(config, threads=1), Q, [run_index], eval_index)


@dataclass
class Evaluation:
    cost: float
    report: ConsistencyReport
    nees_report: ConsistencyReport
    nis_report: ConsistencyReport
    rmse_median: np.ndarray
    n_excluded: int
    Q: np.ndarray


def _reports(config: ExperimentConfig, roll: Rollout):
    keep = roll.valid
    n = int(keep.sum())
    out = {}
    for stat, data, dof in (("nees", roll.nees, 6), ("nis", roll.nis, 4)):
        series = average_series(data[keep], dof, n)
        rep = consistency_test(series, chi2_bounds(config.alpha, n, dof), stat)
        rep.cost = log_ratio_cost(series, config.discard_steps)
        out[stat] = rep
    return out["nees"], out["nis"]


def evaluate_candidate(q, config: ExperimentConfig, eval_index: int = 0,
                       design: LqrDesign | None = None) -> Evaluation:
    """Cost and consistency report for design point ``q``.

    Runs whose filter fails numerically or whose truth diverges are
    excluded; if more than 10% are excluded the cost is ``+inf``.
    """
    Q = process_noise_from_design(q, config.parameterization, config.fixed_qz)
    roll = simulate(config, Q, None, eval_index, design)
    n_bad = int((~roll.valid).sum())
    if n_bad:
        log.warning("excluded %d of %d runs at q=%s", n_bad, roll.valid.size, q)
    if n_bad == roll.valid.size:
        raise FloatingPointError("every Monte-Carlo run failed")
    nees_rep, nis_rep = _reports(config, roll)
    rep = nis_rep if config.cost == "nis" else nees_rep
    cost = rep.cost
    if n_bad > MAX_EXCLUDED_FRACTION * roll.valid.size:
        cost = math.inf
    rmse = np.median(roll.rmse()[roll.valid], axis=0)
    return Evaluation(cost, rep, nees_rep, nis_rep, rmse, n_bad, Q)


class TuningObjective:
    """Stochastic objective for TPBO: each call draws fresh Monte-Carlo streams.

    Calls are numbered; the number keys the random streams, so a fresh
    objective reproduces the same sequence of costs.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.design = config.lqr()
        self.calls = 0
        self.history: list[Evaluation] = []

    def __call__(self, q) -> float:
        ev = evaluate_candidate(q, self.config, self.calls, self.design)
        self.calls += 1
        self.history.append(ev)
        return ev.cost


def rmse_validation(q_list, config: ExperimentConfig, n_repeats: int = 50,
                    eval_index: int = 0) -> list[dict]:
    """Distribution of per-run RMSE of (xi, z, theta) for each candidate."""
    cfg = replace(config, n_runs=n_repeats)
    design = cfg.lqr()
    rows = []
    for i, q in enumerate(q_list):
        Q = process_noise_from_design(q, cfg.parameterization, cfg.fixed_qz)
        roll = simulate(cfg, Q, None, eval_index, design)
        r = roll.rmse()[roll.valid]
        q25, med, q75 = np.percentile(r, [25, 50, 75], axis=0)
        for j, name in enumerate(("xi", "z", "theta")):
            rows.append({"candidate": i, "channel": name, "median": float(med[j]),
                         "q25": float(q25[j]), "q75": float(q75[j]),
                         "n_runs": int(r.shape[0])})
    return rows


REPLAY_HEADER = ["t", "z1", "z2", "z3", "z4", "u1", "u2"]


def write_replay_csv(path, roll: Rollout, run: int = 0, dt: float = 0.1) -> None:
    """Write one run's measurements and thrusts in the replay schema."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPLAY_HEADER)
        for k in range(roll.measurements.shape[1]):
            w.writerow([repr((k + 1) * dt)]
                       + [repr(float(a)) for a in roll.measurements[run, k]]
                       + [repr(float(a)) for a in roll.controls[run, k]])


class ReplayFormatError(ValueError):
    pass


def read_replay_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read ``t, z1..z4, u1, u2`` rows; raises ReplayFormatError naming the row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ReplayFormatError("empty measurement file")
    if [c.strip() for c in rows[0]] != REPLAY_HEADER:
        raise ReplayFormatError(f"row 1: header must be {','.join(REPLAY_HEADER)}")
    data = []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(REPLAY_HEADER):
            raise ReplayFormatError(f"row {i}: expected {len(REPLAY_HEADER)} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise ReplayFormatError(f"row {i}: non-numeric field") from None
        if not all(math.isfinite(a) for a in vals):
            raise ReplayFormatError(f"row {i}: non-finite field")
        data.append(vals)
    if not data:
        raise ReplayFormatError("no data rows")
    a = np.array(data)
    return a[:, 0], a[:, 1:5], a[:, 5:7]


def replay(config: ExperimentConfig, measurements: np.ndarray, controls: np.ndarray, Q=None):
    """Run the EKF over recorded data; returns the per-step NIS series."""
    Q = matched_process_noise(config) if Q is None else np.asarray(Q, dtype=float)
    model = skycrane_model(config.params, config.dt)
    noise = ekf.NoiseSpec(np.diag(Q), config.R)
    x0 = np.asarray(config.x0, dtype=float)
    state = ekf.FilterState(x0[None], np.diag(np.asarray(config.p0, dtype=float))[None])
    out = np.empty(len(measurements))
    for k, (z, u) in enumerate(zip(measurements, controls)):
        state = ekf.predict(model, state, u[None], noise)
        state, rec = ekf.update(model, state, z[None], u[None], noise, config.joseph)
        out[k] = rec.nis[0]
    return out
