"""Extended Kalman filter for continuous-time models sampled at a fixed period.

Prediction integrates the dynamics with fixed-step RK4 and propagates the
covariance with the first-order discretization::

    P <- (I + dt F) P (I + dt F)^T + (dt Gamma) Q (dt Gamma)^T

The update is the standard EKF update with ``P <- (I - K H) P``.

All functions broadcast over leading batch axes: a mean of shape ``(N, nx)``
with covariance ``(N, nx, nx)`` runs ``N`` independent filters at once.
Model callables must accept batched states and inputs likewise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class FilterNumericError(FloatingPointError):
    """Non-finite prediction or a non positive-definite innovation covariance.

    ``failed`` holds the batch indices that failed (empty for unbatched use).
    """

    def __init__(self, msg, failed=()):
        super().__init__(msg)
        self.failed = np.asarray(failed, dtype=int)


@dataclass(frozen=True)
class ContinuousModel:
    nx: int
    nu: int
    nz: int
    nv: int
    dynamics: Callable  # f(x, u) -> xdot
    measurement: Callable  # h(x, u) -> z
    process_jacobian: Callable  # F(x, u), continuous time, (nx, nx)
    measurement_jacobian: Callable  # H(x, u), (nz, nx)
    noise_map: np.ndarray  # Gamma, (nx, nv)
    dt: float
    substeps: int = 4

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if np.shape(self.noise_map) != (self.nx, self.nv):
            raise ValueError(f"noise_map must be {self.nx}x{self.nv}")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")

    def integrate(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Advance ``x`` by one period with RK4, ``substeps`` steps, ``u`` held."""
        h = self.dt / self.substeps
        f = self.dynamics
        for _ in range(self.substeps):
            k1 = f(x, u)
            k2 = f(x + 0.5 * h * k1, u)
            k3 = f(x + 0.5 * h * k2, u)
            k4 = f(x + h * k3, u)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return x


@dataclass(frozen=True)
class FilterState:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class NoiseSpec:
    Q: np.ndarray  # (nv, nv)
    R: np.ndarray  # (nz, nz)

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if np.any(np.diagonal(Q, axis1=-2, axis2=-1) < 0):
            raise ValueError("Q diagonal must be non-negative")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise ValueError("R must be positive definite") from None
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @classmethod
    def diagonal(cls, q, r) -> "NoiseSpec":
        return cls(np.diag(np.asarray(q, dtype=float)), np.diag(np.asarray(r, dtype=float)))


@dataclass(frozen=True)
class UpdateRecord:
    innovation: np.ndarray
    innovation_cov: np.ndarray
    gain: np.ndarray
    nis: np.ndarray | float


def _T(a):
    return np.swapaxes(a, -1, -2)


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + _T(P))


def predict(model: ContinuousModel, state: FilterState, u, noise: NoiseSpec) -> FilterState:
    """Time update over one sample period."""
    x = state.mean
    u = np.asarray(u, dtype=float)
    x_new = model.integrate(x, u)
    if not np.all(np.isfinite(x_new)):
        bad = np.flatnonzero(~np.all(np.isfinite(np.atleast_2d(x_new)), axis=-1))
        raise FilterNumericError("non-finite state prediction", bad if x.ndim > 1 else ())
    Fd = np.eye(model.nx) + model.dt * model.process_jacobian(x, u)
    Omega = model.dt * np.asarray(model.noise_map)
    P = Fd @ state.cov @ _T(Fd) + Omega @ noise.Q @ Omega.T
    return FilterState(x_new, symmetrize(P))


def _cholesky_batched(S: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    if S.ndim == 2:
        raise FilterNumericError("innovation covariance is not positive definite")
    bad = []
    for i, Si in enumerate(S.reshape(-1, *S.shape[-2:])):
        try:
            np.linalg.cholesky(Si)
        except np.linalg.LinAlgError:
            bad.append(i)
    raise FilterNumericError("innovation covariance is not positive definite", bad)


def update(model: ContinuousModel, state: FilterState, z, u, noise: NoiseSpec,
           joseph: bool = False) -> tuple[FilterState, UpdateRecord]:
    """Measurement update; returns the posterior and the innovation record."""
    x, P = state.mean, state.cov
    u = np.asarray(u, dtype=float)
    H = model.measurement_jacobian(x, u)
    e = np.asarray(z, dtype=float) - model.measurement(x, u)
    HP = H @ P
    S = symmetrize(HP @ _T(H) + noise.R)
    L = _cholesky_batched(S)
    # K^T = S^-1 H P via two triangular solves on the Cholesky factor
    Y = np.linalg.solve(L, HP)
    Kt = np.linalg.solve(_T(L), Y)
    K = _T(Kt)
    w = np.linalg.solve(L, e[..., None])[..., 0]
    nis = np.sum(w * w, axis=-1)
    x_new = x + (K @ e[..., None])[..., 0]
    I = np.eye(model.nx)
    if joseph:
        A = I - K @ H
        P_new = A @ P @ _T(A) + K @ noise.R @ Kt
    else:
        P_new = P - K @ HP
    rec = UpdateRecord(e, S, K, nis if np.ndim(nis) else float(nis))
    return FilterState(x_new, symmetrize(P_new)), rec
