"""Planar Skycrane descent-stage model: dynamics, sensors, Jacobians and LQR.

State ``x = (xi, xi_dot, z, z_dot, theta, theta_dot)``, input ``u = (T1, T2)``
thrusts in newtons. Two thrusters sit at the bottom corners canted by
``beta`` from the body z axis. Forces are thrust, gravity and a quadratic
drag whose reference area depends on the angle of attack.

Sensors: position ``xi``, altitude ``z``, pitch rate and horizontal
acceleration (accelerometer).

All functions broadcast over leading batch axes of ``x`` and ``u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import linalg

from .ekf import ContinuousModel

# drag and its derivatives are zeroed below this airspeed
V_EPS = 1e-9


@dataclass(frozen=True)
class SkycraneParams:
    rho: float = 0.02  # kg/m^3
    g: float = 3.711  # m/s^2
    beta: float = math.pi / 4  # rad
    c_d: float = 0.2
    m_f: float = 390.0  # kg
    w_f: float = 1.0  # m
    h_f: float = 0.5  # m
    d_f: float = 1.0  # m
    m_b: float = 1510.0  # kg
    w_b: float = 3.2  # m
    h_b: float = 2.5  # m
    d_b: float = 2.9  # m
    h_cm: float = 0.9421  # m

    def __post_init__(self):
        for name in ("rho", "g", "c_d", "m_f", "w_f", "h_f", "d_f", "m_b", "w_b", "h_b", "d_b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.beta < math.pi / 2:
            raise ValueError("beta must lie in (0, pi/2)")

    @property
    def mass(self) -> float:
        return self.m_b + self.m_f

    @property
    def inertia(self) -> float:
        """Pitch moment of inertia of the two boxes."""
        return (self.m_b * (self.w_b**2 + self.h_b**2) + self.m_f * (self.w_f**2 + self.h_f**2)) / 12.0

    @property
    def area_side(self) -> float:
        return self.h_b * self.d_b + self.h_f * self.d_f

    @property
    def area_bottom(self) -> float:
        return self.w_b * self.d_b + self.w_f * self.d_f

    @property
    def moment_arm(self) -> float:
        """Pitch torque per unit of thrust difference T1 - T2."""
        return math.cos(self.beta) * self.w_b / 2.0 - math.sin(self.beta) * self.h_cm

    @property
    def t_nom(self) -> float:
        """Per-thruster hover thrust."""
        return 0.5 * self.g * self.mass / math.cos(self.beta)

    @property
    def u_nom(self) -> np.ndarray:
        return np.full(2, self.t_nom)

    @classmethod
    def from_mapping(cls, values: dict) -> "SkycraneParams":
        names = {f.name for f in fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ValueError(f"unknown Skycrane parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in values.items()})


X_REF = np.array([0.0, 0.0, 20.0, 0.0, 0.0, 0.0])

# maps (xi_ddot, z_ddot, theta_ddot) disturbances into the state derivative
NOISE_MAP = np.array([
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0],
    [0.0, 0.0, 1.0],
])


def _drag(x, p: SkycraneParams):
    """Drag forces and the pieces needed for their derivatives."""
    xd, zd, th = x[..., 1], x[..., 3], x[..., 4]
    V = np.hypot(xd, zd)
    moving = V > V_EPS
    alpha = np.arctan2(zd, xd)
    a = th - alpha
    A = p.area_side * np.cos(a) + p.area_bottom * np.sin(a)
    dA = -p.area_side * np.sin(a) + p.area_bottom * np.cos(a)
    c = 0.5 * p.c_d * p.rho
    Vs = np.where(moving, V, 1.0)
    return c, A, dA, np.where(moving, V, 0.0), Vs, moving


def dynamics(x, u, w=None, p: SkycraneParams | None = None) -> np.ndarray:
    """State derivative; ``w`` is an additive (xi, z, theta) acceleration disturbance."""
    p = p or SkycraneParams()
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    T1, T2 = u[..., 0], u[..., 1]
    xd, zd, th, thd = x[..., 1], x[..., 3], x[..., 4], x[..., 5]
    c, A, _, V, _, _ = _drag(x, p)
    fd_xi = c * A * xd * V
    fd_z = c * A * zd * V
    m = p.mass
    xdd = (T1 * np.sin(th + p.beta) + T2 * np.sin(th - p.beta) - fd_xi) / m
    zdd = (T1 * np.cos(th + p.beta) + T2 * np.cos(th - p.beta) - fd_z) / m - p.g
    thdd = (T1 - T2) * p.moment_arm / p.inertia
    out = np.stack([xd, xdd, zd, zdd, thd, thdd], axis=-1)
    if w is not None:
        out = out + np.asarray(w, dtype=float) @ NOISE_MAP.T
    return out


def measure(x, u, p: SkycraneParams | None = None) -> np.ndarray:
    """Noise-free sensor vector ``(xi, z, theta_dot, xi_ddot)``."""
    x = np.asarray(x, dtype=float)
    acc = dynamics(x, u, None, p)[..., 1]
    return np.stack([x[..., 0], x[..., 2], x[..., 5], acc], axis=-1)


def process_jacobian(x, u, p: SkycraneParams | None = None) -> np.ndarray:
    """Continuous-time Jacobian of ``dynamics`` with respect to the state."""
    p = p or SkycraneParams()
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    T1, T2 = u[..., 0], u[..., 1]
    xd, zd, th = x[..., 1], x[..., 3], x[..., 4]
    c, A, dA, V, Vs, moving = _drag(x, p)
    m = p.mass

    # F_xi = c A xd V, F_z = c A zd V, A depends on theta - atan2(zd, xd)
    dfxi_dxd = c * (dA * xd * zd / Vs + A * (V + xd * xd / Vs))
    dfxi_dzd = c * (-dA * xd * xd / Vs + A * xd * zd / Vs)
    dfxi_dth = c * dA * xd * V
    dfz_dxd = c * (dA * zd * zd / Vs + A * zd * xd / Vs)
    dfz_dzd = c * (-dA * xd * zd / Vs + A * (V + zd * zd / Vs))
    dfz_dth = c * dA * zd * V
    zero = np.zeros_like(xd)
    dfxi_dxd, dfxi_dzd, dfxi_dth, dfz_dxd, dfz_dzd, dfz_dth = (
        np.where(moving, t, zero)
        for t in (dfxi_dxd, dfxi_dzd, dfxi_dth, dfz_dxd, dfz_dzd, dfz_dth)
    )

    F = np.zeros(np.broadcast_shapes(x.shape[:-1], u.shape[:-1]) + (6, 6))
    F[..., 0, 1] = 1.0
    F[..., 2, 3] = 1.0
    F[..., 4, 5] = 1.0
    F[..., 1, 1] = -dfxi_dxd / m
    F[..., 1, 3] = -dfxi_dzd / m
    F[..., 1, 4] = (T1 * np.cos(th + p.beta) + T2 * np.cos(th - p.beta) - dfxi_dth) / m
    F[..., 3, 1] = -dfz_dxd / m
    F[..., 3, 3] = -dfz_dzd / m
    F[..., 3, 4] = (-T1 * np.sin(th + p.beta) - T2 * np.sin(th - p.beta) - dfz_dth) / m
    return F


def control_jacobian(x, p: SkycraneParams | None = None) -> np.ndarray:
    """Jacobian of ``dynamics`` with respect to the thrusts."""
    p = p or SkycraneParams()
    th = np.asarray(x, dtype=float)[..., 4]
    m = p.mass
    U = np.zeros(th.shape + (6, 2))
    U[..., 1, 0] = np.sin(th + p.beta) / m
    U[..., 1, 1] = np.sin(th - p.beta) / m
    U[..., 3, 0] = np.cos(th + p.beta) / m
    U[..., 3, 1] = np.cos(th - p.beta) / m
    U[..., 5, 0] = p.moment_arm / p.inertia
    U[..., 5, 1] = -p.moment_arm / p.inertia
    return U


def measurement_jacobian(x, u, p: SkycraneParams | None = None) -> np.ndarray:
    """Jacobian of ``measure``; the accelerometer row is the xi_ddot row of F."""
    F = process_jacobian(x, u, p)
    H = np.zeros(F.shape[:-2] + (4, 6))
    H[..., 0, 0] = 1.0
    H[..., 1, 2] = 1.0
    H[..., 2, 5] = 1.0
    H[..., 3, :] = F[..., 1, :]
    return H


def skycrane_model(p: SkycraneParams | None = None, dt: float = 0.1, substeps: int = 4) -> ContinuousModel:
    """Adapter exposing the Skycrane as a filterable continuous-time model."""
    p = p or SkycraneParams()
    return ContinuousModel(
        nx=6, nu=2, nz=4, nv=3,
        dynamics=lambda x, u: dynamics(x, u, None, p),
        measurement=lambda x, u: measure(x, u, p),
        process_jacobian=lambda x, u: process_jacobian(x, u, p),
        measurement_jacobian=lambda x, u: measurement_jacobian(x, u, p),
        noise_map=NOISE_MAP,
        dt=dt,
        substeps=substeps,
    )


# reference gain (rows: thrusters, columns: states)
REFERENCE_K_LIN = np.array([
    [100.0, 406.575, 100.0, 519.086, 3053.285, 3140.470],
    [-100.0, -406.575, 100.0, 519.086, -3053.285, -3140.470],
])


class RiccatiError(RuntimeError):
    pass


@dataclass(frozen=True)
class LqrDesign:
    Q_con: np.ndarray = field(default_factory=lambda: np.diag([200.0, 15.0, 200.0, 15.0, 10000.0, 15.0]))
    R_con: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01]))
    K_lin: np.ndarray | None = None
    x_ref: np.ndarray = field(default_factory=lambda: X_REF.copy())
    u_nom: np.ndarray | None = None
    S_con: np.ndarray | None = None
    residual: float = float("nan")

    def __post_init__(self):
        Q = np.asarray(self.Q_con, dtype=float)
        R = np.asarray(self.R_con, dtype=float)
        if Q.shape != (6, 6) or R.shape != (2, 2):
            raise ValueError("Q_con must be 6x6 and R_con 2x2")
        if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < 0:
            raise ValueError("Q_con must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (R + R.T))) <= 0:
            raise ValueError("R_con must be positive definite")
        object.__setattr__(self, "Q_con", Q)
        object.__setattr__(self, "R_con", R)

    def closed_loop_matrix(self, p: SkycraneParams | None = None) -> np.ndarray:
        F, U = linearize(self.x_ref, self.u_nom, p)
        return F - U @ self.K_lin


def linearize(x_ref=None, u_nom=None, p: SkycraneParams | None = None):
    """State and input Jacobians at the trim point."""
    p = p or SkycraneParams()
    x_ref = X_REF if x_ref is None else np.asarray(x_ref, dtype=float)
    u_nom = p.u_nom if u_nom is None else np.asarray(u_nom, dtype=float)
    return process_jacobian(x_ref, u_nom, p), control_jacobian(x_ref, p)


def care_residual(F, U, Q, R, S) -> np.ndarray:
    return F.T @ S + S @ F - S @ U @ np.linalg.solve(R, U.T @ S) + Q


def lqr_gain(design: LqrDesign | None = None, p: SkycraneParams | None = None,
             tol: float = 1e-8) -> LqrDesign:
    """Solve the continuous algebraic Riccati equation at trim and return the gain.

    The Hamiltonian-pencil solution is polished with Newton (Kleinman)
    steps until the residual max-norm, relative to ``max(1, |Q|)``, is
    below ``tol``.
    """
    p = p or SkycraneParams()
    design = design or LqrDesign()
    u_nom = p.u_nom if design.u_nom is None else np.asarray(design.u_nom, dtype=float)
    F, U = linearize(design.x_ref, u_nom, p)
    Q, R = design.Q_con, design.R_con
    try:
        S = linalg.solve_continuous_are(F, U, Q, R)
    except (linalg.LinAlgError, ValueError) as exc:
        raise RiccatiError(f"Riccati solve failed: {exc}") from exc
    scale = max(1.0, float(np.max(np.abs(Q))))
    for _ in range(20):
        res = float(np.max(np.abs(care_residual(F, U, Q, R, S)))) / scale
        if res < tol:
            break
        K = np.linalg.solve(R, U.T @ S)
        Acl = F - U @ K
        S = linalg.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        S = 0.5 * (S + S.T)
    else:
        raise RiccatiError(f"Riccati residual {res:.3g} did not reach {tol:g}")
    K = np.linalg.solve(R, U.T @ S)
    if np.max(np.linalg.eigvals(F - U @ K).real) >= 0:
        raise RiccatiError("LQR gain does not stabilize the linearization")
    return replace(design, K_lin=K, u_nom=u_nom, S_con=S, residual=res)


@dataclass
class ThrustClamp:
    """Counts how often the thrust command saturates."""

    count: int = 0


def control(x_est, design: LqrDesign, p: SkycraneParams | None = None,
            clamp: ThrustClamp | None = None) -> np.ndarray:
    """LQR feedback about trim, each thrust clipped to ``[0, 2 T_nom]``."""
    p = p or SkycraneParams()
    dx = np.asarray(x_est, dtype=float) - design.x_ref
    u = design.u_nom - dx @ design.K_lin.T
    lo, hi = 0.0, 2.0 * p.t_nom
    if clamp is not None:
        clamp.count += int(np.sum((u < lo) | (u > hi)))
    return np.clip(u, lo, hi)


def gain_discrepancy(K: np.ndarray, reference: np.ndarray = REFERENCE_K_LIN) -> list[dict]:
    """Elementwise comparison of a computed gain with a reference gain."""
    rows = []
    for i in range(K.shape[0]):
        for j in range(K.shape[1]):
            ref = float(reference[i, j])
            val = float(K[i, j])
            rel = abs(val - ref) / abs(ref) if ref != 0 else abs(val)
            rows.append({"row": i, "col": j, "computed": val, "reference": ref,
                         "rel_delta": rel})
    return rows
