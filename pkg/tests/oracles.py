"""Independent reference computations shared by the test modules."""

import numpy as np

from kftune import ekf
from kftune.ekf import ContinuousModel, FilterState, NoiseSpec


def linear_gaussian_nees(n_runs=200, t_steps=100, seed=0, dt=0.1):
    """Per-run NEES ``(N, T)`` of a perfectly specified linear-Gaussian filter.

    The model is two double integrators with a position/velocity sensor; the
    truth is propagated with the exact discrete transition and noise that
    the filter assumes.
    """
    rng = np.random.default_rng(seed)
    A = np.zeros((4, 4))
    A[0, 1] = A[2, 3] = 1.0
    H = np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0], [0, 1.0, 0, 0.5]])
    G = np.array([[0.0, 0], [1.0, 0], [0, 0], [0, 1.0]])
    Q = np.diag([2.0, 0.5])
    R = np.diag([0.3, 0.2, 0.1])
    model = ContinuousModel(
        4, 1, 3, 2,
        dynamics=lambda x, u: x @ A.T,
        measurement=lambda x, u: x @ H.T,
        process_jacobian=lambda x, u: np.broadcast_to(A, x.shape[:-1] + (4, 4)),
        measurement_jacobian=lambda x, u: np.broadcast_to(H, x.shape[:-1] + (3, 4)),
        noise_map=G, dt=dt,
    )
    noise = NoiseSpec(Q, R)
    Phi = np.eye(4) + dt * A
    P0 = np.diag([1.0, 0.5, 1.0, 0.5])
    x = rng.multivariate_normal(np.zeros(4), P0, size=n_runs)
    state = FilterState(np.zeros((n_runs, 4)), np.tile(P0, (n_runs, 1, 1)))
    u = np.zeros((n_runs, 1))
    out = np.empty((n_runs, t_steps))
    for k in range(t_steps):
        x = x @ Phi.T + dt * rng.multivariate_normal(np.zeros(2), Q, size=n_runs) @ G.T
        z = x @ H.T + rng.multivariate_normal(np.zeros(3), R, size=n_runs)
        state = ekf.predict(model, state, u, noise)
        state, _ = ekf.update(model, state, z, u, noise)
        e = x - state.mean
        out[:, k] = np.einsum("ni,nij,nj->n", e, np.linalg.inv(state.cov), e)
    return out
