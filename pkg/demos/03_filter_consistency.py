# # NEES/NIS consistency of a Kalman filter
#
# A filter is consistent when its errors match its own covariance. Averaged
# over N Monte-Carlo runs, N times the mean NEES is chi-square with N*n_x dof,
# giving a two-sided acceptance band per time step.

# In[1]:

import numpy as np

from kftune.consistency import average_series, chi2_bounds, consistency_test, j_nis, nees, nis

rng = np.random.default_rng(0)

# A constant-velocity target with position measurements.

# In[2]:

dt, n_runs, t_steps = 0.1, 200, 100
F = np.array([[1.0, dt], [0.0, 1.0]])
G = np.array([[0.5 * dt**2], [dt]])
H = np.array([[1.0, 0.0]])
q_true, r = 0.5, 0.04


def run(q_filter):
    ee, ii = np.zeros((n_runs, t_steps)), np.zeros((n_runs, t_steps))
    Qd = q_filter * G @ G.T
    for i in range(n_runs):
        x = rng.normal(size=2)
        m, P = np.zeros(2), np.eye(2)
        for k in range(t_steps):
            x = F @ x + G[:, 0] * np.sqrt(q_true) * rng.normal()
            z = H @ x + np.sqrt(r) * rng.normal(size=1)
            m, P = F @ m, F @ P @ F.T + Qd
            S = H @ P @ H.T + r
            e = z - H @ m
            K = P @ H.T / S
            m, P = m + K @ e, (np.eye(2) - K @ H) @ P
            ee[i, k], ii[i, k] = nees(x - m, P), nis(e, S)
    return ee, ii


# A matched filter, one that underestimates Q by 100 and one that
# overestimates it by 100.

# In[3]:

b_nees, b_nis = chi2_bounds(0.05, n_runs, 2), chi2_bounds(0.05, n_runs, 1)
for label, q in (("matched", q_true), ("Q/100", q_true / 100), ("Q*100", q_true * 100)):
    ee, ii = run(q)
    r_nees = consistency_test(average_series(ee, 2), b_nees, "nees")
    s_nis = average_series(ii, 1)
    r_nis = consistency_test(s_nis, b_nis, "nis")
    print(f"{label:8s} NEES {r_nees.verdict:12s} ({r_nees.pass_fraction:.2f} in band)  "
          f"NIS {r_nis.verdict:12s}  J_NIS={j_nis(s_nis):.3f}")
print(f"NEES band [{b_nees.lower:.3f}, {b_nees.upper:.3f}] around 2")
