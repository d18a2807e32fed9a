# # Planar Skycrane: trim, Jacobians and LQR hover control
#
# The lander state is (xi, xi_dot, z, z_dot, theta, theta_dot). Two thrusters
# canted by beta hold it at 20 m altitude. The filter sees horizontal and
# vertical position, pitch, and a horizontal accelerometer.

# In[1]:

import numpy as np

from kftune.skycrane import (
    X_REF,
    LqrDesign,
    SkycraneParams,
    control,
    dynamics,
    gain_discrepancy,
    lqr_gain,
    process_jacobian,
    skycrane_model,
)

p = SkycraneParams()
print("hover thrust per thruster", round(p.t_nom, 2), "N")
print("trim derivative", dynamics(X_REF, p.u_nom, np.zeros(3), p))

# Linearized dynamics at trim. Only pitch couples into horizontal motion.

# In[2]:

np.set_printoptions(precision=3, suppress=True)
print(process_jacobian(X_REF, p.u_nom, p))

# The continuous-time LQR gain, compared with a reference gain.

# In[3]:

d = lqr_gain(LqrDesign(), p)
print(d.K_lin)
worst = max(gain_discrepancy(d.K_lin), key=lambda r: r["rel_delta"])
print("largest relative difference", worst)
print("closed-loop eigenvalues", np.sort_complex(np.linalg.eigvals(d.closed_loop_matrix(p))))

# Closed-loop recovery from a 2 m altitude and 0.05 rad pitch offset.

# In[4]:

m = skycrane_model(p, 0.1)
x = np.array([0.0, 0.0, 22.0, 0.0, 0.05, 0.0])
for k in range(1, 201):
    x = m.integrate(x, control(x, d, p))
    if k % 25 == 0:
        print(f"t={k * 0.1:4.1f}s  z={x[2]:.3f}  theta={x[4]:+.4f}")
