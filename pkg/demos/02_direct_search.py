# # DIRECT global search
#
# DIRECT splits the unit box into rectangles and keeps dividing those that
# are potentially optimal for some Lipschitz constant. It needs no
# gradients, which suits the piecewise-flat acquisition surfaces of BO.

# In[1]:

import numpy as np

from kftune.direct import BoxBounds, DirectBudget, direct_minimize


def branin(x):
    a, b, c = 1.0, 5.1 / (4 * np.pi**2), 5 / np.pi
    r, s, t = 6.0, 10.0, 1 / (8 * np.pi)
    return a * (x[1] - b * x[0] ** 2 + c * x[0] - r) ** 2 + s * (1 - t) * np.cos(x[0]) + s


bounds = BoxBounds([-5.0, 0.0], [10.0, 15.0])

# The global minimum value of Branin is 0.397887, reached at three points.

# In[2]:

for n in (50, 200, 800):
    res = direct_minimize(branin, bounds, DirectBudget(max_evaluations=n))
    print(f"budget {n:4d}: f={res.fun:.6f} at {np.round(res.x, 4)} after {res.nfev} evaluations")

# The sampled points cluster around the three basins.

# In[3]:

res = direct_minimize(branin, bounds, DirectBudget(max_evaluations=800))
pts = np.array(res.points)
near = [np.sum(np.linalg.norm(pts - c, axis=1) < 1.0) for c in ([-np.pi, 12.275], [np.pi, 2.275], [9.42478, 2.475])]
print("points within 1.0 of each minimizer", near, "of", len(pts))
