# # Student-t process surrogate and expected improvement
#
# A Student-t process (TP) behaves like a Gaussian process whose predictive
# spread grows when the data are surprising. Here we fit one to a noisy 1D
# cost curve over log10(q), inspect the posterior, and let expected
# improvement pick the next sample.

# In[1]:

import numpy as np

from kftune.acquisition import expected_improvement, propose_next
from kftune.direct import BoxBounds, DirectBudget
from kftune.stp import Surrogate, fit_hyperparameters, make_training_set

rng = np.random.default_rng(3)


def cost(s):
    # s = log10(q); smallest near q = 0.1
    return (s + 1.0) ** 2 + 0.3 * np.sin(4 * s) + 0.05 * rng.normal(size=np.shape(s))


# Eight samples spread over the design interval [-2, 0].

# In[2]:

x = np.linspace(-2.0, 0.0, 8)
y = cost(x)
ts = make_training_set(x, y, dof=5.0, lower=[-2.0], upper=[0.0], center=True)
fit = fit_hyperparameters(ts, seed=0)
ts = fit.training_set
print("length scale", ts.kernel.length_scales, "signal variance", round(ts.kernel.signal_variance, 4))
print("log marginal likelihood", round(fit.log_likelihood, 3))

# The posterior reproduces the samples and widens between them. The
# predictive dof is the prior dof plus the number of samples.

# In[3]:

sur = Surrogate(ts)
grid = np.linspace(-2.0, 0.0, 9)[:, None]
mean, scale = sur.predict_many(grid)
for q, m, s in zip(grid[:, 0], mean, scale):
    print(f"log10 q={q:6.3f}  mean={m:7.3f}  sd={np.sqrt(s):6.3f}")
print("predictive dof", sur.predict(grid[0]).dof)

# Expected improvement over the best observed value, then a DIRECT search
# for its maximizer.

# In[4]:

best = y.min()
ei = [expected_improvement(sur.predict(q), best) for q in grid]
print("EI on grid", np.round(ei, 4))
prop = propose_next(ts, BoxBounds([-2.0], [0.0]), DirectBudget(max_evaluations=400))
print("next sample", prop.point, "EI", round(prop.ei, 5))
