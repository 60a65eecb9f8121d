"""
Working speed that changes during the test
==========================================

Speed is allowed a random intercept, linear trend and quadratic term over
the (per-person) position of each item. Ability is regressed on the three
speed components, which yields its covariances with them.

The trend and quadratic terms are nearly collinear over one test, so their
variances are weakly identified at realistic RT noise: the chain mixes
slowly and single runs can miss the generating values by a third or more.
"""

import numpy as np

from rtjoint import RunConfig, effective_sample_size, run_chain_quadratic, simulate_dataset, time_scale

rng = np.random.default_rng(11)
n, k = 400, 40
order = np.array([rng.permutation(k) + 1 for _ in range(n)])
x = time_scale(order, k)  # 0 at the first position, (k-1)/k at the last

sigma = np.array([[1.0, 0.1, -0.1, -0.08],
                  [0.1, 0.06, 0.0, 0.0],
                  [-0.1, 0.0, 0.11, 0.0],
                  [-0.08, 0.0, 0.0, 0.06]])
data, truth = simulate_dataset(n, k, rng=rng, speed_model="quadratic", x=x, sigma_p=sigma)

chain = run_chain_quadratic(data, RunConfig(xg=2000, seed=12), x=x)
est = chain.retained("MSP").mean(axis=0)
np.set_printoptions(precision=3, suppress=True)
print("estimated person covariance (ability, intercept, trend, quadratic)")
print(est)

draws = chain.retained("MSP")
for j, name in ((1, "intercept"), (2, "trend"), (3, "quadratic")):
    print(f"{name:10s} variance ESS {effective_sample_size(draws[:, j, j]):6.0f}")
