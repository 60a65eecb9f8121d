"""
Recovering item and person parameters from simulated data
=========================================================

Simulate responses and log response times from the joint model, fit it by
Gibbs sampling and compare the posterior means with the generating values.
"""

import numpy as np

from rtjoint import RunConfig, run_chain, simulate_dataset
from rtjoint.simulate import person_covariance

# 500 test takers, 20 items, ability and speed correlated at 0.4
data, truth = simulate_dataset(500, 20, rng=0, sigma_p=person_covariance(rho=0.4))
print("RA matrix", data.y.shape, "proportion correct", data.y.mean().round(3))

###############################################################################
# Three thousand sweeps, the first 10% discarded as burn-in.

chain = run_chain(data, RunConfig(xg=3000, seed=1))
pm = chain.post_means

for label, true, est in (
    ("difficulty", truth.items.b, pm["Item.Difficulty"]),
    ("time intensity", truth.items.lam, pm["Time.Intensity"]),
    ("ability", truth.persons.theta, pm["Person.Ability"]),
):
    print(f"{label:15s} corr {np.corrcoef(true, est)[0, 1]:.3f}")

###############################################################################
# The ability-speed correlation comes from the person covariance draws.

rho = chain.person_correlation()[chain.config.n_burnin:]
print(f"rho EAP {rho.mean():.3f} (generated 0.4, sample "
      f"{np.corrcoef(truth.persons.theta, truth.persons.zeta)[0, 1]:.3f})")
