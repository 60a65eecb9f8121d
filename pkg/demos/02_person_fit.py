"""
Flagging aberrant response-time patterns
========================================

Ten test takers answer the second half of the test by rapid guessing: very
short times and chance-level accuracy. The residual analysis should flag
their RT patterns while leaving the rest mostly alone.
"""

import numpy as np

from rtjoint import ObservedData, RunConfig, run_chain, simulate_dataset

rng = np.random.default_rng(3)
data, truth = simulate_dataset(300, 30, rng=rng)
y, rt = data.y.copy(), data.rt.copy()
cheaters = np.arange(10)
y[np.ix_(cheaters, np.arange(15, 30))] = rng.uniform(size=(10, 15)) < 0.25
rt[np.ix_(cheaters, np.arange(15, 30))] = np.log(rng.uniform(1, 3, size=(10, 15)))
data = ObservedData(y=y, rt=rt)

###############################################################################
# Fit statistics are accumulated as posterior means once ``xgresid`` draws
# have passed.

chain = run_chain(data, RunConfig(xg=1500, residual=True, xgresid=500, seed=4))
fit = chain.fit

flag_rt = fit.EAPCP1 >= 0.95
print("RT patterns flagged with 95% posterior probability")
print("  rapid guessers:", flag_rt[cheaters].sum(), "of", cheaters.size)
print("  others        :", flag_rt[10:].sum(), "of", flag_rt.size - 10)
print("joint RA and RT flag among guessers:", np.round(fit.EAPCP3[cheaters], 2))

###############################################################################
# Cell-level residuals point at the offending responses.

extreme = fit.EAPresid >= 0.95
print("extreme RT residuals: guessers", extreme[cheaters].mean().round(3),
      "others", extreme[10:].mean().round(3))
