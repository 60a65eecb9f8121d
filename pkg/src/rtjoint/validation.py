"""Sampler self-consistency checks (getting it right).

The marginal-conditional simulator draws parameters from the prior and
data given parameters. The successive-conditional simulator alternates one
Gibbs sweep with regenerating the data from the current parameters. Both
target the same joint distribution of parameters and data, so any test
function of the parameters must have equal expectations under the two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chains import effective_sample_size
from .gibbs import GibbsSampler
from .model import ItemPrior, ObservedData, PopulationPrior, RunConfig
from .simulate import draw_from_prior, generate_responses

#: proper-moment priors so that every test function has a finite mean
GIR_ITEM_PRIOR = ItemPrior(nu_i=10, v_i=0.5 * np.eye(4), sigma2_shape=5.0, sigma2_scale=2.0)
GIR_POP_PRIOR = PopulationPrior(nu_p=8, v_p=5.0 * np.eye(2))

TEST_FUNCTIONS = ("mean_b", "mean_lam", "rho", "mean_sigma2")


def _functions(b, lam, sigma_p, sigma2):
    return np.array([np.mean(b), np.mean(lam),
                     sigma_p[0, 1] / np.sqrt(sigma_p[0, 0] * sigma_p[1, 1]),
                     np.mean(sigma2)])


@dataclass
class GirResult:
    marginal: np.ndarray      # (M, 4) iid draws
    successive: np.ndarray    # (S, 4) correlated chain

    def z_scores(self) -> dict:
        """Difference of means in units of the combined Monte Carlo error."""
        out = {}
        for j, name in enumerate(TEST_FUNCTIONS):
            m, s = self.marginal[:, j], self.successive[:, j]
            se_m = m.std(ddof=1) / np.sqrt(m.size)
            se_s = s.std(ddof=1) / np.sqrt(effective_sample_size(s))
            out[name] = float((s.mean() - m.mean()) / np.hypot(se_m, se_s))
        return out


def marginal_conditional(n, k, n_draws, rng, item_prior=GIR_ITEM_PRIOR,
                         pop_prior=GIR_POP_PRIOR) -> np.ndarray:
    rows = np.empty((n_draws, 4))
    for m in range(n_draws):
        d = draw_from_prior(n, k, item_prior, pop_prior, rng)
        rows[m] = _functions(d["b"], d["lam"], d["sigma_p"], d["sigma2"])
    return rows


def successive_conditional(n, k, n_sweeps, rng, item_prior=GIR_ITEM_PRIOR,
                           pop_prior=GIR_POP_PRIOR) -> np.ndarray:
    """Gibbs sweeps interleaved with fresh data; identification rescaling is
    switched off so the sampler targets the unconstrained prior."""
    start = draw_from_prior(n, k, item_prior, pop_prior, rng)
    y, rt = generate_responses(start["theta"], start["zeta"], start["a"], start["b"],
                               start["phi"], start["lam"], start["sigma2"], rng)
    config = RunConfig(xg=n_sweeps, ident=2, rescale=False)
    sampler = GibbsSampler(ObservedData(y=y, rt=rt), config, item_prior, pop_prior, rng=rng)
    st = sampler.state
    for name in ("a", "b", "phi", "lam", "sigma2", "theta", "zeta", "sigma_p"):
        setattr(st, name, np.array(start[name], dtype=float))
    st.mu_i = np.tile(start["mu_i"], (k, 1))
    st.sigma_i = start["sigma_i"]
    rows = np.empty((n_sweeps, 4))
    for t in range(n_sweeps):
        sampler.sweep()
        rows[t] = _functions(st.b, st.lam, st.sigma_p, st.sigma2)
        st.y, st.rt = generate_responses(st.theta, st.zeta, st.a, st.b, st.phi, st.lam,
                                         st.sigma2, rng)
    return rows


def getting_it_right(n=20, k=5, n_sweeps=20000, n_draws=None, seed=None) -> GirResult:
    rng = np.random.default_rng(seed)
    marg = marginal_conditional(n, k, n_draws or n_sweeps, rng)
    succ = successive_conditional(n, k, n_sweeps, rng)
    return GirResult(marg, succ)
