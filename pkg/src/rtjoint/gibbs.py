"""Blocked Gibbs sampler for the hierarchical joint model of response accuracy
and log response times.

One sweep updates, in order: guessing indicators, augmented latent responses,
item RA parameters, item RT parameters, error variances, persons, person
hyperparameters, item hyperparameters, missing-at-random cells, and finally
rescales the draws to the identified metric.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from . import _random as rnd
from .fit import FitAccumulator, FitReport
from .model import (
    ItemPrior,
    ObservedData,
    PopulationPrior,
    RunConfig,
    ValidationError,
    linear_predictor,
    validate_inputs,
)

log = logging.getLogger(__name__)

MAX_RETRIES = 100
ITEM_NAMES = ("a", "b", "phi", "lam")


class SamplerError(RuntimeError):
    """A sub-step of the sampler could not produce a valid draw."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        where = "" if iteration is None else f" (iteration {iteration})"
        super().__init__(message + where)


def time_scale(order, n_items):
    """Map item positions (1..K, per person or shared) to ``(pos - 1) / K``."""
    order = np.asarray(order)
    rows = np.atleast_2d(order)
    expected = np.arange(1, n_items + 1)
    if rows.shape[-1] != n_items or not all(
        np.array_equal(np.sort(r), expected) for r in rows
    ):
        raise ValueError("item order must be a permutation of 1..K")
    return (order.astype(float) - 1.0) / n_items


@dataclass
class ParameterState:
    """One full draw of every sampled quantity (mutable, owned by a sampler)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    phi: np.ndarray
    lam: np.ndarray
    sigma2: np.ndarray
    theta: np.ndarray
    zeta: np.ndarray
    s: np.ndarray
    z: np.ndarray
    y: np.ndarray
    rt: np.ndarray
    mu_p: np.ndarray
    sigma_p: np.ndarray
    mu_i: np.ndarray
    sigma_i: np.ndarray
    beta_theta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta_zeta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta_items: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # quadratic speed model: theta = X beta + zeta @ gamma + u
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tau2: np.ndarray = field(default_factory=lambda: np.full(3, 0.01))
    resid_var: float = 1.0

    def items(self) -> np.ndarray:
        """(K, 4) matrix of (a, b, phi, lambda)."""
        return np.column_stack([self.a, self.b, self.phi, self.lam])

    def copy(self) -> "ParameterState":
        kw = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            kw[name] = value.copy() if isinstance(value, np.ndarray) else value
        return ParameterState(**kw)


@dataclass
class ChainStore:
    """Per-iteration record of the sampled parameters.

    Array names follow the usual output objects: ``MAB`` (xg, K, 4) with
    columns a, b, phi, lambda; ``MmuP`` and ``MSP`` for the person mean and
    covariance; ``MmuI`` and ``MSI`` for the item mean and covariance;
    ``Msigma2``; ``Mguess``; ``theta`` (xg, N) and ``zeta`` (xg, N) or
    (xg, N, 3).
    """

    config: RunConfig
    MAB: np.ndarray
    MmuP: np.ndarray
    MSP: np.ndarray
    MmuI: np.ndarray
    MSI: np.ndarray
    Msigma2: np.ndarray
    Mguess: np.ndarray
    theta: np.ndarray
    zeta: np.ndarray
    betas: dict = field(default_factory=dict)
    fit: Optional[FitReport] = None
    final_state: Optional[ParameterState] = None

    @property
    def xg(self) -> int:
        return self.MAB.shape[0]

    @property
    def quadratic(self) -> bool:
        return self.zeta.ndim == 3

    def retained(self, name: str, burnin: Optional[float] = None) -> np.ndarray:
        """Post-burn-in slice of a stored array."""
        pct = self.config.burnin if burnin is None else burnin
        start = int(np.ceil(pct * self.xg / 100.0))
        if start >= self.xg:
            raise ValueError("burn-in covers the whole chain")
        if name in self.betas:
            return self.betas[name][start:]
        return getattr(self, name)[start:]

    @property
    def post_means(self) -> dict:
        mab = self.retained("MAB").mean(axis=0)
        msp = self.retained("MSP").mean(axis=0)
        out = {
            "Item.Discrimination": mab[:, 0],
            "Item.Difficulty": mab[:, 1],
            "Time.Discrimination": mab[:, 2],
            "Time.Intensity": mab[:, 3],
            "Sigma2": self.retained("Msigma2").mean(axis=0),
            "Mu.Item.Discrimination": self.retained("MmuI")[:, 0].mean(),
            "Mu.Item.Difficulty": self.retained("MmuI")[:, 1].mean(),
            "Mu.Time.Discrimination": self.retained("MmuI")[:, 2].mean(),
            "Mu.Time.Intensity": self.retained("MmuI")[:, 3].mean(),
            "CovMat.Item": self.retained("MSI").mean(axis=0),
            "Mu.Person.Ability": self.retained("MmuP")[:, 0].mean(),
            "Mu.Person.Speed": self.retained("MmuP")[:, 1].mean(),
            "Var.Person.Ability": msp[0, 0],
            "Var.Person.Speed": msp[1, 1],
            "Cov.Person.Ability.Speed": msp[0, 1],
            "CovMat.Person": msp,
            "Person.Ability": self.retained("theta").mean(axis=0),
            "Person.Speed": self.retained("zeta").mean(axis=0),
        }
        if self.config.guess:
            out["Item.Guessing"] = self.retained("Mguess").mean(axis=0)
        for name in self.betas:
            out[name] = self.retained(name).mean(axis=0)
        return out

    @property
    def Mtheta(self) -> np.ndarray:
        """Posterior means of the person parameters, (N, 2) or (N, 4)."""
        th = self.retained("theta").mean(axis=0)
        ze = self.retained("zeta").mean(axis=0)
        return np.column_stack([th, ze])

    @property
    def MTSD(self) -> np.ndarray:
        th = self.retained("theta").std(axis=0, ddof=1)
        ze = self.retained("zeta").std(axis=0, ddof=1)
        return np.column_stack([th, ze])

    def person_correlation(self) -> np.ndarray:
        """Per-iteration ability-speed correlation (constant-speed model)."""
        s = self.MSP
        return s[:, 0, 1] / np.sqrt(s[:, 0, 0] * s[:, 1, 1])


def _pair_draw(prec, rhs, fixed0, fixed1, positive0, rng):
    """Draw (x0, x1) per item from N(prec^{-1} rhs, prec^{-1}).

    ``fixed0``/``fixed1`` are None or arrays of frozen values; ``positive0``
    truncates x0 to (0, inf). Joint draws with x0 <= 0 are redrawn up to
    MAX_RETRIES times; items still failing use the exact sequential draw
    x0 ~ truncated marginal, x1 | x0.
    """
    k = rhs.shape[0]
    cov = np.linalg.inv(prec)
    mean = np.einsum("kij,kj->ki", cov, rhs)
    if fixed0 is not None and fixed1 is not None:
        return fixed0.copy(), fixed1.copy()
    if fixed0 is not None:
        x0 = fixed0.copy()
        m1 = mean[:, 1] - prec[:, 1, 0] / prec[:, 1, 1] * (x0 - mean[:, 0])
        x1 = m1 + rng.standard_normal(k) / np.sqrt(prec[:, 1, 1])
        return x0, x1
    if fixed1 is not None:
        x1 = fixed1.copy()
        m0 = mean[:, 0] - prec[:, 0, 1] / prec[:, 0, 0] * (x1 - mean[:, 1])
        sd0 = 1.0 / np.sqrt(prec[:, 0, 0])
        if positive0:
            x0 = rnd.truncated_normal_general(m0, sd0, 0.0, rng)
        else:
            x0 = m0 + sd0 * rng.standard_normal(k)
        return x0, x1

    chol = np.linalg.cholesky(cov)
    draw = mean + np.einsum("kij,kj->ki", chol, rng.standard_normal((k, 2)))
    if positive0:
        bad = draw[:, 0] <= 0
        tries = 0
        while bad.any() and tries < MAX_RETRIES:
            idx = np.flatnonzero(bad)
            eps = rng.standard_normal((idx.size, 2))
            draw[idx] = mean[idx] + np.einsum("kij,kj->ki", chol[idx], eps)
            bad = draw[:, 0] <= 0
            tries += 1
        if bad.any():
            idx = np.flatnonzero(bad)
            log.debug("positivity retries exhausted for items %s", idx.tolist())
            sd0 = np.sqrt(cov[idx, 0, 0])
            x0 = rnd.truncated_normal_general(mean[idx, 0], sd0, 0.0, rng)
            m1 = mean[idx, 1] + cov[idx, 1, 0] / cov[idx, 0, 0] * (x0 - mean[idx, 0])
            v1 = cov[idx, 1, 1] - cov[idx, 1, 0] ** 2 / cov[idx, 0, 0]
            draw[idx, 0] = x0
            draw[idx, 1] = m1 + np.sqrt(v1) * rng.standard_normal(idx.size)
    return draw[:, 0], draw[:, 1]


def _single_draw(prec, rhs, fixed, positive, rng):
    if fixed is not None:
        return fixed.copy()
    mean = rhs / prec
    sd = 1.0 / np.sqrt(prec)
    if positive:
        return rnd.truncated_normal_general(mean, sd, 0.0, rng)
    return mean + sd * rng.standard_normal(mean.shape)


def _sur_draw(response, designs, sigma, prior_var, rng):
    """Seemingly-unrelated regression draw of coefficients.

    ``response`` is (n, d); ``designs`` is a list of d matrices (n, p_j) or
    None for equations with a fixed zero mean. Returns (coefficients per
    equation, fitted means (n, d)).
    """
    n, d = response.shape
    sizes = [0 if x is None else x.shape[1] for x in designs]
    total = sum(sizes)
    fitted = np.zeros((n, d))
    if total == 0:
        return [np.zeros(0) for _ in designs], fitted
    # block-diagonal per-row design M_i (d, total)
    m = np.zeros((n, d, total))
    col = 0
    for j, x in enumerate(designs):
        if x is not None:
            m[:, j, col:col + x.shape[1]] = x
        col += sizes[j]
    sinv = np.linalg.inv(sigma)
    prec = np.eye(total) / prior_var + np.einsum("nji,jk,nkl->il", m, sinv, m)
    rhs = np.einsum("nji,jk,nk->i", m, sinv, response)
    coef, _ = rnd.batch_mvn_from_precision(prec[None], rhs[None], rng)
    coef = coef[0]
    fitted = np.einsum("nji,i->nj", m, coef)
    out, col = [], 0
    for s in sizes:
        out.append(coef[col:col + s])
        col += s
    return out, fitted


def _scale_cov(cov, idx, factor):
    cov[idx, :] *= factor
    cov[:, idx] *= factor


class GibbsSampler:
    """Holds the data-derived constants, priors and current state of a chain.

    Parameters
    ----------
    data : ObservedData
    config : RunConfig
    item_prior, pop_prior : hyperprior settings
    x : (N, K) or (K,) array, optional
        Time scale for the quadratic speed model (see :func:`time_scale`).
    """

    def __init__(self, data: ObservedData, config: RunConfig = RunConfig(),
                 item_prior: Optional[ItemPrior] = None,
                 pop_prior: Optional[PopulationPrior] = None, x=None,
                 rng=None):
        validate_inputs(data, config)
        self.data = data
        self.config = config
        self.item_prior = item_prior or ItemPrior()
        self.pop_prior = pop_prior or PopulationPrior()
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.quadratic = config.speed_model == "quadratic"
        n, k = data.y.shape
        self.n, self.k = n, k
        self.ay = data.administered_y
        self.at = data.administered_t
        self.ay_f = self.ay.astype(float)
        self.at_f = self.at.astype(float)
        self.mar_y = data.mar_y
        self.mar_t = data.mar_t
        self.dim = 4 if self.quadratic else 2

        if self.quadratic:
            if x is None:
                x = time_scale(np.arange(1, k + 1), k)
            x = np.broadcast_to(np.asarray(x, dtype=float), (n, k))
            self.x = x
            self.w = np.stack([np.ones((n, k)), x, x ** 2], axis=-1)
        else:
            self.x = None
            self.w = None

        self._setup_designs()
        self.state = self._initial_state()
        self.iteration = 0

    # ------------------------------------------------------------------ setup

    def _setup_designs(self):
        d = self.data
        ident1 = self.config.ident == 1
        ones_n = np.ones((self.n, 1))
        if self.quadratic:
            self.x_theta = ones_n if d.xpa is None else np.column_stack([ones_n, d.xpa])
            self.x_zeta = None
        else:
            def person_design(x):
                if ident1:
                    return ones_n if x is None else np.column_stack([ones_n, x])
                return x
            self.x_theta = person_design(d.xpa)
            self.x_zeta = person_design(d.xpt)
        ones_k = np.ones((self.k, 1))
        self.item_covariates = d.xia is not None or d.xit is not None
        self.item_designs = [
            ones_k,
            ones_k if d.xia is None else np.column_stack([ones_k, d.xia]),
            ones_k,
            ones_k if d.xit is None else np.column_stack([ones_k, d.xit]),
        ]

    def _initial_state(self) -> ParameterState:
        cfg, d = self.config, self.data
        n, k = self.n, self.k
        y_obs = np.where(self.ay, d.y, np.nan)
        rt_obs = np.where(self.at, d.rt, np.nan)

        with np.errstate(invalid="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pcorrect = np.nanmean(y_obs, axis=0)
            lam0 = np.nanmean(rt_obs, axis=0)
            var0 = np.nanvar(rt_obs, axis=0)
        overall = np.nanmean(rt_obs) if np.isfinite(rt_obs).any() else 0.0
        pcorrect = np.clip(np.nan_to_num(pcorrect, nan=0.5), 0.05, 0.95)
        lam0 = np.where(np.isfinite(lam0), lam0, overall)
        var0 = np.clip(np.nan_to_num(var0, nan=1.0), 0.05, 5.0)

        a = np.ones(k) if cfg.fixed_a is None else cfg.fixed_a.copy()
        phi = np.ones(k) if cfg.fixed_phi is None else cfg.fixed_phi.copy()
        b = -np.sqrt(2.0) * ndtri(pcorrect)
        if cfg.fixed_b is not None:
            b = cfg.fixed_b.copy()
        lam = lam0.copy() if cfg.fixed_lambda is None else cfg.fixed_lambda.copy()
        sigma2 = var0 * 0.5
        if cfg.wl:
            phi = 1.0 / np.sqrt(sigma2)

        with np.errstate(invalid="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            score = np.nanmean(y_obs, axis=1)
            speed = -np.nanmean(rt_obs - lam, axis=1)
        score = np.nan_to_num(score, nan=np.nanmean(score) if np.isfinite(score).any() else 0.5)
        sd = score.std()
        theta = (score - score.mean()) / sd if sd > 0 else np.zeros(n)
        speed = np.nan_to_num(speed, nan=0.0)
        speed -= speed.mean()
        var_speed = max(speed.var(), 0.01)
        if self.quadratic:
            zeta = np.column_stack([speed, np.zeros(n), np.zeros(n)])
            sigma_p = np.diag([1.0, var_speed, 0.01, 0.01])
            tau2 = np.array([var_speed, 0.01, 0.01])
        else:
            zeta = speed
            sigma_p = np.diag([1.0, var_speed])
            tau2 = np.full(3, 0.01)

        items = np.column_stack([a, b, phi, lam])
        mu_vec = items.mean(axis=0)
        state = ParameterState(
            a=a, b=b, c=np.full(k, 0.2) if cfg.guess else np.zeros(k),
            phi=phi, lam=lam, sigma2=sigma2, theta=theta, zeta=zeta,
            s=np.ones((n, k), dtype=bool), z=np.zeros((n, k)),
            y=np.where(np.isnan(d.y), 0.0, d.y), rt=np.where(np.isnan(d.rt), 0.0, d.rt),
            mu_p=np.zeros((n, self.dim)), sigma_p=sigma_p,
            mu_i=np.tile(mu_vec, (k, 1)), sigma_i=np.diag(np.maximum(items.var(axis=0), 0.1)),
            tau2=tau2, resid_var=1.0,
        )
        self.state = state
        self.impute_missing()
        return state

    # ---------------------------------------------------------------- helpers

    def speed_term(self, state=None) -> np.ndarray:
        """(N, K) speed entering the RT mean for each cell."""
        st = state or self.state
        if self.quadratic:
            return np.einsum("ikq,iq->ik", self.w, st.zeta)
        return np.broadcast_to(st.zeta[:, None], (self.n, self.k))

    def slope(self, state=None) -> np.ndarray:
        st = state or self.state
        return np.ones(self.k) if self.config.wl else st.phi

    def eta(self, state=None) -> np.ndarray:
        st = state or self.state
        return linear_predictor(st.theta[:, None], st.a, st.b, self.config.par1)

    def rt_mean(self, state=None) -> np.ndarray:
        st = state or self.state
        sl = self.slope(st)
        sp = self.speed_term(st)
        if self.config.par1:
            return sl * (st.lam - sp)
        return st.lam - sl * sp

    def b_eff(self, state=None):
        st = state or self.state
        return st.a * st.b if self.config.par1 else st.b

    def lam_eff(self, state=None):
        st = state or self.state
        return self.slope(st) * st.lam if self.config.par1 else st.lam

    def _conditional_item_prior(self, keep):
        st = self.state
        items = st.items()
        other = [j for j in range(4) if j not in keep]
        return rnd.conditional_normal(st.mu_i, st.sigma_i, keep, items[:, other])

    # ----------------------------------------------------------------- blocks

    def sample_guessing(self):
        """Classification of correct responses as guessed (S=0) or not, then
        the Beta update of the guessing parameters."""
        st, ip = self.state, self.item_prior
        if not self.config.guess:
            st.s[:] = True
            st.c[:] = 0.0
            return
        p = ndtr(self.eta())
        num = (1.0 - st.c) * p
        prob_s1 = num / (num + st.c)
        correct = self.ay & (st.y == 1)
        draw = self.rng.uniform(size=p.shape) < prob_s1
        st.s = np.where(correct, draw, True)
        n0 = np.sum(self.ay & ~st.s, axis=0)
        n1 = np.sum(self.ay & st.s, axis=0)
        st.c = self.rng.beta(ip.guess_alpha + n0, ip.guess_beta + n1)

    def augment_latent_responses(self):
        st = self.state
        eta = self.eta()
        z = rnd.truncated_normal(eta, st.y == 1, self.rng)
        if self.config.guess:
            free = eta + self.rng.standard_normal(eta.shape)
            z = np.where(st.s, z, free)
        st.z = np.where(self.ay, z, 0.0)

    def sample_item_ra_params(self):
        cfg, st, w = self.config, self.state, self.ay_f
        if cfg.fixed_a is not None and cfg.fixed_b is not None:
            return
        cm, cc = self._conditional_item_prior([0, 1])
        q = np.linalg.inv(cc)
        th = st.theta
        if not cfg.par1:
            s_tt = w.T @ (th ** 2)
            s_t = w.T @ th
            n_k = w.sum(axis=0)
            s_zt = (w * st.z).T @ th
            s_z = (w * st.z).sum(axis=0)
            xtx = np.stack([np.stack([s_tt, -s_t], -1), np.stack([-s_t, n_k], -1)], 1)
            prec = q[None] + xtx
            rhs = cm @ q + np.column_stack([s_zt, -s_z])
            st.a, st.b = _pair_draw(prec, rhs, cfg.fixed_a, cfg.fixed_b, True, self.rng)
            return
        # bracket form: b~ | a, then a | b~
        mb = cm[:, 1] + cc[1, 0] / cc[0, 0] * (st.a - cm[:, 0])
        vb = cc[1, 1] - cc[1, 0] ** 2 / cc[0, 0]
        n_k = w.sum(axis=0)
        prec = 1.0 / vb + n_k * st.a ** 2
        rhs = mb / vb + st.a * (w * (st.a * th[:, None] - st.z)).sum(axis=0)
        st.b = _single_draw(prec, rhs, cfg.fixed_b, False, self.rng)
        ma = cm[:, 0] + cc[0, 1] / cc[1, 1] * (st.b - cm[:, 1])
        va = cc[0, 0] - cc[0, 1] ** 2 / cc[1, 1]
        reg = th[:, None] - st.b
        prec = 1.0 / va + (w * reg ** 2).sum(axis=0)
        rhs = ma / va + (w * st.z * reg).sum(axis=0)
        st.a = _single_draw(prec, rhs, cfg.fixed_a, True, self.rng)

    def sample_item_rt_params(self):
        cfg, st = self.config, self.state
        if cfg.wl:
            st.phi = 1.0 / np.sqrt(st.sigma2)
        elif not cfg.td:
            st.phi = np.ones(self.k)
        free_phi = cfg.td and not cfg.wl and cfg.fixed_phi is None
        if not free_phi and cfg.fixed_lambda is not None:
            return
        wgt = self.at_f / st.sigma2
        sp = self.speed_term()
        rt = st.rt
        sl = self.slope()
        cm, cc = self._conditional_item_prior([2, 3])

        if not cfg.par1:
            if free_phi:
                q = np.linalg.inv(cc)
                s_ss = (wgt * sp ** 2).sum(axis=0)
                s_s = (wgt * sp).sum(axis=0)
                n_k = wgt.sum(axis=0)
                s_rs = (wgt * rt * sp).sum(axis=0)
                s_r = (wgt * rt).sum(axis=0)
                xtx = np.stack([np.stack([s_ss, -s_s], -1), np.stack([-s_s, n_k], -1)], 1)
                prec = q[None] + xtx
                rhs = cm @ q + np.column_stack([-s_rs, s_r])
                st.phi, st.lam = _pair_draw(prec, rhs, cfg.fixed_phi, cfg.fixed_lambda,
                                            True, self.rng)
                return
            # lambda only, given the slope
            ml = cm[:, 1] + cc[1, 0] / cc[0, 0] * (st.phi - cm[:, 0])
            vl = cc[1, 1] - cc[1, 0] ** 2 / cc[0, 0]
            prec = 1.0 / vl + wgt.sum(axis=0)
            rhs = ml / vl + (wgt * (rt + sl * sp)).sum(axis=0)
            st.lam = _single_draw(prec, rhs, cfg.fixed_lambda, False, self.rng)
            return

        # bracket form: lambda~ | phi, then phi | lambda~
        ml = cm[:, 1] + cc[1, 0] / cc[0, 0] * (st.phi - cm[:, 0])
        vl = cc[1, 1] - cc[1, 0] ** 2 / cc[0, 0]
        prec = 1.0 / vl + wgt.sum(axis=0) * sl ** 2
        rhs = ml / vl + sl * (wgt * (rt + sl * sp)).sum(axis=0)
        st.lam = _single_draw(prec, rhs, cfg.fixed_lambda, False, self.rng)
        if free_phi:
            mp = cm[:, 0] + cc[0, 1] / cc[1, 1] * (st.lam - cm[:, 1])
            vp = cc[0, 0] - cc[0, 1] ** 2 / cc[1, 1]
            reg = st.lam - sp
            prec = 1.0 / vp + (wgt * reg ** 2).sum(axis=0)
            rhs = mp / vp + (wgt * rt * reg).sum(axis=0)
            st.phi = _single_draw(prec, rhs, None, True, self.rng)

    def sample_sigma2(self):
        st, ip = self.state, self.item_prior
        resid = np.where(self.at, st.rt - self.rt_mean(), 0.0)
        n_k = self.at_f.sum(axis=0)
        sse = (resid ** 2).sum(axis=0)
        st.sigma2 = rnd.inverse_gamma(ip.sigma2_shape + n_k / 2.0,
                                      ip.sigma2_scale + sse / 2.0, self.rng)
        if self.config.wl:
            st.phi = 1.0 / np.sqrt(st.sigma2)

    def sample_persons(self):
        """Joint draw of ability and speed per person."""
        st = self.state
        q = np.linalg.inv(st.sigma_p)
        a2 = self.ay_f @ (st.a ** 2)
        r_a = (self.ay_f * (st.z + self.b_eff())) @ st.a
        sl = self.slope()
        wt = self.at_f * (sl ** 2 / st.sigma2)
        resid = self.at_f * (sl / st.sigma2) * (self.lam_eff() - st.rt)
        prec = np.broadcast_to(q, (self.n, self.dim, self.dim)).copy()
        prec[:, 0, 0] += a2
        rhs = st.mu_p @ q
        rhs[:, 0] += r_a
        if self.quadratic:
            prec[:, 1:, 1:] += np.einsum("ik,ikp,ikq->ipq", wt, self.w, self.w)
            rhs[:, 1:] += np.einsum("ik,ikp->ip", resid, self.w)
        else:
            prec[:, 1, 1] += wt.sum(axis=1)
            rhs[:, 1] += resid.sum(axis=1)
        draw, _ = rnd.batch_mvn_from_precision(prec, rhs, self.rng)
        st.theta = draw[:, 0]
        st.zeta = draw[:, 1:] if self.quadratic else draw[:, 1]

    def sample_population_hyper(self):
        st, pp = self.state, self.pop_prior
        if self.quadratic:
            self._sample_population_hyper_quadratic()
            return
        xi = np.column_stack([st.theta, st.zeta])
        designs = [self.x_theta, self.x_zeta]
        if any(x is not None for x in designs):
            coefs, fitted = _sur_draw(xi, designs, st.sigma_p, pp.beta_var, self.rng)
            st.beta_theta, st.beta_zeta = coefs
            st.mu_p = fitted
        else:
            st.mu_p = np.zeros((self.n, 2))
        dev = xi - st.mu_p
        scale = pp.scale_matrix(2) + dev.T @ dev
        if not np.all(np.linalg.eigvalsh(scale) > 0):
            raise SamplerError("person scatter matrix is not positive definite",
                               self.iteration)
        st.sigma_p = rnd.inverse_wishart(pp.dof(2) + self.n, scale, self.rng)

    def _sample_population_hyper_quadratic(self):
        st, pp = self.state, self.pop_prior
        h = np.column_stack([self.x_theta, st.zeta])
        p = h.shape[1]
        prec = np.eye(p) / pp.beta_var + h.T @ h / st.resid_var
        rhs = h.T @ st.theta / st.resid_var
        coef, _ = rnd.batch_mvn_from_precision(prec[None], rhs[None], self.rng)
        coef = coef[0]
        n_x = self.x_theta.shape[1]
        st.beta_theta, st.gamma = coef[:n_x], coef[n_x:]
        sse = np.sum((st.theta - h @ coef) ** 2)
        st.resid_var = float(rnd.inverse_gamma(pp.resid_shape + self.n / 2.0,
                                               pp.resid_scale + sse / 2.0, self.rng))
        st.tau2 = rnd.inverse_gamma(pp.speed_shape + self.n / 2.0,
                                    pp.speed_scale + 0.5 * np.sum(st.zeta ** 2, axis=0),
                                    self.rng)
        self._assemble_quadratic_prior()

    def _assemble_quadratic_prior(self):
        st = self.state
        t = np.diag(st.tau2)
        cov_tz = st.tau2 * st.gamma
        sp = np.zeros((4, 4))
        sp[0, 0] = st.resid_var + np.sum(st.gamma ** 2 * st.tau2)
        sp[0, 1:] = sp[1:, 0] = cov_tz
        sp[1:, 1:] = t
        st.sigma_p = sp
        st.mu_p = np.zeros((self.n, 4))
        st.mu_p[:, 0] = self.x_theta @ st.beta_theta

    def sample_item_hyper(self):
        st, ip = self.state, self.item_prior
        xi = st.items()
        k = self.k
        if self.item_covariates:
            coefs, fitted = _sur_draw(xi, self.item_designs, st.sigma_i, ip.beta_var, self.rng)
            st.beta_items = np.concatenate(coefs)
            st.mu_i = fitted
            dev = xi - fitted
            st.sigma_i = rnd.inverse_wishart(ip.nu_i + k, ip.v_i + dev.T @ dev, self.rng)
            return
        xbar = xi.mean(axis=0)
        dev = xi - xbar
        kappa_n = ip.kappa + k
        mu_n = (ip.kappa * ip.mu_0 + k * xbar) / kappa_n
        d0 = (xbar - ip.mu_0)[:, None]
        scale = ip.v_i + dev.T @ dev + (ip.kappa * k / kappa_n) * (d0 @ d0.T)
        st.sigma_i = rnd.inverse_wishart(ip.nu_i + k, scale, self.rng)
        chol = np.linalg.cholesky(st.sigma_i / kappa_n)
        mu = mu_n + chol @ self.rng.standard_normal(4)
        st.mu_i = np.tile(mu, (k, 1))

    def impute_missing(self):
        st = self.state
        if self.mar_y.any():
            p = ndtr(self.eta())
            p = st.c + (1.0 - st.c) * p
            draw = (self.rng.uniform(size=p.shape) < p).astype(float)
            st.y = np.where(self.mar_y, draw, st.y)
        if self.mar_t.any():
            mean = self.rt_mean()
            draw = mean + np.sqrt(st.sigma2) * self.rng.standard_normal(mean.shape)
            st.rt = np.where(self.mar_t, draw, st.rt)

    def apply_identification(self):
        """Rescale to the identified metric.

        Product of discriminations and of time discriminations set to one;
        ``ident=1`` also centers difficulties and time intensities, shifting
        the person side to compensate. The quadratic model always centers the
        difficulties and leaves the speed means at zero.
        """
        cfg, st = self.config, self.state
        par1 = cfg.par1
        if cfg.rescale and cfg.fixed_a is None:
            g = np.exp(np.mean(np.log(st.a)))
            st.a = st.a / g
            st.theta = st.theta * g
            st.mu_p[:, 0] *= g
            st.beta_theta = st.beta_theta * g
            st.mu_i[:, 0] /= g
            _scale_cov(st.sigma_i, 0, 1.0 / g)
            if par1:
                st.b = st.b * g
                st.mu_i[:, 1] *= g
                _scale_cov(st.sigma_i, 1, g)
            if self.quadratic:
                st.resid_var *= g ** 2
                st.gamma = st.gamma * g
            else:
                _scale_cov(st.sigma_p, 0, g)
        if cfg.rescale and cfg.td and not cfg.wl and cfg.fixed_phi is None:
            h = np.exp(np.mean(np.log(st.phi)))
            st.phi = st.phi / h
            st.zeta = st.zeta * h
            st.mu_i[:, 2] /= h
            _scale_cov(st.sigma_i, 2, 1.0 / h)
            if par1:
                st.lam = st.lam * h
                st.mu_i[:, 3] *= h
                _scale_cov(st.sigma_i, 3, h)
            if self.quadratic:
                st.tau2 = st.tau2 * h ** 2
                st.gamma = st.gamma / h
            else:
                st.mu_p[:, 1] *= h
                st.beta_zeta = st.beta_zeta * h
                _scale_cov(st.sigma_p, 1, h)
        if self.quadratic:
            self._assemble_quadratic_prior()
        center_b = (cfg.ident == 1 or self.quadratic) and cfg.fixed_b is None
        if center_b:
            delta = st.b.mean()
            st.b = st.b - delta
            st.mu_i[:, 1] -= delta
            shift = delta if par1 else delta / st.a.mean()
            st.theta = st.theta - shift
            st.mu_p[:, 0] -= shift
            if st.beta_theta.size:
                # intercept is the first column of the ability design
                st.beta_theta = st.beta_theta.copy()
                st.beta_theta[0] -= shift
        if cfg.ident == 1 and not self.quadratic and cfg.fixed_lambda is None:
            delta = st.lam.mean()
            st.lam = st.lam - delta
            st.mu_i[:, 3] -= delta
            shift = delta if par1 else delta / self.slope().mean()
            st.zeta = st.zeta - shift
            st.mu_p[:, 1] -= shift
            if st.beta_zeta.size:
                st.beta_zeta = st.beta_zeta.copy()
                st.beta_zeta[0] -= shift

    def sweep(self):
        """One full Gibbs iteration."""
        try:
            self.sample_guessing()
            self.augment_latent_responses()
            self.sample_item_ra_params()
            self.sample_item_rt_params()
            self.sample_sigma2()
            self.sample_persons()
            self.sample_population_hyper()
            self.sample_item_hyper()
            self.impute_missing()
            self.apply_identification()
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            raise SamplerError(f"numerical failure: {exc}", self.iteration) from exc
        self.iteration += 1

    # ------------------------------------------------------------------- run

    def run(self, progress=None) -> ChainStore:
        cfg = self.config
        xg, n, k = cfg.xg, self.n, self.k
        dim = self.dim
        store = ChainStore(
            config=cfg,
            MAB=np.empty((xg, k, 4)),
            MmuP=np.empty((xg, dim)),
            MSP=np.empty((xg, dim, dim)),
            MmuI=np.empty((xg, 4)),
            MSI=np.empty((xg, 4, 4)),
            Msigma2=np.empty((xg, k)),
            Mguess=np.empty((xg, k)),
            theta=np.empty((xg, n)),
            zeta=np.empty((xg, n, 3)) if self.quadratic else np.empty((xg, n)),
        )
        acc = FitAccumulator(n, k) if cfg.residual else None
        beta_rows = {}
        for t in range(xg):
            self.sweep()
            st = self.state
            store.MAB[t] = st.items()
            store.MmuP[t] = st.mu_p.mean(axis=0)
            store.MSP[t] = st.sigma_p
            store.MmuI[t] = st.mu_i.mean(axis=0)
            store.MSI[t] = st.sigma_i
            store.Msigma2[t] = st.sigma2
            store.Mguess[t] = st.c
            store.theta[t] = st.theta
            store.zeta[t] = st.zeta
            for name, value in (("beta_theta", st.beta_theta), ("beta_zeta", st.beta_zeta),
                                ("beta_items", st.beta_items)):
                if value.size:
                    beta_rows.setdefault(name, np.empty((xg, value.size)))[t] = value
            if acc is not None and t >= cfg.xgresid:
                acc.update(
                    y=st.y, rt=st.rt, eta=self.eta(), c=st.c, rt_mean=self.rt_mean(),
                    sigma2=st.sigma2, admin_y=self.ay, admin_t=self.at,
                    s=st.s if cfg.guess else None,
                )
            if progress is not None:
                progress(t)
        store.betas = beta_rows
        store.fit = acc.report() if acc is not None else None
        store.final_state = self.state.copy()
        return store


def run_chain(data: ObservedData, config: RunConfig = RunConfig(),
              item_prior: Optional[ItemPrior] = None,
              pop_prior: Optional[PopulationPrior] = None, progress=None) -> ChainStore:
    """Estimate the constant-speed joint model; returns the full chain."""
    if config.speed_model != "constant":
        raise ValidationError(["run_chain expects speed_model='constant'"])
    sampler = GibbsSampler(data, config, item_prior, pop_prior)
    return sampler.run(progress)


def run_chain_quadratic(data: ObservedData, config: RunConfig = RunConfig(),
                        item_prior: Optional[ItemPrior] = None,
                        pop_prior: Optional[PopulationPrior] = None,
                        x=None, progress=None) -> ChainStore:
    """Estimate the differential-speed model with random intercept, trend and
    quadratic speed components. ``x`` is the (N, K) or (K,) time scale."""
    config = config.with_(speed_model="quadratic")
    sampler = GibbsSampler(data, config, item_prior, pop_prior, x=x)
    return sampler.run(progress)
