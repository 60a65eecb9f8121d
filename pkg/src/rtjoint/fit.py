"""Person fit, item fit, residual extremeness and KS normality checks.

Every statistic is evaluated at a single posterior draw; :class:`FitAccumulator`
averages them over the draws taken after ``xgresid`` iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri
from scipy.stats import chi2

ALPHA = 0.05
RA_CRITICAL = float(ndtri(1.0 - ALPHA))  # 1.645
RESIDUAL_C = 2.0
EPS = 1e-12
KS_MIN_N = 5


def _clip(p):
    return np.clip(p, EPS, 1.0 - EPS)


# --------------------------------------------------------------- RA patterns


def ra_loglik_statistic(y, p, mask=None, axis=-1):
    """Negative log-likelihood ``l0`` and its standardized version.

    Moments are those of ``l0`` when ``y`` is Bernoulli(``p``) at the given
    parameters. Cells where ``mask`` is False are left out.

    Returns
    -------
    l0, l_s : arrays reduced along ``axis``
    """
    y = np.asarray(y, dtype=float)
    p = _clip(np.asarray(p, dtype=float))
    m = np.ones(np.broadcast(y, p).shape, dtype=bool) if mask is None else np.asarray(mask, bool)
    lp, lq = np.log(p), np.log1p(-p)
    yy = np.where(m, y, 0.0)
    l0 = -np.sum(np.where(m, yy * lp + (1.0 - yy) * lq, 0.0), axis=axis)
    mean = -np.sum(np.where(m, p * lp + (1.0 - p) * lq, 0.0), axis=axis)
    var = np.sum(np.where(m, p * (1.0 - p) * (lp - lq) ** 2, 0.0), axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        ls = np.where(var > 0, (l0 - mean) / np.sqrt(var), 0.0)
    return l0, ls


def person_fit_ra(y, eta, mask=None):
    """Person-fit statistic for RA patterns (rows).

    ``eta`` is the probit linear predictor; for the guessing model pass the
    non-guessed indicator as ``mask`` so guessed cells are ignored.

    Returns ``(l0, l_s, flag)`` with ``flag = l_s > 1.645``.
    """
    l0, ls = ra_loglik_statistic(y, ndtr(eta), mask, axis=-1)
    return l0, ls, (ls > RA_CRITICAL).astype(float)


def rt_chi2_statistic(rt, mean, sigma2, mask=None, axis=-1):
    """Sum of squared standardized residuals and its chi-square tail
    probability with one degree of freedom per included cell."""
    rt = np.asarray(rt, dtype=float)
    z2 = (rt - mean) ** 2 / sigma2
    m = np.ones(z2.shape, dtype=bool) if mask is None else np.asarray(mask, bool)
    stat = np.sum(np.where(m, z2, 0.0), axis=axis)
    dof = np.sum(m, axis=axis)
    pval = np.where(dof > 0, chi2.sf(stat, np.maximum(dof, 1)), 1.0)
    return stat, pval, dof


def person_fit_rt(rt, mean, sigma2, mask=None):
    """Person-fit statistic for RT patterns.

    Returns ``(l_t, p_value, flag)``; ``flag`` is 1 when ``l_t`` exceeds the
    0.95 quantile of chi-square with as many degrees of freedom as cells.
    """
    stat, pval, dof = rt_chi2_statistic(rt, mean, sigma2, mask, axis=-1)
    crit = chi2.ppf(1.0 - ALPHA, np.maximum(dof, 1))
    return stat, pval, ((stat > crit) & (dof > 0)).astype(float)


def joint_flag(flag_ra, flag_rt):
    return np.asarray(flag_ra) * np.asarray(flag_rt)


def item_fit(y, eta, rt, mean, sigma2, mask_y=None, mask_t=None):
    """Column-wise versions of the RA and RT pattern statistics.

    Returns ``(l0, l_s, rt_stat, rt_pvalue)`` per item.
    """
    l0, ls = ra_loglik_statistic(y, ndtr(eta), mask_y, axis=0)
    stat, pval, _ = rt_chi2_statistic(rt, mean, sigma2, mask_t, axis=0)
    return l0, ls, stat, pval


# ---------------------------------------------------------------- residuals


def latent_residual_ra(y, eta, c=RESIDUAL_C):
    """Expected latent residual given the response and the probability that
    its absolute value exceeds ``c``.

    The latent residual is standard normal truncated to ``e > -eta`` for a
    correct and ``e <= -eta`` for an incorrect response.
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    log_pdf = -0.5 * eta ** 2 - 0.5 * np.log(2 * np.pi)
    correct = y == 1
    expected = np.where(correct,
                        np.exp(log_pdf - log_ndtr(eta)),
                        -np.exp(log_pdf - log_ndtr(-eta)))
    # both tails of |e| > c inside the truncation region
    upper_1 = ndtr(-np.maximum(c, -eta))
    lower_1 = np.maximum(0.0, ndtr(-c) - ndtr(-eta))
    prob_1 = (upper_1 + lower_1) / np.maximum(ndtr(eta), EPS)
    lower_0 = ndtr(np.minimum(-c, -eta))
    upper_0 = np.maximum(0.0, ndtr(-eta) - ndtr(c))
    prob_0 = (lower_0 + upper_0) / np.maximum(ndtr(-eta), EPS)
    prob = np.clip(np.where(correct, prob_1, prob_0), 0.0, 1.0)
    return expected, prob


def rt_residual(rt, mean, sigma, c=RESIDUAL_C):
    """RT residual and the probability that the standardized error exceeds
    ``c`` in absolute value."""
    eps = np.asarray(rt, dtype=float) - mean
    r = eps / sigma
    return eps, ndtr(-c - r) + 1.0 - ndtr(c - r)


def rt_residual_exceedance(rt, mean, sigma, c=RESIDUAL_C):
    """Indicator that the standardized RT residual lies beyond +-``c``.

    Given the parameters the RT residual is known exactly, so its posterior
    probability of exceeding ``c`` is the mean of this indicator over draws.
    This is the quantity accumulated into ``EAPresid``; the smoothed
    probability of :func:`rt_residual` adds a second unit of normal noise and
    averages about 0.157 on well-fitting data instead of 2*Phi(-2).
    """
    eps = np.asarray(rt, dtype=float) - mean
    return (np.abs(eps / sigma) > c).astype(float)


# ----------------------------------------------------------------------- KS


def kolmogorov_sf(x, terms=100, tol=1e-10):
    """P(K > x) for the Kolmogorov distribution.

    Alternating series ``2 sum (-1)^(j-1) exp(-2 j^2 x^2)`` for ``x >= 0.3``;
    below that the series converges too slowly and the dual theta-function
    form of the CDF is used instead.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.ones_like(x)
    big = x >= 0.3
    for idx in np.flatnonzero(big):
        xi, total = x[idx], 0.0
        for j in range(1, terms + 1):
            term = np.exp(-2.0 * j * j * xi * xi)
            total += term if j % 2 else -term
            if term < tol:
                break
        out[idx] = 2.0 * total
    small = (x > 0) & ~big
    for idx in np.flatnonzero(small):
        xi, cdf = x[idx], 0.0
        for j in range(1, terms + 1):
            term = np.exp(-((2 * j - 1) ** 2) * np.pi ** 2 / (8.0 * xi * xi))
            cdf += term
            if term < tol:
                break
        out[idx] = 1.0 - np.sqrt(2 * np.pi) / xi * cdf
    return np.clip(out, 0.0, 1.0)


def ks_statistic(e, axis=0):
    """sup |F_N - Phi| per column; ``nan`` entries are excluded.

    Returns ``(D, n)``.
    """
    e = np.asarray(e, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
        squeeze = True
    else:
        squeeze = False
        if axis != 0:
            e = np.moveaxis(e, axis, 0)
    srt = np.sort(e, axis=0)  # nan last
    n = np.sum(~np.isnan(e), axis=0)
    i = np.arange(1, e.shape[0] + 1)[:, None]
    cdf = ndtr(srt)
    valid = i <= n
    nn = np.maximum(n, 1)
    d_plus = np.where(valid, i / nn - cdf, -np.inf)
    d_minus = np.where(valid, cdf - (i - 1) / nn, -np.inf)
    d = np.maximum(d_plus.max(axis=0), d_minus.max(axis=0))
    d = np.where(n > 0, d, np.nan)
    if squeeze:
        return d[0], n[0]
    return d, n


def ks_test_item(std_residuals, axis=0):
    """Kolmogorov-Smirnov check of standardized residuals against N(0, 1).

    Returns ``(D, p_value)``; both are ``nan`` where fewer than 5 residuals
    are available.
    """
    d, n = ks_statistic(std_residuals, axis=axis)
    d = np.asarray(d, dtype=float)
    n = np.asarray(n)
    p = np.asarray(kolmogorov_sf(np.nan_to_num(d) * np.sqrt(n)), dtype=float).reshape(d.shape)
    applicable = n >= KS_MIN_N
    d = np.where(applicable, d, np.nan)
    p = np.where(applicable, p, np.nan)
    if d.ndim == 0:
        return float(d), float(p)
    return d, p


# --------------------------------------------------------------- reporting


@dataclass
class FitReport:
    """Posterior means of the fit quantities.

    Person level (N): PFl, PFlp, lZPT, lZP, EAPCP1 (RT flag), EAPCP2 (RA flag),
    EAPCP3 (joint flag). Item level (K): IFl, IFlp, lZIT, lZI, EAPKS.
    Cell level (N, K): EAPresid, EAPresidA, EAPl0.
    """

    PFl: np.ndarray
    PFlp: np.ndarray
    lZPT: np.ndarray
    lZP: np.ndarray
    EAPCP1: np.ndarray
    EAPCP2: np.ndarray
    EAPCP3: np.ndarray
    IFl: np.ndarray
    IFlp: np.ndarray
    lZIT: np.ndarray
    lZI: np.ndarray
    EAPKS: np.ndarray
    EAPresid: np.ndarray
    EAPresidA: np.ndarray
    EAPl0: np.ndarray
    n_draws: int = 0

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


class FitAccumulator:
    """Running posterior means of all fit quantities."""

    _person = ("PFl", "PFlp", "lZPT", "lZP", "EAPCP1", "EAPCP2", "EAPCP3")
    _item = ("IFl", "IFlp", "lZIT", "lZI", "EAPKS")
    _cell = ("EAPresid", "EAPresidA", "EAPl0")

    def __init__(self, n_persons, n_items):
        self.n = 0
        self.sums = {name: np.zeros(n_persons) for name in self._person}
        self.sums.update({name: np.zeros(n_items) for name in self._item})
        self.sums.update({name: np.zeros((n_persons, n_items)) for name in self._cell})
        self.ks_count = np.zeros(n_items)

    def update(self, y, rt, eta, c, rt_mean, sigma2, admin_y, admin_t, s=None):
        """Add one posterior draw. ``s`` (non-guessed indicator) restricts the
        RA statistics to non-guessed cells."""
        s_ = self.sums
        mask_y = admin_y if s is None else (admin_y & s)

        _, ls, flag_ra = person_fit_ra(y, eta, mask_y)
        lt, p_rt, flag_rt = person_fit_rt(rt, rt_mean, sigma2, admin_t)
        s_["PFl"] += ls
        s_["PFlp"] += 1.0 - ndtr(ls)
        s_["lZPT"] += lt
        s_["lZP"] += p_rt
        s_["EAPCP1"] += flag_rt
        s_["EAPCP2"] += flag_ra
        s_["EAPCP3"] += joint_flag(flag_ra, flag_rt)

        il0, ils, istat, ipval = item_fit(y, eta, rt, rt_mean, sigma2, mask_y, admin_t)
        s_["IFl"] += il0
        s_["IFlp"] += 1.0 - ndtr(ils)
        s_["lZIT"] += istat
        s_["lZI"] += ipval

        sigma = np.sqrt(sigma2)
        eps = rt - rt_mean
        p_ext = rt_residual_exceedance(rt, rt_mean, sigma)
        s_["EAPresid"] += np.where(admin_t, p_ext, 0.0)
        _, p_ext_a = latent_residual_ra(y, eta)
        s_["EAPresidA"] += np.where(mask_y, p_ext_a, 0.0)
        p_full = _clip(c + (1.0 - c) * ndtr(eta))
        s_["EAPl0"] += np.where(admin_y, y * np.log(p_full) + (1 - y) * np.log1p(-p_full), 0.0)

        std = np.where(admin_t, eps / sigma, np.nan)
        _, p_ks = ks_test_item(std, axis=0)
        applicable = ~np.isnan(p_ks)
        s_["EAPKS"] += np.where(applicable, p_ks < ALPHA, 0.0)
        self.ks_count += applicable
        self.n += 1

    def report(self) -> Optional[FitReport]:
        if self.n == 0:
            return None
        out = {name: total / self.n for name, total in self.sums.items()}
        with np.errstate(invalid="ignore", divide="ignore"):
            out["EAPKS"] = np.where(self.ks_count > 0,
                                    self.sums["EAPKS"] / np.maximum(self.ks_count, 1), np.nan)
        return FitReport(n_draws=self.n, **out)
