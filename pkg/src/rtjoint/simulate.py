"""Data generation from the joint model, with known parameters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import invwishart

from .model import (
    ItemBank,
    ItemPrior,
    ObservedData,
    PersonState,
    PopulationPrior,
    ValidationError,
    response_probability,
    rt_mean,
)

DEFAULT_ITEM_MEAN = np.array([1.0, 0.0, 1.0, 4.0])
DEFAULT_ITEM_COV = np.diag([0.04, 0.5, 0.04, 0.25])


@dataclass(frozen=True)
class TrueParameters:
    """Generating values stored next to a simulated dataset."""

    items: ItemBank
    persons: PersonState
    mu_p: np.ndarray
    sigma_p: np.ndarray
    mu_i: Optional[np.ndarray] = None
    sigma_i: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None

    @property
    def rho(self) -> float:
        s = self.sigma_p
        return float(s[0, 1] / np.sqrt(s[0, 0] * s[1, 1]))


@dataclass(frozen=True)
class MissingSpec:
    """Missingness applied after generation.

    ``mar_y``/``mar_t`` are deletion rates for missing-at-random cells among
    administered cells; ``mbd_y``/``mbd_t`` are 0/1 design masks.
    """

    mar_y: float = 0.0
    mar_t: float = 0.0
    mbd_y: Optional[np.ndarray] = None
    mbd_t: Optional[np.ndarray] = None


def person_covariance(var_theta=1.0, var_zeta=0.25, rho=0.4):
    """2x2 covariance with the given ability-speed correlation."""
    cov = rho * np.sqrt(var_theta * var_zeta)
    return np.array([[var_theta, cov], [cov, var_zeta]])


def pretest_design(group_sizes: Sequence[int], n_common: int, block_size: int):
    """Incomplete design: every group takes the common block plus its own
    disjoint pretest block. Returns ``(mask, group)``."""
    n = int(np.sum(group_sizes))
    k = n_common + block_size * len(group_sizes)
    mask = np.zeros((n, k))
    mask[:, :n_common] = 1
    group = np.repeat(np.arange(len(group_sizes)), group_sizes)
    for g in range(len(group_sizes)):
        start = n_common + g * block_size
        mask[group == g, start:start + block_size] = 1
    return mask, group


def draw_items(k, rng, mean=DEFAULT_ITEM_MEAN, cov=DEFAULT_ITEM_COV,
               sigma2_range=(0.2, 0.5), guess=None):
    """Items from N4(mean, cov) restricted to positive discriminations."""
    mean = np.asarray(mean, float)
    chol = np.linalg.cholesky(cov)
    out = np.empty((k, 4))
    filled = 0
    while filled < k:
        cand = mean + rng.standard_normal((k, 4)) @ chol.T
        ok = cand[(cand[:, 0] > 0) & (cand[:, 2] > 0)]
        take = min(k - filled, len(ok))
        out[filled:filled + take] = ok[:take]
        filled += take
    sigma2 = rng.uniform(*sigma2_range, size=k)
    c = None
    if guess is not None:
        c = np.full(k, float(guess)) if np.isscalar(guess) else np.asarray(guess, float)
    return ItemBank(a=out[:, 0], b=out[:, 1], phi=out[:, 2], lam=out[:, 3],
                    sigma2=sigma2, c=c)


def _apply_missing(y, rt, spec: MissingSpec, rng):
    n, k = y.shape
    problems = []
    masks = []
    for name in ("mbd_y", "mbd_t"):
        m = getattr(spec, name)
        if m is None:
            m = np.ones((n, k))
        m = np.asarray(m, float)
        if m.shape != (n, k) or not np.all((m == 0) | (m == 1)):
            problems.append(f"{name} must be a 0/1 matrix of shape {(n, k)}")
        masks.append(m)
    for name in ("mar_y", "mar_t"):
        rate = getattr(spec, name)
        if not 0 <= rate < 1:
            problems.append(f"{name} must be in [0, 1)")
    if problems:
        raise ValidationError(problems)
    mbd_y, mbd_t = masks
    y = np.where(mbd_y == 1, y, np.nan)
    rt = np.where(mbd_t == 1, rt, np.nan)
    if spec.mar_y:
        y = np.where(rng.uniform(size=y.shape) < spec.mar_y, np.nan, y)
    if spec.mar_t:
        rt = np.where(rng.uniform(size=rt.shape) < spec.mar_t, np.nan, rt)
    return y, rt, mbd_y, mbd_t


def simulate_dataset(n, k, rng=None, *, items: Optional[ItemBank] = None,
                     sigma_p=None, mu_p=None, item_mean=DEFAULT_ITEM_MEAN,
                     item_cov=DEFAULT_ITEM_COV, sigma2_range=(0.2, 0.5), guess=None,
                     par1=False, speed_model="constant", x=None,
                     missing: Optional[MissingSpec] = None, xpa=None, xpt=None,
                     beta_theta=None, beta_zeta=None):
    """Generate ``(ObservedData, TrueParameters)`` by ancestral sampling.

    Persons come from N(mu_p, sigma_p) (mean shifted by ``xpa @ beta_theta``
    and ``xpt @ beta_zeta`` when covariates are given). For
    ``speed_model='quadratic'`` ``sigma_p`` is 4x4 over (theta, zeta0, zeta1,
    zeta2) and ``x`` is the (N, K) or (K,) time scale.
    """
    if n < 2 or k < 2:
        raise ValidationError(["need n >= 2 and k >= 2"])
    rng = np.random.default_rng(rng)
    quadratic = speed_model == "quadratic"
    if items is None:
        items = draw_items(k, rng, item_mean, item_cov, sigma2_range, guess)
    dim = 4 if quadratic else 2
    if sigma_p is None:
        sigma_p = person_covariance() if not quadratic else np.diag([1.0, 0.06, 0.11, 0.06])
    sigma_p = np.asarray(sigma_p, float)
    mu_p = np.zeros(dim) if mu_p is None else np.asarray(mu_p, float)
    xi = mu_p + rng.standard_normal((n, dim)) @ np.linalg.cholesky(sigma_p).T
    if xpa is not None and beta_theta is not None:
        xi[:, 0] += np.asarray(xpa, float).reshape(n, -1) @ np.atleast_1d(beta_theta)
    if xpt is not None and beta_zeta is not None:
        xi[:, 1] += np.asarray(xpt, float).reshape(n, -1) @ np.atleast_1d(beta_zeta)
    theta = xi[:, 0]
    if quadratic:
        if x is None:
            x = (np.arange(k) / k)
        x = np.broadcast_to(np.asarray(x, float), (n, k))
        zeta = xi[:, 1:]
        speed = zeta[:, [0]] + zeta[:, [1]] * x + zeta[:, [2]] * x ** 2
    else:
        zeta = xi[:, 1]
        speed = zeta[:, None]

    p = response_probability(theta[:, None], items.a, items.b, items.c, par1)
    y = (rng.uniform(size=(n, k)) < p).astype(float)
    mean = rt_mean(speed, items.phi, items.lam, par1)
    rt = mean + np.sqrt(items.sigma2) * rng.standard_normal((n, k))

    spec = missing or MissingSpec()
    y, rt, mbd_y, mbd_t = _apply_missing(y, rt, spec, rng)
    data = ObservedData(y=y, rt=rt, mbd_y=mbd_y, mbd_t=mbd_t, xpa=xpa, xpt=xpt)
    truth = TrueParameters(
        items=items, persons=PersonState(theta=theta, zeta=zeta),
        mu_p=mu_p, sigma_p=sigma_p,
        mu_i=np.asarray(item_mean, float), sigma_i=np.asarray(item_cov, float),
        x=None if not quadratic else np.array(x),
    )
    return data, truth


def draw_from_prior(n, k, item_prior: ItemPrior, pop_prior: PopulationPrior, rng,
                    max_tries=10000):
    """Joint draw of hyperparameters and parameters from the constant-speed
    prior with mu_P = 0.

    The item block (mu_I, Sigma_I, items) is drawn jointly and rejected as a
    whole until every discrimination and time discrimination is positive, so
    the draw follows NIW x prod N x indicator, the density the sampler targets.
    Returns a dict of parameter arrays.
    """
    sigma_p = np.atleast_2d(invwishart.rvs(df=pop_prior.dof(2), scale=pop_prior.scale_matrix(2),
                                           random_state=rng))
    xi = rng.standard_normal((n, 2)) @ np.linalg.cholesky(sigma_p).T
    for _ in range(max_tries):
        sigma_i = np.atleast_2d(invwishart.rvs(df=item_prior.nu_i, scale=item_prior.v_i,
                                               random_state=rng))
        mu_i = item_prior.mu_0 + np.linalg.cholesky(sigma_i / item_prior.kappa) @ rng.standard_normal(4)
        items = mu_i + rng.standard_normal((k, 4)) @ np.linalg.cholesky(sigma_i).T
        if np.all(items[:, 0] > 0) and np.all(items[:, 2] > 0):
            break
    else:
        raise RuntimeError("prior rejection sampler did not find positive discriminations")
    sigma2 = item_prior.sigma2_scale / rng.gamma(item_prior.sigma2_shape, 1.0, size=k)
    return dict(theta=xi[:, 0], zeta=xi[:, 1], sigma_p=sigma_p, mu_i=mu_i, sigma_i=sigma_i,
                a=items[:, 0], b=items[:, 1], phi=items[:, 2], lam=items[:, 3], sigma2=sigma2)


def generate_responses(theta, zeta, a, b, phi, lam, sigma2, rng):
    """Complete (y, rt) matrices given constant-speed parameters."""
    p = response_probability(theta[:, None], a, b)
    y = (rng.uniform(size=p.shape) < p).astype(float)
    rt = rt_mean(zeta[:, None], phi, lam) + np.sqrt(sigma2) * rng.standard_normal(p.shape)
    return y, rt
