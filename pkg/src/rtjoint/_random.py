"""Vectorized random draws used by the Gibbs sampler."""

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri, ndtri_exp
from scipy.stats import invwishart


def std_normal_above(lower, u):
    """Inverse-CDF draw of X ~ N(0, 1) conditioned on X > lower.

    ``u`` are uniforms of the same shape. Upper tails are handled in log space
    so arbitrarily large ``lower`` stays finite.
    """
    lower = np.asarray(lower, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.empty(np.broadcast(lower, u).shape)
    lower, u = np.broadcast_to(lower, out.shape), np.broadcast_to(u, out.shape)
    tail = lower > 0
    if tail.any():
        # X = -Phi^{-1}(u * Phi(-lower)), evaluated through logs
        logp = np.log(u[tail]) + log_ndtr(-lower[tail])
        out[tail] = -ndtri_exp(logp)
    body = ~tail
    if body.any():
        lo = ndtr(lower[body])
        out[body] = ndtri(lo + u[body] * (1.0 - lo))
    return np.maximum(out, lower)


def truncated_normal(mean, positive, rng):
    """Unit-variance normal draws around ``mean``, truncated to (0, inf) where
    ``positive`` is True and to (-inf, 0] elsewhere."""
    mean = np.asarray(mean, dtype=float)
    positive = np.broadcast_to(positive, mean.shape)
    u = rng.uniform(size=mean.shape)
    u = np.clip(u, 1e-300, 1.0)
    sign = np.where(positive, 1.0, -1.0)
    # for y=0, -z - (-mean) = -(z - mean) > mean
    x = std_normal_above(-sign * mean, u)
    return mean + sign * x


def truncated_normal_general(mean, sd, lower, rng):
    """N(mean, sd^2) truncated to (lower, inf)."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    u = np.clip(rng.uniform(size=np.broadcast(mean, sd, lower).shape), 1e-300, 1.0)
    return mean + sd * std_normal_above((lower - mean) / sd, u)


def batch_mvn_from_precision(precision, rhs, rng):
    """Draw x ~ N(P^{-1} r, P^{-1}) for a stack of precisions ``P`` (n, d, d).

    Returns ``(draws, means)``.
    """
    chol = np.linalg.cholesky(precision)
    mean = np.linalg.solve(precision, rhs[..., None])[..., 0]
    eps = rng.standard_normal(rhs.shape)
    # L^T x = eps  ->  x has covariance (L L^T)^{-1}
    lt = np.swapaxes(chol, -1, -2)
    noise = np.linalg.solve(lt, eps[..., None])[..., 0]
    return mean + noise, mean


def inverse_wishart(df, scale, rng):
    """Inverse-Wishart draw with E[S] = scale / (df - p - 1)."""
    scale = 0.5 * (scale + scale.T)
    return np.atleast_2d(invwishart.rvs(df=df, scale=scale, random_state=rng))


def inverse_gamma(shape, scale, rng):
    return scale / rng.gamma(shape, 1.0, size=np.shape(shape + scale))


def conditional_normal(mean, cov, keep, given_values):
    """Moments of the ``keep`` block of N(mean, cov) given the other block.

    ``mean`` may be (n, d); ``given_values`` is (n, d_other).
    Returns ``(cond_mean (n, d_keep), cond_cov (d_keep, d_keep))``.
    """
    d = cov.shape[0]
    keep = list(keep)
    other = [j for j in range(d) if j not in keep]
    s11 = cov[np.ix_(keep, keep)]
    s12 = cov[np.ix_(keep, other)]
    s22 = cov[np.ix_(other, other)]
    gain = np.linalg.solve(s22, s12.T).T
    cmean = mean[..., keep] + (given_values - mean[..., other]) @ gain.T
    ccov = s11 - gain @ s12.T
    return cmean, 0.5 * (ccov + ccov.T)
