"""Posterior summaries and single-chain run-length diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class DegenerateChainWarning(UserWarning):
    pass


def autocorrelation(series):
    """Sample autocorrelation at all lags (FFT based, biased normalization)."""
    x = np.asarray(series, dtype=float)
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0:
        return np.ones(n)
    return acov / acov[0]


def effective_sample_size(series) -> float:
    """n / (1 + 2 sum rho_t), summing autocorrelations in adjacent pairs until
    the first non-positive pair sum. Clamped to (0, n]."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 50:
        raise ValueError("effective sample size needs at least 50 draws")
    if np.ptp(x) == 0:
        warnings.warn("zero-variance series; ESS reported as n", DegenerateChainWarning)
        return float(n)
    rho = autocorrelation(x)
    total = 0.0
    # pairs (rho_{2m}, rho_{2m+1}) starting at lag 0; subtract rho_0 = 1 later
    for m in range(0, (n - 1) // 2):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0:
            break
        total += pair
    tau = 2.0 * total - 1.0
    ess = n / max(tau, 1.0 / n)
    return float(min(max(ess, 1e-12), n))


def mcse(series) -> float:
    x = np.asarray(series, dtype=float)
    return float(x.std(ddof=1) / np.sqrt(effective_sample_size(x)))


def geweke_z(series, frac_a=0.1, frac_b=0.5) -> float:
    """Difference of the means of the first ``frac_a`` and last ``frac_b`` of
    the chain, scaled by autocorrelation-adjusted standard errors."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 100:
        raise ValueError("Geweke diagnostic needs at least 100 draws")
    a = x[: int(np.floor(frac_a * n))]
    b = x[n - int(np.floor(frac_b * n)):]
    if a.size < 2 or b.size < 2:
        raise ValueError("degenerate Geweke windows")
    var = 0.0
    for w in (a, b):
        if np.ptp(w) > 0:
            ess = effective_sample_size(w) if w.size >= 50 else w.size
            var += w.var(ddof=1) / ess
    diff = a.mean() - b.mean()
    if var == 0:
        return 0.0 if diff == 0 else float(np.sign(diff) * np.inf)
    return float(diff / np.sqrt(var))


@dataclass
class SummaryRow:
    name: str
    eap: float
    sd: float
    ess: float
    mcse: float
    geweke: float


@dataclass
class SummaryTable:
    """Per-parameter posterior summaries over the retained draws."""

    rows: list = field(default_factory=list)
    n_retained: int = 0
    n_burnin: int = 0

    def __getitem__(self, name) -> SummaryRow:
        for row in self.rows:
            if row.name == name:
                return row
        raise KeyError(name)

    def names(self):
        return [r.name for r in self.rows]

    def as_dict(self):
        return {r.name: dict(EAP=r.eap, SD=r.sd, ESS=r.ess, MCSE=r.mcse, Geweke=r.geweke)
                for r in self.rows}


def chain_columns(chain, persons=False) -> dict:
    """Flatten a :class:`~rtjoint.gibbs.ChainStore` into named scalar series.

    Item rows come first (a, b, phi, lambda, sigma2 and c when guessing is
    on), then mu_I, Sigma_I and the person mean and covariance blocks.
    """
    cols = {}
    k = chain.MAB.shape[1]
    for j in range(k):
        for p, label in enumerate(("a", "b", "phi", "lam")):
            cols[f"{label}[{j + 1}]"] = chain.MAB[:, j, p]
        cols[f"sigma2[{j + 1}]"] = chain.Msigma2[:, j]
        if chain.config.guess:
            cols[f"c[{j + 1}]"] = chain.Mguess[:, j]
    for p, label in enumerate(("mu_a", "mu_b", "mu_phi", "mu_lam")):
        cols[label] = chain.MmuI[:, p]
    for i in range(4):
        for j in range(i, 4):
            cols[f"Sigma_I[{i + 1},{j + 1}]"] = chain.MSI[:, i, j]
    labels = ("theta", "zeta") if not chain.quadratic else ("theta", "zeta0", "zeta1", "zeta2")
    for p, label in enumerate(labels):
        cols[f"mu_{label}"] = chain.MmuP[:, p]
    d = chain.MSP.shape[1]
    for i in range(d):
        for j in range(i, d):
            cols[f"Sigma_P[{i + 1},{j + 1}]"] = chain.MSP[:, i, j]
    for name, arr in chain.betas.items():
        for j in range(arr.shape[1]):
            cols[f"{name}[{j + 1}]"] = arr[:, j]
    if persons:
        n = chain.theta.shape[1]
        for i in range(n):
            cols[f"theta[{i + 1}]"] = chain.theta[:, i]
        if chain.quadratic:
            for i in range(n):
                for q in range(3):
                    cols[f"zeta{q}[{i + 1}]"] = chain.zeta[:, i, q]
        else:
            for i in range(n):
                cols[f"zeta[{i + 1}]"] = chain.zeta[:, i]
    return cols


def summarize_series(series: dict, burnin_pct: float = 10.0) -> SummaryTable:
    """Summaries of named series after discarding ceil(burnin% * xg / 100)."""
    lengths = {len(v) for v in series.values()}
    if len(lengths) != 1:
        raise ValueError("series must share one length")
    xg = lengths.pop()
    start = int(np.ceil(burnin_pct * xg / 100.0))
    if start >= xg:
        raise ValueError("burn-in is not shorter than the chain")
    table = SummaryTable(n_retained=xg - start, n_burnin=start)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateChainWarning)
        for name, values in series.items():
            x = np.asarray(values, dtype=float)[start:]
            sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
            try:
                ess = effective_sample_size(x)
                se = sd / np.sqrt(ess)
            except ValueError:
                ess, se = float("nan"), float("nan")
            try:
                z = geweke_z(x)
            except ValueError:
                z = float("nan")
            table.rows.append(SummaryRow(name, float(x.mean()), sd, ess, se, z))
    return table


def summarize(chain, burnin_pct=None, persons=False) -> SummaryTable:
    """Posterior summary table of a chain (default burn-in from its config)."""
    pct = chain.config.burnin if burnin_pct is None else burnin_pct
    return summarize_series(chain_columns(chain, persons=persons), pct)
