import warnings

import numpy as np
import pytest

from rtjoint.chains import (
    DegenerateChainWarning,
    autocorrelation,
    effective_sample_size,
    geweke_z,
    mcse,
    summarize_series,
)


def ar1(n, rho, rng):
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - rho ** 2)
    for t in range(1, n):
        x[t] = rho * x[t - 1] + e[t]
    return x


class TestAutocorrelation:
    def test_against_direct_sum(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(300)
        xc = x - x.mean()
        direct = np.array([np.sum(xc[: 300 - h] * xc[h:]) for h in range(5)]) / np.sum(xc ** 2)
        np.testing.assert_allclose(autocorrelation(x)[:5], direct, atol=1e-12)


class TestEss:
    def test_independent_draws(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(20_000)
        assert effective_sample_size(x) == pytest.approx(20_000, rel=0.10)

    def test_ar1(self):
        rng = np.random.default_rng(2)
        n = 100_000
        assert effective_sample_size(ar1(n, 0.9, rng)) == pytest.approx(n / 19, rel=0.25)

    def test_mcse_at_400(self):
        # ESS 400 gives an MCSE of 5% of the posterior SD
        rng = np.random.default_rng(3)
        x = rng.standard_normal(400)
        ess = effective_sample_size(x)
        assert mcse(x) == pytest.approx(x.std(ddof=1) / np.sqrt(ess))
        assert 1 / np.sqrt(400) == pytest.approx(0.05)

    def test_constant_chain(self):
        with pytest.warns(DegenerateChainWarning):
            assert effective_sample_size(np.full(100, 3.96)) == 100

    def test_short_chain(self):
        with pytest.raises(ValueError):
            effective_sample_size(np.zeros(10))


class TestGeweke:
    def test_identical_halves(self):
        # first 10% and last 50% share the mean exactly
        x = np.tile(np.array([1.0, -1.0]), 100)
        assert geweke_z(x) == pytest.approx(0.0)

    def test_calibration(self):
        rng = np.random.default_rng(5)
        z = np.array([geweke_z(rng.standard_normal(500)) for _ in range(1000)])
        assert np.mean(np.abs(z) < 3) >= 0.99

    def test_detects_step(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal(1000)
        x[:100] += 5
        assert abs(geweke_z(x)) > 3

    def test_too_short(self):
        with pytest.raises(ValueError):
            geweke_z(np.zeros(50))


class TestSummary:
    def test_constant_chain(self):
        t = summarize_series({"lam": np.full(1000, 3.96)})
        assert t["lam"].eap == pytest.approx(3.96) and t["lam"].sd == 0

    def test_burnin_count(self):
        t = summarize_series({"x": np.arange(1000.0)}, burnin_pct=10)
        assert t.n_retained == 900 and t.n_burnin == 100

    def test_alternating(self):
        t = summarize_series({"x": np.tile([-1.0, 1.0], 500)}, burnin_pct=10)
        assert t["x"].eap == pytest.approx(0.0) and t["x"].sd == pytest.approx(1.0, abs=0.01)

    def test_unequal_lengths(self):
        with pytest.raises(ValueError):
            summarize_series({"a": np.zeros(10), "b": np.zeros(11)})

    def test_as_dict(self):
        t = summarize_series({"x": np.random.default_rng(7).standard_normal(200)})
        assert set(t.as_dict()["x"]) == {"EAP", "SD", "ESS", "MCSE", "Geweke"}
