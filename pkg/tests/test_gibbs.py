import numpy as np
import pytest

import conjugate_cases
from rtjoint.gibbs import GibbsSampler, SamplerError, run_chain, run_chain_quadratic, time_scale
from rtjoint.model import ObservedData, RunConfig, ValidationError
from rtjoint.simulate import simulate_dataset


@pytest.fixture(scope="module")
def small():
    data, truth = simulate_dataset(100, 10, rng=42)
    return data, truth


@pytest.fixture(scope="module")
def cases():
    old = conjugate_cases.N_DRAWS
    conjugate_cases.N_DRAWS = 10_000
    try:
        return conjugate_cases.all_cases()
    finally:
        conjugate_cases.N_DRAWS = old


class TestTimeScale:
    def test_positions(self):
        x = time_scale(np.arange(1, 41), 40)
        assert x[0] == 0 and x[-1] == pytest.approx(0.975)
        np.testing.assert_allclose(time_scale([1, 2], 2), [0, 0.5])

    def test_not_a_permutation(self):
        with pytest.raises(ValueError):
            time_scale([1, 1, 3], 3)


class TestConjugateBlocks:
    """Each block on a 2x2 diagonal-mask design, one observed cell per person
    and item, against its closed form. 10,000 draws here, 50,000 in the gate."""

    def test_all_within_three_mcse(self, cases):
        bad = [(c.name, round(c.z_mean(), 2), round(c.z_var(), 2))
               for c in cases if not c.passes(3.0)]
        assert not bad

    def test_guessing_odds(self):
        s = conjugate_cases._sampler(np.ones((2, 2)), np.zeros((2, 2)),
                                     mask_y=np.ones((2, 2)), mask_t=np.ones((2, 2)))
        s.config = s.config.with_(guess=True)
        st = s.state
        st.theta, st.a, st.b, st.c = np.zeros(2), np.ones(2), np.zeros(2), np.full(2, 0.2)
        st.y = np.ones((2, 2))
        hits = 0
        for _ in range(6000):
            st.c = np.full(2, 0.2)
            s.sample_guessing()
            hits += st.s[0, 0]
        assert hits / 6000 == pytest.approx(2 / 3, abs=3 * np.sqrt(2 / 9 / 6000))

    def test_no_guessing_means_no_guesses(self, small):
        s = GibbsSampler(small[0], RunConfig(seed=1))
        s.sample_guessing()
        assert s.state.s.all() and np.all(s.state.c == 0)

    def test_sigma2_posterior_parameters(self):
        # two residuals 0.1, -0.1 under IG(1, 1) give IG(2, 1.01)
        from scipy import stats
        y = np.ones((2, 2))
        s = conjugate_cases._sampler(y, np.zeros((2, 2)), mask_t=np.array([[1.0, 0.0], [1.0, 0.0]]))
        st = s.state
        st.lam, st.phi, st.zeta = np.zeros(2), np.ones(2), np.zeros(2)
        st.rt = np.array([[0.1, 0.0], [-0.1, 0.0]])
        draws = np.array([(s.sample_sigma2(), st.sigma2[0])[1] for _ in range(20_000)])
        assert stats.kstest(draws, stats.invgamma(2, scale=1.01).cdf).pvalue > 1e-3

    def test_scatter_matrix(self, monkeypatch):
        from rtjoint import _random
        seen = {}

        def capture(df, scale, rng):
            seen["df"], seen["scale"] = df, scale
            return np.eye(2)

        monkeypatch.setattr(_random, "inverse_wishart", capture)
        s = conjugate_cases._sampler(np.ones((3, 2)), np.zeros((3, 2)),
                                     mask_y=np.ones((3, 2)), mask_t=np.ones((3, 2)))
        s.state.theta = np.array([1.0, 0.0, -1.0])
        s.state.zeta = np.array([0.0, 1.0, -1.0])
        s.sample_population_hyper()
        np.testing.assert_allclose(seen["scale"], np.eye(2) + [[2, 1], [1, 2]])
        assert seen["df"] == 4 + 3

    def test_fixed_parameters_unchanged(self, small):
        data, truth = small
        cfg = RunConfig(xg=5, seed=2, fixed_a=truth.items.a, fixed_b=truth.items.b)
        ch = run_chain(data, cfg.with_(ident=2))
        np.testing.assert_allclose(ch.MAB[:, :, 0], np.broadcast_to(truth.items.a, (5, 10)))
        np.testing.assert_allclose(ch.MAB[:, :, 1], np.broadcast_to(truth.items.b, (5, 10)))

    def test_unit_time_discrimination(self, small):
        ch = run_chain(small[0], RunConfig(xg=5, seed=3, td=False))
        assert np.all(ch.MAB[:, :, 2] == 1.0)

    def test_design_missing_cells_do_not_count(self):
        data, _ = simulate_dataset(30, 4, rng=5)
        mask = np.ones((30, 4))
        mask[:, 3] = 0
        y = np.where(mask == 1, data.y, np.nan)
        rt = np.where(mask == 1, data.rt, np.nan)
        d = ObservedData(y=y, rt=rt, mbd_y=mask, mbd_t=mask)
        s = GibbsSampler(d, RunConfig(seed=6))
        # garbage in the unadministered column must not matter
        s.state.y[:, 3] = 1.0
        s.state.rt[:, 3] = 1e6
        s.sample_sigma2()
        assert s.state.sigma2[3] < 100

    def test_mar_imputation_limit(self):
        data, _ = simulate_dataset(10, 3, rng=7)
        rt = data.rt.copy()
        rt[0, 0] = np.nan
        s = GibbsSampler(ObservedData(y=data.y, rt=rt), RunConfig(seed=8))
        st = s.state
        st.sigma2 = np.full(3, 1e-20)
        s.impute_missing()
        assert st.rt[0, 0] == pytest.approx(st.lam[0] - st.phi[0] * st.zeta[0])


class TestIdentification:
    @pytest.mark.parametrize("ident", [1, 2])
    def test_invariants(self, small, ident):
        ch = run_chain(small[0], RunConfig(xg=100, seed=9, ident=ident))
        np.testing.assert_allclose(np.prod(ch.MAB[:, :, 0], axis=1), 1.0, atol=1e-10)
        np.testing.assert_allclose(np.prod(ch.MAB[:, :, 2], axis=1), 1.0, atol=1e-10)
        if ident == 1:
            np.testing.assert_allclose(ch.MAB[:, :, 1].sum(axis=1), 0.0, atol=1e-10)
            np.testing.assert_allclose(ch.MAB[:, :, 3].sum(axis=1), 0.0, atol=1e-10)
        else:
            np.testing.assert_allclose(ch.MmuP, 0.0, atol=1e-12)

    def test_rescaling_preserves_predictions(self, small):
        s = GibbsSampler(small[0], RunConfig(seed=10, ident=2))
        for _ in range(3):
            s.sweep()
        st = s.state
        st.a, st.theta = st.a * 1.7, st.theta / 1.7
        st.phi, st.zeta = st.phi * 0.6, st.zeta / 0.6
        eta0, mean0 = s.eta().copy(), s.rt_mean().copy()
        s.apply_identification()
        np.testing.assert_allclose(s.eta(), eta0, atol=1e-10)
        np.testing.assert_allclose(s.rt_mean(), mean0, atol=1e-10)
        assert np.prod(st.a) == pytest.approx(1.0)
        assert np.prod(st.phi) == pytest.approx(1.0)

    def test_bracket_form_shift_exact(self, small):
        s = GibbsSampler(small[0], RunConfig(seed=11, ident=1, par1=True))
        s.sweep()
        eta0, mean0 = s.eta().copy(), s.rt_mean().copy()
        s.apply_identification()
        np.testing.assert_allclose(s.eta(), eta0, atol=1e-10)
        np.testing.assert_allclose(s.rt_mean(), mean0, atol=1e-10)


class TestRun:
    def test_store_shapes(self, small):
        ch = run_chain(small[0], RunConfig(xg=10, seed=12))
        assert ch.MAB.shape == (10, 10, 4) and ch.MSP.shape == (10, 2, 2)
        assert ch.theta.shape == (10, 100)

    def test_determinism(self, small):
        a = run_chain(small[0], RunConfig(xg=30, seed=13))
        b = run_chain(small[0], RunConfig(xg=30, seed=13))
        assert a.MAB.tobytes() == b.MAB.tobytes()
        assert a.theta.tobytes() == b.theta.tobytes()

    def test_guessing_run(self):
        data, _ = simulate_dataset(200, 8, rng=14, guess=0.2)
        ch = run_chain(data, RunConfig(xg=200, seed=15, guess=True))
        c = ch.retained("Mguess").mean(axis=0)
        assert np.all((c > 0.05) & (c < 0.5))
        assert "Item.Guessing" in ch.post_means

    def test_covariates(self):
        rng = np.random.default_rng(16)
        x = rng.normal(size=(300, 1))
        data, _ = simulate_dataset(300, 10, rng=17, xpa=x, beta_theta=[0.8])
        ch = run_chain(data, RunConfig(xg=400, seed=18))
        beta = ch.retained("beta_theta").mean(axis=0)
        assert beta[0] == pytest.approx(0.8, abs=0.25)

    def test_item_covariates(self):
        data, truth = simulate_dataset(100, 12, rng=19)
        xia = truth.items.b[:, None] + np.random.default_rng(20).normal(0, 0.1, (12, 1))
        d = ObservedData(y=data.y, rt=data.rt, xia=xia)
        ch = run_chain(d, RunConfig(xg=200, seed=21))
        assert "beta_items" in ch.betas

    def test_residual_accumulation(self, small):
        ch = run_chain(small[0], RunConfig(xg=60, seed=22, residual=True, xgresid=20))
        assert ch.fit.n_draws == 40

    def test_rejects_quadratic_config(self, small):
        with pytest.raises(ValidationError):
            run_chain(small[0], RunConfig(speed_model="quadratic"))

    def test_degenerate_persons_abort(self, small):
        s = GibbsSampler(small[0], RunConfig(seed=23))
        s.state.theta = np.full(100, np.nan)
        with pytest.raises(SamplerError):
            s.sample_population_hyper()

    def test_quadratic_shapes(self):
        data, _ = simulate_dataset(40, 6, rng=24, speed_model="quadratic")
        ch = run_chain_quadratic(data, RunConfig(xg=20, seed=25))
        assert ch.MSP.shape == (20, 4, 4) and ch.zeta.shape == (20, 40, 3)
        np.testing.assert_allclose(ch.MSP[:, 1, 2], 0.0)
