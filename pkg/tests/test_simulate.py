import numpy as np
import pytest

from rtjoint.model import ItemBank, ValidationError
from rtjoint.simulate import (
    MissingSpec,
    draw_from_prior,
    person_covariance,
    pretest_design,
    simulate_dataset,
)
from rtjoint.model import ItemPrior, PopulationPrior


def _items(k, sigma2=0.3):
    return ItemBank(a=np.ones(k), b=np.zeros(k), phi=np.ones(k), lam=np.full(k, 4.0),
                    sigma2=np.full(k, sigma2))


class TestSimulate:
    def test_shapes_and_reproducibility(self):
        d1, t1 = simulate_dataset(50, 8, rng=1)
        d2, _ = simulate_dataset(50, 8, rng=1)
        assert d1.y.shape == (50, 8) and t1.items.n_items == 8
        np.testing.assert_array_equal(d1.rt, d2.rt)

    def test_noise_free_rt(self):
        d, t = simulate_dataset(20, 5, rng=2, items=_items(5, 1e-30))
        expected = t.items.lam - t.items.phi * t.persons.zeta[:, None]
        np.testing.assert_allclose(d.rt, expected, atol=1e-12)

    def test_coin_flip_accuracy(self):
        n, k = 2000, 10
        sigma_p = np.diag([1e-12, 0.25])
        d, _ = simulate_dataset(n, k, rng=3, items=_items(k), sigma_p=sigma_p)
        assert abs(d.y.mean() - 0.5) < 3 * np.sqrt(0.25 / (n * k))

    def test_person_correlation(self):
        _, t = simulate_dataset(20_000, 2, rng=4, sigma_p=person_covariance(rho=0.4))
        r = np.corrcoef(t.persons.theta, t.persons.zeta)[0, 1]
        assert r == pytest.approx(0.4, abs=0.02)
        assert t.rho == pytest.approx(0.4)

    def test_missing(self):
        mask, _ = pretest_design([10, 10], 3, 2)
        d, _ = simulate_dataset(20, 7, rng=5,
                                missing=MissingSpec(mar_t=0.2, mbd_y=mask, mbd_t=mask))
        assert np.all(np.isnan(d.y[mask == 0]))
        assert np.isnan(d.rt[mask == 1]).any()

    def test_bad_mask(self):
        with pytest.raises(ValidationError):
            simulate_dataset(4, 3, rng=6, missing=MissingSpec(mbd_y=np.full((4, 3), 2.0)))

    def test_quadratic(self):
        d, t = simulate_dataset(30, 6, rng=7, speed_model="quadratic")
        assert t.persons.zeta.shape == (30, 3) and t.x.shape == (30, 6)


class TestDesign:
    def test_pretest_rows(self):
        # three groups, a 170-item common block plus disjoint 10-item blocks
        mask, group = pretest_design([5, 5, 5], 170, 10)
        assert mask.shape == (15, 200)
        assert np.all(mask.sum(axis=1) == 180)
        assert np.all(mask[:, 170:].sum(axis=0) == 5)
        assert np.bincount(group).tolist() == [5, 5, 5]


class TestPriorDraw:
    def test_positive_discriminations(self):
        rng = np.random.default_rng(8)
        d = draw_from_prior(10, 5, ItemPrior(nu_i=10, v_i=0.5 * np.eye(4)),
                            PopulationPrior(nu_p=8), rng)
        assert np.all(d["a"] > 0) and np.all(d["phi"] > 0)
        assert d["sigma_p"].shape == (2, 2)
