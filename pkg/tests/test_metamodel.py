import numpy as np
import pytest

from voi.core import PsaSet, incremental
from voi.metamodel import BasisSpec, evppi_regression, fit_metamodel
from voi.models.gaussian_toy import GaussianToyModel


class TestBasisSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            BasisSpec(degree=4)
        with pytest.raises(ValueError):
            BasisSpec(knots=-1)
        with pytest.raises(ValueError):
            BasisSpec(lambda_min=0.0)
        with pytest.raises(ValueError):
            BasisSpec(lambda_min=10.0, lambda_max=1.0)
        with pytest.raises(ValueError):
            BasisSpec(n_lambda=0)

    def test_grid_endpoints(self):
        g = BasisSpec(n_lambda=5, lambda_min=1e-3, lambda_max=10.0).grid()
        assert g[0] == pytest.approx(1e-3)
        assert g[-1] == pytest.approx(10.0)
        assert np.all(np.diff(g) > 0)
        assert BasisSpec(n_lambda=1).grid().size == 1


class TestFitMetamodel:
    def test_recovers_smooth_function(self, rng):
        x = rng.uniform(-3, 3, 2000)
        y = np.sin(x) + 0.1 * rng.standard_normal(2000)
        fit = fit_metamodel(y, x)
        assert np.sqrt(np.mean((fit.fitted - np.sin(x)) ** 2)) < 0.05
        assert fit.covariate_names == ["x0"]

    def test_terms_plus_intercept_equal_fitted(self, rng):
        x = rng.uniform(0, 1, (500, 3))
        y = x @ [1.0, -2.0, 0.5] + 0.05 * rng.standard_normal(500)
        fit = fit_metamodel(y, x, names=["a", "b", "c"])
        np.testing.assert_allclose(
            fit.intercept + fit.term_values.sum(axis=1), fit.fitted, rtol=1e-10
        )
        assert fit.n_terms == 3

    def test_constant_covariate_dropped(self, rng):
        x = np.column_stack([rng.uniform(0, 1, 300), np.full(300, 2.0)])
        y = 3.0 * x[:, 0] + 0.01 * rng.standard_normal(300)
        fit = fit_metamodel(y, x, names=["live", "flat"])
        assert fit.dropped == ["flat"]
        assert fit.covariate_names == ["live"]

    def test_all_constant_gives_mean_fit(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        fit = fit_metamodel(y, np.ones((4, 1)))
        np.testing.assert_allclose(fit.fitted, 2.5)
        assert fit.n_terms == 0
        assert fit.edf == 1.0

    def test_duplicate_covariate_still_predicts(self, rng):
        # coefficients are unidentified but the penalty keeps the system
        # solvable; the shared effect splits between the twins
        x = rng.uniform(0, 1, 400)
        fit = fit_metamodel(np.sin(x), np.column_stack([x, x]))
        assert np.all(np.isfinite(fit.fitted))
        assert np.sqrt(np.mean((fit.fitted - np.sin(x)) ** 2)) < 0.02

    def test_input_validation(self, rng):
        x = rng.uniform(0, 1, 10)
        with pytest.raises(ValueError):
            fit_metamodel(np.zeros(5), x)
        with pytest.raises(ValueError):
            fit_metamodel(np.zeros(2), x[:2])
        with pytest.raises(ValueError):
            fit_metamodel(np.full(10, np.nan), x)
        with pytest.raises(ValueError):
            fit_metamodel(np.zeros(10), x, names=["a", "b"])

    def test_noise_is_smoothed_hard(self, rng):
        y = rng.standard_normal(1500)
        x = rng.uniform(0, 1, 1500)
        fit = fit_metamodel(y, x)
        # pure noise: GCV should pick heavy smoothing, leaving few degrees
        assert fit.edf < 6.0
        assert np.std(fit.fitted) < 0.3 * np.std(y)

    def test_pairwise_adds_product_terms(self, rng):
        x = rng.uniform(0.5, 1.5, (1500, 2))
        y = x[:, 0] * x[:, 1] + 0.05 * rng.standard_normal(1500)
        fit = fit_metamodel(y, x, names=["a", "b"], basis=BasisSpec(pairwise=True))
        assert "a*b" in fit.covariate_names
        assert np.sqrt(np.mean((fit.fitted - x[:, 0] * x[:, 1]) ** 2)) < 0.05

    def test_tensor_follows_curved_ridge(self, rng):
        # truth depends on the pair only through x * exp(z): additive fits
        # flatten it, a spline in the raw product bends along the wrong level
        # sets, the tensor block follows the ridge
        n = 4000
        x = rng.uniform(0.5, 2.0, n)
        z = rng.uniform(-1.0, 1.0, n)
        truth = np.tanh(x * np.exp(z) - 1.5)
        y = truth + 0.05 * rng.standard_normal(n)
        cov = np.column_stack([x, z])

        def rmse(basis):
            fit = fit_metamodel(y, cov, names=["x", "z"], basis=basis)
            return np.sqrt(np.mean((fit.fitted - truth) ** 2))

        additive = rmse(BasisSpec())
        tensor = rmse(BasisSpec(tensor=True))
        assert tensor < 0.5 * additive
        assert tensor < 0.08

    def test_tensor_term_named(self, rng):
        x = rng.uniform(0, 1, (800, 2))
        y = np.sin(3 * x[:, 0] * x[:, 1])
        fit = fit_metamodel(y, x, names=["a", "b"], basis=BasisSpec(tensor=True))
        assert "a:b" in fit.covariate_names

    def test_tensor_noop_with_single_covariate(self, rng):
        x = rng.uniform(0, 1, 500)
        fit = fit_metamodel(np.sin(x), x, basis=BasisSpec(tensor=True))
        assert fit.covariate_names == ["x0"]


class TestEvppiRegression:
    def test_toy_full_information(self, toy, toy_psa, toy_nb):
        # the single focal parameter IS the incremental net benefit, so
        # EVPPI on it equals EVPI: exactly on the shared sample, and near
        # the closed form up to Monte Carlo error of the sample itself
        from voi.core import evpi

        res = evppi_regression(toy_nb, toy_psa, ["inb_mean"])
        assert res.value == pytest.approx(evpi(toy_nb.values), rel=0.01)
        assert res.value == pytest.approx(toy.analytic_evpi(), rel=0.06)
        np.testing.assert_array_equal(res.mu[:, 0], 0.0)
        assert len(res.fits) == 1

    def test_irrelevant_parameter_gives_near_zero(self, rng):
        model = GaussianToyModel()
        psa = model.sample_prior(4000, rng)
        noise = PsaSet(
            names=["inb_mean", "junk"],
            values=np.column_stack([psa.values[:, 0], rng.standard_normal(4000)]),
        )
        nb = model.net_benefit_batch(psa.values, 1.0)
        res = evppi_regression(nb, noise, ["junk"])
        assert res.value < 0.05 * model.analytic_evpi()

    def test_accepts_incremental_table(self, toy_psa, toy_nb):
        inb = incremental(toy_nb)
        a = evppi_regression(toy_nb, toy_psa, ["inb_mean"])
        b = evppi_regression(inb, toy_psa, ["inb_mean"])
        assert a.value == pytest.approx(b.value)

    def test_validation(self, toy_psa, toy_nb):
        with pytest.raises(ValueError):
            evppi_regression(toy_nb, toy_psa, [])
        short = PsaSet(names=["inb_mean"], values=np.zeros((3, 1)))
        with pytest.raises(ValueError):
            evppi_regression(toy_nb, short, ["inb_mean"])
