import numpy as np
import pytest

from voi.core import compute_nb_table, evpi, incremental
from voi.estimators import (
    JalalFit,
    N0Estimate,
    default_basis,
    estimate_n0_nested,
    estimate_n0_summary,
    estimate_with_uncertainty,
    evsi_heath,
    evsi_jalal,
    evsi_menzies,
    evsi_strong,
    heath_preposterior_variance,
    heath_variance_across_n,
    jalal_fit,
    _heath_evsi_from_sigma2,
    _heath_probe_indices,
)
from voi.metamodel import BasisSpec, evppi_regression
from voi.models.gaussian_toy import GaussianToyModel


class TestDefaultBasis:
    def test_explicit_wins(self):
        class M:
            preferred_basis = BasisSpec(tensor=True)

        explicit = BasisSpec(knots=4)
        assert default_basis(M(), explicit) is explicit

    def test_model_preference_used(self):
        class M:
            preferred_basis = BasisSpec(tensor=True)

        assert default_basis(M()).tensor is True

    def test_fallback_is_pairwise(self):
        class M:
            pass

        spec = default_basis(M())
        assert spec.pairwise is True and spec.tensor is False


class TestStrong:
    def test_matches_analytic_toy(self, toy, toy_psa, toy_nb, rng):
        est = evsi_strong(toy, toy_psa, toy.make_design(25), 1.0, rng, nb=toy_nb)
        assert est.method == "strong"
        assert est.value == pytest.approx(toy.analytic_evsi(25), rel=0.05)
        assert est.warnings == []

    def test_zero_design_is_exactly_zero(self, toy, toy_psa, toy_nb, rng):
        est = evsi_strong(toy, toy_psa, toy.make_design(0), 1.0, rng, nb=toy_nb)
        assert est.value == 0.0

    def test_keep_fits_attaches_diagnostics(self, toy, toy_psa, toy_nb, rng):
        est = evsi_strong(
            toy, toy_psa, toy.make_design(9), 1.0, rng, nb=toy_nb, keep_fits=True
        )
        assert len(est.details["fits"]) == 1
        fit = est.details["fits"][0]
        assert fit.fitted.shape == (toy_psa.n_samples,)
        assert est.details["inb"].reference == 0

    def test_summary_names_used(self, toy, toy_psa, toy_nb, rng):
        est = evsi_strong(
            toy, toy_psa, toy.make_design(9), 1.0, rng, nb=toy_nb, keep_fits=True
        )
        assert est.details["fits"][0].covariate_names == ["sample_mean"]


class TestMenzies:
    def test_matches_analytic_toy(self, toy, toy_psa, toy_nb, rng):
        est = evsi_menzies(
            toy, toy_psa, toy.make_design(4), 1.0, rng, n_outer=4000, nb=toy_nb
        )
        assert est.value == pytest.approx(toy.analytic_evsi(4), rel=0.08)
        assert est.evppi == pytest.approx(toy.analytic_evpi(), rel=0.06)
        assert est.details["pool"] == toy_psa.n_samples

    def test_empty_dataset_uniform_weights_give_exact_zero(
        self, toy, toy_psa, toy_nb, rng
    ):
        est = evsi_menzies(
            toy, toy_psa, toy.make_design(0), 1.0, rng, n_outer=500, nb=toy_nb
        )
        assert est.value == 0.0
        assert est.warnings == []
        # exact also when the pool is a strict subset of the PSA sample
        est = evsi_menzies(
            toy, toy_psa, toy.make_design(0), 1.0, rng,
            n_outer=100, pool_size=500, nb=toy_nb,
        )
        assert est.value == 0.0

    def test_flat_likelihood_gives_exact_zero(self, rng):
        # a questionnaire nobody answers carries data but no information:
        # every importance weight is uniform and the reweighted maxima all
        # collapse onto the current best
        import copy

        from voi.models.chronic_pain import ChronicPainModel, load_default_config

        cfg = copy.deepcopy(load_default_config())
        cfg["response_rate"] = 0.0
        model = ChronicPainModel(cfg)
        psa = model.sample_prior(600, rng)
        est = evsi_menzies(model, psa, model.make_design(150), model.default_wtp, rng)
        assert est.value == 0.0
        assert est.details["mean_ess"] == pytest.approx(psa.n_samples)

    def test_degeneracy_warning_threshold(self, toy, toy_psa, toy_nb, rng):
        # mean ESS can never reach the pool size itself, so a threshold just
        # above 1 must always trip on a real dataset
        est = evsi_menzies(
            toy,
            toy_psa,
            toy.make_design(40),
            1.0,
            rng,
            n_outer=200,
            nb=toy_nb,
            ess_frac=1.01,
        )
        assert any("degenerate" in w for w in est.warnings)

    def test_pool_validation(self, toy, toy_psa, toy_nb, rng):
        with pytest.raises(ValueError):
            evsi_menzies(
                toy, toy_psa, toy.make_design(4), 1.0, rng,
                pool_size=toy_psa.n_samples + 1, nb=toy_nb,
            )
        with pytest.raises(ValueError):
            evsi_menzies(
                toy, toy_psa, toy.make_design(4), 1.0, rng, n_outer=0, nb=toy_nb
            )


class TestN0:
    def test_nested_route_recovers_toy_n0(self, toy):
        est = estimate_n0_nested(
            toy,
            np.random.default_rng(11),
            probe_n=10,
            n_datasets=80,
            r_inner=400,
        )
        assert est.params == ["inb_mean"]
        assert 2.0 < est.by_name("inb_mean") < 7.0
        assert est.method == "nested"

    def test_summary_route_recovers_toy_n0(self, toy):
        est = estimate_n0_summary(
            toy, np.random.default_rng(12), probe_n=20, n_phi=150, n_reps=30
        )
        assert est.by_name("inb_mean") == pytest.approx(toy.analytic_n0, rel=0.25)

    def test_probe_validation(self, toy, rng):
        with pytest.raises(ValueError):
            estimate_n0_nested(toy, rng, probe_n=0)


@pytest.fixture(scope="module")
def fit(toy, toy_psa, toy_nb):
    return jalal_fit(toy_nb, toy_psa, ["inb_mean"])


class TestJalal:
    def test_matches_analytic_when_n0_known(self, toy, fit):
        for n in (4, 16, 64):
            assert fit.evsi(n, toy.analytic_n0) == pytest.approx(
                toy.analytic_evsi(n), rel=0.05
            )

    def test_zero_sample_size_exact_zero(self, fit):
        assert fit.evsi(0, 4.0) == 0.0

    def test_exactly_nondecreasing_in_n(self, fit):
        vals = [fit.evsi(n, 4.0) for n in (0, 1, 2, 4, 8, 16, 32, 64, 128, 512)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_zero_n0_means_full_information(self, fit, toy_nb):
        # with no prior resistance, one observation already buys the EVPPI
        assert fit.evsi(1, 0.0) == pytest.approx(evpi(toy_nb.values), rel=0.02)

    def test_n0_argument_forms_agree(self, toy, toy_psa, toy_nb):
        design = toy.make_design(9)
        n0est = N0Estimate(params=["inb_mean"], values=np.array([4.0]), method="x")
        forms = [n0est, {"inb_mean": 4.0}, 4.0, [4.0]]
        vals = [
            evsi_jalal(toy, toy_psa, design, 1.0, f, nb=toy_nb).value for f in forms
        ]
        assert len(set(vals)) == 1

    def test_negative_n0_rejected(self, fit):
        with pytest.raises(ValueError):
            fit.evsi(5, -1.0)

    def test_interaction_bases_rejected(self, toy_psa, toy_nb):
        with pytest.raises(ValueError, match="additive"):
            jalal_fit(toy_nb, toy_psa, ["inb_mean"], basis=BasisSpec(pairwise=True))
        with pytest.raises(ValueError, match="additive"):
            jalal_fit(toy_nb, toy_psa, ["inb_mean"], basis=BasisSpec(tensor=True))

    def test_estimate_reports_evppi_and_n0(self, toy, toy_psa, toy_nb):
        est = evsi_jalal(toy, toy_psa, toy.make_design(9), 1.0, 4.0, nb=toy_nb)
        assert est.method == "jalal"
        assert est.evppi == pytest.approx(evpi(toy_nb.values), rel=0.02)
        assert est.details["n0"] == {"inb_mean": 4.0}

    def test_fit_reuse_matches_fresh(self, toy, toy_psa, toy_nb, fit):
        a = evsi_jalal(toy, toy_psa, toy.make_design(16), 1.0, 4.0, nb=toy_nb)
        b = evsi_jalal(toy, toy_psa, toy.make_design(16), 1.0, 4.0, fit=fit)
        assert a.value == pytest.approx(b.value)


class _FullyInformative(GaussianToyModel):
    """Posterior collapses onto the generating value: a perfect study."""

    def posterior_sample(self, dataset, n, rng, mh=None):
        mu = float(dataset.origin_phi[0])
        from voi.core import PsaSet

        return PsaSet(names=list(self.param_names), values=np.full((n, 1), mu))


class _Uninformative(GaussianToyModel):
    """Posterior ignores the data entirely: a worthless study."""

    def posterior_sample(self, dataset, n, rng, mh=None):
        return self.sample_prior(n, rng)


class TestHeath:
    def test_matches_analytic_toy(self, toy, toy_psa, toy_nb, rng):
        est = evsi_heath(
            toy, toy_psa, toy.make_design(4), 1.0, rng, q=25, r_inner=600, nb=toy_nb
        )
        assert est.value == pytest.approx(toy.analytic_evsi(4), rel=0.08)
        assert len(est.details["sigma2"]) == 2

    def test_zero_design_exact_zero(self, toy, toy_psa, toy_nb, rng):
        est = evsi_heath(toy, toy_psa, toy.make_design(0), 1.0, rng, nb=toy_nb)
        assert est.value == 0.0

    def test_boundary_map_zero_and_evppi(self, toy_psa, toy_nb):
        # the moment-matching map at its two variance extremes: no
        # information reproduces zero, full information reproduces EVPPI
        ev = evppi_regression(toy_nb, toy_psa, ["inb_mean"])
        zeros = np.zeros(2)
        assert _heath_evsi_from_sigma2(ev, zeros, 0) == 0.0
        mu_var = ev.mu.var(axis=0, ddof=1)
        assert _heath_evsi_from_sigma2(ev, mu_var, 0) == pytest.approx(ev.value)

    def test_perfect_study_capped_at_evppi(self, toy_psa, rng):
        model = _FullyInformative()
        nb = compute_nb_table(model, toy_psa, 1.0)
        ev = evppi_regression(nb, toy_psa, ["inb_mean"])
        est = evsi_heath(
            model, toy_psa, model.make_design(5), 1.0, rng,
            q=8, r_inner=200, nb=nb, evppi=ev,
        )
        assert est.value == pytest.approx(ev.value)
        assert any("capped" in w for w in est.warnings)

    def test_worthless_study_near_zero(self, toy_psa, rng):
        model = _Uninformative()
        nb = compute_nb_table(model, toy_psa, 1.0)
        ev = evppi_regression(nb, toy_psa, ["inb_mean"])
        est = evsi_heath(
            model, toy_psa, model.make_design(50), 1.0, rng,
            q=10, r_inner=2000, nb=nb, evppi=ev,
        )
        assert est.value < 0.15 * ev.value

    def test_probe_indices_stratified(self, rng):
        mu = np.column_stack([np.zeros(100), np.linspace(0, 1, 100)])
        idx = _heath_probe_indices(mu, 0, 10, rng)
        assert idx.shape == (10,)
        # one probe per decile of the fitted ordering
        assert sorted(mu[idx, 1] // 0.1) == list(range(10))

    def test_variance_result_fields(self, toy, toy_psa, toy_nb, rng):
        hv = heath_preposterior_variance(
            toy, toy_psa, toy.make_design(4), 1.0, rng, q=6, r_inner=150, nb=toy_nb
        )
        assert hv.sigma2.shape == (2,)
        assert hv.sigma2[0] == 0.0
        assert hv.probe_var.shape == (6, 2)
        assert np.all(hv.sigma2 <= hv.mu_var + 1e-12)


@pytest.fixture(scope="module")
def curve(toy, toy_psa, toy_nb):
    return heath_variance_across_n(
        toy, toy_psa, [2, 8, 32], 1.0, np.random.default_rng(3),
        q=12, r_inner=300, nb=toy_nb,
    )


class TestHeathCurve:
    def test_exactly_nondecreasing(self, curve):
        vals = [curve.evsi(n) for n in (0, 1, 2, 4, 8, 16, 32, 64, 256)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_zero_at_zero(self, curve):
        assert curve.evsi(0) == 0.0
        assert np.all(curve.sigma2(0) == 0.0)

    def test_tracks_analytic_curve(self, toy, curve):
        for n in (4, 16):
            assert curve.evsi(n) == pytest.approx(toy.analytic_evsi(n), rel=0.15)

    def test_residual_shape(self, curve):
        assert curve.residuals().shape == (12, 2)

    def test_needs_three_sizes(self, toy, toy_psa, toy_nb, rng):
        with pytest.raises(ValueError, match="3 distinct"):
            heath_variance_across_n(
                toy, toy_psa, [5, 5, 10], 1.0, rng, nb=toy_nb
            )


class TestReplicateHarness:
    def test_summary_fields(self, rng):
        out = estimate_with_uncertainty(
            lambda g: float(g.normal(10.0, 1.0)), reps=40, rng=rng
        )
        assert out.reps == 40
        assert out.lo <= out.mean <= out.hi
        assert out.mean == pytest.approx(10.0, abs=1.0)

    def test_deterministic_given_seed(self):
        f = lambda g: float(g.normal())
        a = estimate_with_uncertainty(f, 10, np.random.default_rng(1))
        b = estimate_with_uncertainty(f, 10, np.random.default_rng(1))
        np.testing.assert_array_equal(a.values, b.values)

    def test_needs_two_reps(self, rng):
        with pytest.raises(ValueError):
            estimate_with_uncertainty(lambda g: 0.0, 1, rng)
