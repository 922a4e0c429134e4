import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voi.bayes import (
    InfeasibleMomentsError,
    MhConfig,
    PriorSpec,
    conjugate_beta_binomial,
    effective_sample_size,
    mh_sample,
    moment_to_beta,
)

ALL_SPECS = [
    PriorSpec.beta(2.0, 5.0),
    PriorSpec.normal(1.5, 4.0),
    PriorSpec.lognormal(-0.5, 0.4),
    PriorSpec.gamma(3.0, 2.0),
    PriorSpec.uniform(-1.0, 3.0),
]


class TestPriorSpec:
    @pytest.mark.parametrize(
        "family,params",
        [
            ("beta", (0.0, 1.0)),
            ("beta", (1.0, -2.0)),
            ("normal", (0.0, 0.0)),
            ("lognormal", (0.0, -1.0)),
            ("gamma", (-1.0, 1.0)),
            ("uniform", (2.0, 2.0)),
            ("cauchy", (0.0, 1.0)),
        ],
    )
    def test_invalid_params_raise(self, family, params):
        with pytest.raises(ValueError):
            PriorSpec(family, params)

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.family)
    def test_sample_moments_match_closed_forms(self, spec, rng):
        x = spec.sample(rng, 200_000)
        assert abs(x.mean() - spec.mean()) < 4.0 * math.sqrt(spec.var() / x.size) + 1e-3
        assert abs(x.var(ddof=1) - spec.var()) / spec.var() < 0.05

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.family)
    def test_logpdf_integrates_to_one(self, spec):
        lo = spec.mean() - 12 * math.sqrt(spec.var())
        hi = spec.mean() + 12 * math.sqrt(spec.var())
        if spec.family == "beta":
            lo, hi = 1e-9, 1 - 1e-9
        elif spec.family in ("lognormal", "gamma"):
            lo = 1e-9
        elif spec.family == "uniform":
            lo, hi = spec.params
        grid = np.linspace(lo, hi, 200_001)
        dens = np.exp(spec.logpdf(grid))
        assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=2e-3)

    def test_logpdf_zero_outside_support(self):
        assert PriorSpec.gamma(2.0, 1.0).logpdf(-1.0) == -np.inf
        assert PriorSpec.beta(2.0, 2.0).logpdf(1.5) == -np.inf
        assert PriorSpec.uniform(0.0, 1.0).logpdf(2.0) == -np.inf

    def test_scalar_logpdf_returns_float(self):
        out = PriorSpec.normal(0.0, 1.0).logpdf(0.0)
        assert isinstance(out, float)
        assert out == pytest.approx(-0.5 * math.log(2 * math.pi))


class TestConjugate:
    def test_beta_binomial_update(self):
        post = conjugate_beta_binomial(PriorSpec.beta(2.0, 3.0), successes=7, trials=10)
        assert post.params == (9.0, 6.0)

    def test_requires_beta_prior(self):
        with pytest.raises(ValueError):
            conjugate_beta_binomial(PriorSpec.normal(0, 1), 1, 2)

    def test_invalid_counts(self):
        with pytest.raises(ValueError):
            conjugate_beta_binomial(PriorSpec.beta(1, 1), successes=5, trials=3)
        with pytest.raises(ValueError):
            conjugate_beta_binomial(PriorSpec.beta(1, 1), successes=-1, trials=3)

    def test_matches_mh_on_logit_scale(self, rng):
        # the same posterior reached two ways: exact conjugacy, and a random
        # walk on logit(p) with the Jacobian folded into the target
        prior = PriorSpec.beta(3.0, 4.0)
        x, n = 11, 30
        post = conjugate_beta_binomial(prior, x, n)

        def log_target(z):
            p = 1.0 / (1.0 + math.exp(-z[0]))
            return (
                x * math.log(p)
                + (n - x) * math.log1p(-p)
                + float(prior.logpdf(p))
                + math.log(p * (1 - p))
            )

        chain, diag = mh_sample(
            log_target, np.array([0.0]), MhConfig.for_draws(4000, burn_in=1500), rng
        )
        p_draws = 1.0 / (1.0 + np.exp(-chain[:, 0]))
        se = math.sqrt(post.var() / min(diag.ess[0], p_draws.size))
        assert abs(p_draws.mean() - post.mean()) < 3.0 * se


class TestMomentToBeta:
    @given(
        mean=st.floats(0.05, 0.95),
        frac=st.floats(0.05, 0.9),
    )
    @settings(max_examples=60, deadline=None)
    def test_round_trip(self, mean, frac):
        sd = frac * math.sqrt(mean * (1 - mean))
        spec = moment_to_beta(mean, sd)
        assert spec.mean() == pytest.approx(mean, rel=1e-9)
        assert math.sqrt(spec.var()) == pytest.approx(sd, rel=1e-9)

    def test_infeasible_sd(self):
        with pytest.raises(InfeasibleMomentsError):
            moment_to_beta(0.5, 0.5)
        with pytest.raises(InfeasibleMomentsError):
            moment_to_beta(0.9, 0.31)

    def test_invalid_mean_or_sd(self):
        with pytest.raises(InfeasibleMomentsError):
            moment_to_beta(0.0, 0.1)
        with pytest.raises(InfeasibleMomentsError):
            moment_to_beta(0.5, 0.0)


class TestMhConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            MhConfig(steps=100, burn_in=100)
        with pytest.raises(ValueError):
            MhConfig(steps=100, burn_in=-1)
        with pytest.raises(ValueError):
            MhConfig(steps=100, burn_in=10, thinning=0)
        with pytest.raises(ValueError):
            MhConfig(steps=100, burn_in=10, target_accept=1.0)

    def test_for_draws_row_count(self, rng):
        cfg = MhConfig.for_draws(250, burn_in=300, thinning=3)
        chain, _ = mh_sample(lambda z: -0.5 * float(z @ z), np.zeros(2), cfg, rng)
        assert chain.shape == (250, 2)


class TestEffectiveSampleSize:
    def test_iid_chain_near_n(self, rng):
        x = rng.standard_normal(4000)
        assert 2500 < effective_sample_size(x) <= 4000

    def test_ar1_chain_reduced(self, rng):
        rho = 0.9
        n = 20_000
        eps = rng.standard_normal(n)
        x = np.empty(n)
        x[0] = eps[0]
        for t in range(1, n):
            x[t] = rho * x[t - 1] + math.sqrt(1 - rho**2) * eps[t]
        ess = effective_sample_size(x)
        expected = n * (1 - rho) / (1 + rho)
        assert 0.5 * expected < ess < 2.0 * expected

    def test_short_or_constant_chain(self):
        assert effective_sample_size(np.array([1.0, 2.0])) == 2.0
        assert effective_sample_size(np.ones(100)) == 100.0


class TestMhSample:
    def test_recovers_normal_target(self, rng):
        mean = np.array([1.0, -2.0])

        def log_target(z):
            return -0.5 * float((z - mean) @ (z - mean)) / 0.25

        chain, diag = mh_sample(
            log_target, np.zeros(2), MhConfig.for_draws(6000, burn_in=2000), rng
        )
        for j in range(2):
            se = 0.5 / math.sqrt(min(diag.ess[j], chain.shape[0]))
            assert abs(chain[:, j].mean() - mean[j]) < 4.0 * se
            assert chain[:, j].std(ddof=1) == pytest.approx(0.5, rel=0.15)
        assert 0.05 <= diag.acceptance_rate <= 0.95

    def test_seeded_runs_identical(self):
        cfg = MhConfig.for_draws(500, burn_in=200, seed=99)
        a, _ = mh_sample(lambda z: -0.5 * float(z @ z), np.zeros(1), cfg)
        b, _ = mh_sample(lambda z: -0.5 * float(z @ z), np.zeros(1), cfg)
        np.testing.assert_array_equal(a, b)

    def test_needs_rng_or_seed(self):
        with pytest.raises(ValueError):
            mh_sample(lambda z: 0.0, np.zeros(1), MhConfig(steps=10, burn_in=1))

    def test_non_finite_init_raises(self, rng):
        with pytest.raises(ValueError):
            mh_sample(
                lambda z: -np.inf, np.zeros(1), MhConfig(steps=10, burn_in=1), rng
            )

    def test_bad_proposal_sd_raises(self, rng):
        cfg = MhConfig(steps=10, burn_in=1, proposal_sd=0.0)
        with pytest.raises(ValueError):
            mh_sample(lambda z: 0.0, np.zeros(1), cfg, rng)
