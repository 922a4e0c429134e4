import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from voi.core import (
    Dataset,
    ModelContractError,
    NetBenefitTable,
    PsaSet,
    StudyDesign,
    compute_nb_table,
    enbs,
    evpi,
    evsi_nested_mc,
    incremental,
)
from voi.models.gaussian_toy import GaussianToyModel


class TestPsaSet:
    def test_round_trip_and_access(self):
        psa = PsaSet(names=["a", "b"], values=[[1.0, 2.0], [3.0, 4.0]])
        assert psa.n_samples == 2
        np.testing.assert_array_equal(psa.column("b"), [2.0, 4.0])
        np.testing.assert_array_equal(psa.subset(["b", "a"]), [[2.0, 1.0], [4.0, 3.0]])

    def test_shape_and_name_validation(self):
        with pytest.raises(ValueError):
            PsaSet(names=["a"], values=np.zeros(3))
        with pytest.raises(ValueError):
            PsaSet(names=["a", "b"], values=np.zeros((3, 1)))
        with pytest.raises(ValueError):
            PsaSet(names=["a", "a"], values=np.zeros((3, 2)))


class TestStudyDesign:
    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            StudyDesign(n=-1)
        with pytest.raises(ValueError):
            StudyDesign(n=2.5)

    def test_zero_is_allowed(self):
        assert StudyDesign(n=0).n == 0


class TestIncremental:
    def test_reference_column_is_exact_zero(self):
        nb = NetBenefitTable(strategies=["s0", "s1"], values=[[5.0, 7.0], [1.0, -1.0]])
        inb = incremental(nb)
        np.testing.assert_array_equal(inb.values[:, 0], 0.0)
        np.testing.assert_array_equal(inb.values[:, 1], [2.0, -2.0])

    def test_reference_out_of_range(self):
        with pytest.raises(ValueError):
            incremental(np.zeros((2, 2)), reference=2)

    @given(
        vals=arrays(
            np.float64,
            (7, 3),
            elements=st.floats(-1e6, 1e6, allow_nan=False),
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_evpi_invariant_to_reference_shift(self, vals):
        # shifting every strategy by the reference column leaves the row
        # maxima ordering, and therefore the EVPI, unchanged
        assert evpi(incremental(vals).values) == pytest.approx(
            evpi(vals), rel=1e-9, abs=1e-7
        )


class TestEvpi:
    def test_hand_value(self):
        # E[max] = (1 + 0)/2 = 0.5, best single arm = max(0, 0) = 0
        vals = np.array([[0.0, 1.0], [0.0, -1.0]])
        assert evpi(vals) == pytest.approx(0.5)

    def test_no_uncertainty_means_zero(self):
        vals = np.tile([3.0, 1.0], (10, 1))
        assert evpi(vals) == pytest.approx(0.0)

    def test_dominated_arm_contributes_nothing(self):
        base = np.array([[0.0, 1.0], [0.0, -1.0]])
        with_dominated = np.column_stack([base, base.min(axis=1) - 10.0])
        assert evpi(with_dominated) == pytest.approx(evpi(base))

    def test_nonnegative_property(self, rng):
        for _ in range(20):
            vals = rng.normal(size=(50, 3)) * rng.gamma(2.0)
            assert evpi(vals) >= -1e-12

    def test_bad_input_raises(self):
        with pytest.raises(ValueError):
            evpi(np.zeros(3))
        with pytest.raises(ValueError):
            evpi(np.zeros((0, 2)))


def test_enbs():
    assert enbs(2.5, population=1000.0, study_cost=2000.0) == pytest.approx(500.0)


class _BadShapeModel(GaussianToyModel):
    def net_benefit_batch(self, thetas, wtp):
        return np.zeros((len(thetas), 3))


class _NonFiniteModel(GaussianToyModel):
    def net_benefit_batch(self, thetas, wtp):
        out = super().net_benefit_batch(thetas, wtp)
        out[0, 1] = np.nan
        return out


class TestComputeNbTable:
    def test_happy_path(self, toy, toy_psa):
        nb = compute_nb_table(toy, toy_psa, 1.0)
        assert nb.values.shape == (toy_psa.n_samples, 2)
        np.testing.assert_array_equal(nb.values[:, 0], 0.0)

    def test_shape_contract_enforced(self, rng):
        model = _BadShapeModel()
        psa = model.sample_prior(10, rng)
        with pytest.raises(ModelContractError):
            compute_nb_table(model, psa, 1.0)

    def test_non_finite_rejected(self, rng):
        model = _NonFiniteModel()
        psa = model.sample_prior(10, rng)
        with pytest.raises(ModelContractError):
            compute_nb_table(model, psa, 1.0)


class TestNestedMc:
    def test_matches_analytic_toy(self, toy, rng):
        res = evsi_nested_mc(
            toy, toy.make_design(4), 1.0, s_outer=3000, r_inner=400, rng=rng
        )
        truth = toy.analytic_evsi(4)
        assert abs(res.evsi - truth) < 3.0 * res.se
        assert res.se < 0.05 * truth

    def test_zero_design_is_exactly_zero(self, toy, rng):
        res = evsi_nested_mc(
            toy, toy.make_design(0), 1.0, s_outer=50, r_inner=20, rng=rng
        )
        assert res.evsi == 0.0
        assert res.se == 0.0

    def test_thread_count_does_not_change_result(self, toy):
        kw = dict(s_outer=200, r_inner=50)
        a = evsi_nested_mc(
            toy, toy.make_design(4), 1.0, rng=np.random.default_rng(5), **kw
        )
        b = evsi_nested_mc(
            toy, toy.make_design(4), 1.0, rng=np.random.default_rng(5), threads=4, **kw
        )
        np.testing.assert_array_equal(a.outer_values, b.outer_values)
        assert a.evsi == b.evsi

    def test_budget_validation(self, toy, rng):
        with pytest.raises(ValueError):
            evsi_nested_mc(toy, toy.make_design(4), 1.0, s_outer=1, r_inner=10, rng=rng)
        with pytest.raises(ValueError):
            evsi_nested_mc(toy, toy.make_design(4), 1.0, s_outer=10, r_inner=0, rng=rng)

    def test_dataset_origin_phi_recorded(self, toy, rng):
        ds = toy.sample_data(np.array([0.3]), toy.make_design(5), rng)
        assert isinstance(ds, Dataset)
        assert ds.origin_phi is not None
        assert ds["y"].shape == (5,)
