"""Chronic pain treatment model.

Two first-line options, morphine or an innovative drug, differ only in
effectiveness, adverse-event rate, and price; withdrawal leads to a common
second line (oxycodone) and eventually to further treatment or complete
discontinuation, the two absorbing states of a ten-state annual Markov model
run for 15 years with 3% discounting.

A future study sends a quality-of-life questionnaire to n patients and
observes, for each responder, one utility score for remaining on treatment
and one for withdrawal due to lack of efficacy. Individual scores are beta
distributed around the corresponding state utilities with fixed standard
deviations 0.30 and 0.31, so those two utilities are the focal parameters.

State costs, utilities, and transition means come from a JSON config; the
shipped file holds plausible illustrative values, not the source
cost-effectiveness tables, and every PSA distribution uses sd = 10% of the
mean (gamma for costs, beta for probabilities and utilities).
"""

from __future__ import annotations

import json
import logging
import math
from importlib import resources

import numpy as np
from scipy.special import betaln, expit, logit, psi

from voi.bayes import InfeasibleMomentsError, MhConfig, PriorSpec, mh_sample, moment_to_beta
from voi.core import Dataset, DecisionModel, PsaSet, StudyDesign

logger = logging.getLogger(__name__)

_TRANSITION_KEYS = [
    "p_withdraw_ae",
    "p_return",
    "p_second_after_ae",
    "p_second_after_efficacy",
    "p_ae_second",
    "p_withdraw_efficacy_second",
    "p_withdraw_ae_second",
    "p_return_second",
    "p_further_after_ae",
    "p_further_after_efficacy",
]

_CLIP = 1e-12


def load_default_config() -> dict:
    text = resources.files("voi.models").joinpath("data/chronic_pain.json").read_text()
    return json.loads(text)


def _feasible_range(sd: float) -> tuple[float, float]:
    """Open interval of means for which a beta with this sd exists."""
    lo = 0.5 * (1.0 - math.sqrt(1.0 - 4.0 * sd * sd))
    return lo + 1e-6, 1.0 - lo - 1e-6


class ChronicPainModel(DecisionModel):
    """See module docstring. Parameter columns: ten state utilities
    (u_<state>), ten annual state costs (cost_<state>), the four first-line
    rates (adverse events and efficacy withdrawal per arm), then the ten
    shared transition probabilities.
    """

    name = "chronic-pain"
    strategies = ["morphine", "innovative"]
    focal_params = ["u_on_treatment", "u_withdraw_efficacy"]
    default_wtp = 20_000.0
    default_n = 150

    def __init__(self, config: dict | None = None, summary_mode: str = "geometric"):
        if summary_mode not in ("geometric", "arithmetic"):
            raise ValueError(f"summary_mode must be geometric or arithmetic, got {summary_mode!r}")
        self.config = config or load_default_config()
        self.summary_mode = summary_mode
        cfg = self.config
        self.states: list[str] = list(cfg["states"])
        if len(self.states) != 10:
            raise ValueError(f"expected 10 states, got {len(self.states)}")
        self.horizon = int(cfg["horizon_years"])
        self.discount = float(cfg["discount_rate"])
        self.response_rate = float(cfg["response_rate"])
        self.sd1 = float(cfg["outcome_sd"]["on_treatment"])
        self.sd2 = float(cfg["outcome_sd"]["withdraw_efficacy"])
        self.range1 = _feasible_range(self.sd1)
        self.range2 = _feasible_range(self.sd2)
        self.default_wtp = float(cfg.get("default_wtp", self.default_wtp))
        self.default_n = int(cfg.get("default_n", self.default_n))

        util_means = [float(cfg["utilities"][s]) for s in self.states]
        cost_means = [float(cfg["costs"][s]) for s in self.states]
        fl = cfg["first_line"]
        first_line_means = [
            float(fl["morphine"]["p_ae"]),
            float(fl["morphine"]["p_withdraw_efficacy"]),
            float(fl["innovative"]["p_ae"]),
            float(fl["innovative"]["p_withdraw_efficacy"]),
        ]
        trans_means = [float(cfg["transitions"][k]) for k in _TRANSITION_KEYS]

        self.param_names = (
            [f"u_{s}" for s in self.states]
            + [f"cost_{s}" for s in self.states]
            + [
                "p_ae_morphine",
                "p_withdraw_efficacy_morphine",
                "p_ae_innovative",
                "p_withdraw_efficacy_innovative",
            ]
            + list(_TRANSITION_KEYS)
        )
        self.priors: list[PriorSpec] = []
        for m in util_means:
            self.priors.append(moment_to_beta(m, 0.1 * m))
        for m in cost_means:
            # gamma with sd = 10% of mean: shape 100, rate 100 / mean
            self.priors.append(PriorSpec.gamma(100.0, 100.0 / m))
        for m in first_line_means + trans_means:
            self.priors.append(moment_to_beta(m, 0.1 * m))

        # fixed annual drug costs added on top of the drawn state costs
        self.drug_cost = (
            float(fl["morphine"]["drug_cost"]),
            float(fl["innovative"]["drug_cost"]),
        )
        self.second_line_drug_cost = float(cfg["second_line_drug_cost"])
        self._u1_mean = util_means[self.states.index("on_treatment")]
        self._u2_mean = util_means[self.states.index("withdraw_efficacy")]
        self._impute = self._impute_summaries()
        self.last_rejection_fraction = 0.0
        self._warnings: list[str] = []

    @property
    def summary_names(self) -> list[str]:
        if self.summary_mode == "geometric":
            return [
                "gm_on_treatment",
                "gm_on_treatment_complement",
                "gm_withdraw_efficacy",
                "gm_withdraw_efficacy_complement",
            ]
        return [
            "mean_on_treatment",
            "var_on_treatment",
            "mean_withdraw_efficacy",
            "var_withdraw_efficacy",
        ]

    def _impute_summaries(self) -> np.ndarray:
        """Constant summaries for datasets with zero questionnaire responses,
        from the individual-level distribution at the prior-mean utilities.
        """
        if self.summary_mode == "geometric":
            out = []
            for u, sd in ((self._u1_mean, self.sd1), (self._u2_mean, self.sd2)):
                spec = moment_to_beta(u, sd)
                a, b = spec.params
                out.append(math.exp(psi(a) - psi(a + b)))
                out.append(math.exp(psi(b) - psi(a + b)))
            return np.array(out)
        return np.array([self._u1_mean, self.sd1**2, self._u2_mean, self.sd2**2])

    # -- prior ------------------------------------------------------------

    def sample_prior(self, n: int, rng: np.random.Generator) -> PsaSet:
        """Independent draws per parameter; the two focal utilities are
        redrawn while they fall outside the feasible range for their fixed
        individual-level sd, since data could not be generated there.
        """
        cols = [spec.sample(rng, n) for spec in self.priors]
        out = np.column_stack(cols)
        i1 = self.param_names.index("u_on_treatment")
        i2 = self.param_names.index("u_withdraw_efficacy")
        rejected = 0
        for idx, (lo, hi), spec in (
            (i1, self.range1, self.priors[i1]),
            (i2, self.range2, self.priors[i2]),
        ):
            bad = (out[:, idx] <= lo) | (out[:, idx] >= hi)
            while bad.any():
                rejected += int(bad.sum())
                out[bad, idx] = spec.sample(rng, int(bad.sum()))
                bad = (out[:, idx] <= lo) | (out[:, idx] >= hi)
        self.last_rejection_fraction = rejected / max(n, 1)
        if rejected:
            logger.debug("chronic pain: redrew %d infeasible focal utilities", rejected)
        return PsaSet(names=list(self.param_names), values=out)

    # -- economic model ----------------------------------------------------

    def _transition_tensor(self, theta: np.ndarray, arm: int) -> np.ndarray:
        s = theta.shape[0]
        t24 = theta[:, 24:]
        p_ae = theta[:, 20 + 2 * arm]
        p_we = theta[:, 21 + 2 * arm]
        (
            p_wae, p_ret, p_sec_ae, p_sec_eff, p_ae2,
            p_we2, p_wae2, p_ret2, p_fur_ae, p_fur_eff,
        ) = (t24[:, j] for j in range(10))

        p = np.zeros((s, 10, 10))

        def competing(row, pa, ia, pb, ib):
            tot = pa + pb
            scale = np.where(tot > 1.0, 1.0 / np.maximum(tot, 1e-300), 1.0)
            pa, pb = pa * scale, pb * scale
            p[:, row, ia] = pa
            p[:, row, ib] = pb
            p[:, row, row] = 1.0 - pa - pb

        competing(0, p_ae, 1, p_we, 3)
        competing(1, p_wae, 2, p_ret, 0)
        p[:, 2, 4] = p_sec_ae
        p[:, 2, 8] = 1.0 - p_sec_ae
        p[:, 3, 4] = p_sec_eff
        p[:, 3, 8] = 1.0 - p_sec_eff
        competing(4, p_ae2, 5, p_we2, 7)
        competing(5, p_wae2, 6, p_ret2, 4)
        p[:, 6, 8] = p_fur_ae
        p[:, 6, 9] = 1.0 - p_fur_ae
        p[:, 7, 8] = p_fur_eff
        p[:, 7, 9] = 1.0 - p_fur_eff
        p[:, 8, 8] = 1.0
        p[:, 9, 9] = 1.0
        return p

    def _arm_costs(self, theta: np.ndarray, arm: int) -> np.ndarray:
        costs = theta[:, 10:20].copy()
        costs[:, 0] += self.drug_cost[arm]
        costs[:, 1] += self.drug_cost[arm]
        costs[:, 4] += self.second_line_drug_cost
        costs[:, 5] += self.second_line_drug_cost
        return costs

    def occupancy_history(self, theta: np.ndarray, arm: int) -> np.ndarray:
        """State occupancy at the start of each year, (horizon+1, 10)."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        p = self._transition_tensor(theta, arm)[0]
        occ = np.zeros((self.horizon + 1, 10))
        occ[0, 0] = 1.0
        for t in range(self.horizon):
            occ[t + 1] = occ[t] @ p
        return occ

    def net_benefit_batch(self, thetas: np.ndarray, wtp: float) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(thetas, dtype=float))
        s = theta.shape[0]
        utils = theta[:, :10]
        disc = 1.0 / (1.0 + self.discount) ** np.arange(self.horizon)
        nb = np.empty((s, 2))
        for arm in (0, 1):
            p = self._transition_tensor(theta, arm)
            costs = self._arm_costs(theta, arm)
            occ = np.zeros((s, 10))
            occ[:, 0] = 1.0
            qaly = np.zeros(s)
            cost = np.zeros(s)
            for t in range(self.horizon):
                qaly += disc[t] * np.einsum("ij,ij->i", occ, utils)
                cost += disc[t] * np.einsum("ij,ij->i", occ, costs)
                occ = np.einsum("si,sij->sj", occ, p)
            nb[:, arm] = wtp * qaly - cost
        return nb

    def net_benefit(self, theta: np.ndarray, wtp: float) -> np.ndarray:
        return self.net_benefit_batch(np.atleast_2d(theta), wtp)[0]

    # -- study data ---------------------------------------------------------

    def _outcome_specs(self, u1: float, u2: float) -> tuple[PriorSpec, PriorSpec]:
        return moment_to_beta(u1, self.sd1), moment_to_beta(u2, self.sd2)

    def sample_data(self, phi: np.ndarray, design: StudyDesign, rng: np.random.Generator) -> Dataset:
        u1, u2 = (float(v) for v in phi)
        n = design.n
        n_resp = int(rng.binomial(n, self.response_rate)) if n else 0
        if n_resp:
            spec1, spec2 = self._outcome_specs(u1, u2)
            x1 = np.clip(spec1.sample(rng, n_resp), _CLIP, 1.0 - _CLIP)
            x2 = np.clip(spec2.sample(rng, n_resp), _CLIP, 1.0 - _CLIP)
        else:
            x1 = x2 = np.empty(0)
        return Dataset(
            data={
                "n": n,
                "n_resp": n_resp,
                "slx1": float(np.log(x1).sum()),
                "sl1mx1": float(np.log1p(-x1).sum()),
                "slx2": float(np.log(x2).sum()),
                "sl1mx2": float(np.log1p(-x2).sum()),
                "sx1": float(x1.sum()),
                "sq1": float((x1**2).sum()),
                "sx2": float(x2.sum()),
                "sq2": float((x2**2).sum()),
            },
            design=design,
            origin_phi=np.asarray(phi, dtype=float).copy(),
        )

    def _beta_params(self, u: np.ndarray, sd: float) -> tuple[np.ndarray, np.ndarray]:
        nu = u * (1.0 - u) / (sd * sd) - 1.0
        return u * nu, (1.0 - u) * nu

    def log_likelihood_batch(self, dataset: Dataset, phis: np.ndarray) -> np.ndarray:
        """Beta likelihood of the observed responses; the known response rate
        contributes a constant factor and is omitted.
        """
        d = dataset.data
        phis = np.atleast_2d(np.asarray(phis, dtype=float))
        u1, u2 = phis[:, 0], phis[:, 1]
        r = d["n_resp"]
        if r == 0:
            return np.zeros(phis.shape[0])
        with np.errstate(divide="ignore", invalid="ignore"):
            a1, b1 = self._beta_params(u1, self.sd1)
            a2, b2 = self._beta_params(u2, self.sd2)
            ll = (
                (a1 - 1.0) * d["slx1"]
                + (b1 - 1.0) * d["sl1mx1"]
                - r * betaln(a1, b1)
                + (a2 - 1.0) * d["slx2"]
                + (b2 - 1.0) * d["sl1mx2"]
                - r * betaln(a2, b2)
            )
        bad = (a1 <= 0) | (b1 <= 0) | (a2 <= 0) | (b2 <= 0)
        ll = np.where(bad, -np.inf, ll)
        return np.where(np.isnan(ll), -np.inf, ll)

    def log_likelihood(self, dataset: Dataset, phi: np.ndarray) -> float:
        return float(self.log_likelihood_batch(dataset, np.atleast_2d(phi))[0])

    def log_likelihood_many(self, datasets, phis: np.ndarray) -> np.ndarray:
        phis = np.atleast_2d(np.asarray(phis, dtype=float))
        u = np.empty((len(datasets), 5))
        for i, ds in enumerate(datasets):
            d = ds.data
            u[i] = (d["n_resp"], d["slx1"], d["sl1mx1"], d["slx2"], d["sl1mx2"])
        with np.errstate(divide="ignore", invalid="ignore"):
            a1, b1 = self._beta_params(phis[:, 0], self.sd1)
            a2, b2 = self._beta_params(phis[:, 1], self.sd2)
            v = np.stack(
                [
                    -betaln(a1, b1) - betaln(a2, b2),
                    a1 - 1.0, b1 - 1.0, a2 - 1.0, b2 - 1.0,
                ],
                axis=1,
            )
        v[~np.isfinite(v)] = -1e30
        out = u @ v.T
        out = np.where(out < -1e15, -np.inf, out)
        # betaln is finite for negative shapes, so mask infeasible means
        # explicitly; datasets without responses stay uniform everywhere
        bad = (a1 <= 0.0) | (b1 <= 0.0) | (a2 <= 0.0) | (b2 <= 0.0)
        if bad.any():
            out[np.ix_(u[:, 0] > 0, bad)] = -np.inf
        return out

    # -- posterior ----------------------------------------------------------

    def posterior_sample(
        self,
        dataset: Dataset,
        n: int,
        rng: np.random.Generator,
        mh: MhConfig | None = None,
    ) -> PsaSet:
        """Independent 1-d random-walk MH chains for the two focal utilities
        on a scaled-logit axis covering their feasible ranges; every other
        parameter is untouched by the study and redrawn from its prior.
        """
        prior = self.sample_prior(n, rng)
        d = dataset.data
        if d["n_resp"] == 0:
            return prior
        out = prior.values
        i1 = self.param_names.index("u_on_treatment")
        i2 = self.param_names.index("u_withdraw_efficacy")
        origin = dataset.origin_phi
        out[:, i1] = self._mh_utility(
            rng, n, mh, self.priors[i1], self.range1, self.sd1,
            d["n_resp"], d["slx1"], d["sl1mx1"],
            None if origin is None else float(origin[0]),
        )
        out[:, i2] = self._mh_utility(
            rng, n, mh, self.priors[i2], self.range2, self.sd2,
            d["n_resp"], d["slx2"], d["sl1mx2"],
            None if origin is None else float(origin[1]),
        )
        return PsaSet(names=list(self.param_names), values=out)

    def _mh_utility(
        self,
        rng: np.random.Generator,
        n_draws: int,
        mh: MhConfig | None,
        prior: PriorSpec,
        bounds: tuple[float, float],
        sd: float,
        n_resp: int,
        slx: float,
        sl1mx: float,
        origin: float | None,
    ) -> np.ndarray:
        lo, hi = bounds
        width = hi - lo
        ap, bp = prior.params
        s2 = sd * sd
        log, log1p, exp = math.log, math.log1p, math.exp

        def log_target(z) -> float:
            e = 1.0 / (1.0 + exp(-z[0]))
            u = lo + width * e
            nu = u * (1.0 - u) / s2 - 1.0
            if nu <= 0.0:
                return -math.inf
            a, b = u * nu, (1.0 - u) * nu
            lp = (ap - 1.0) * log(u) + (bp - 1.0) * log1p(-u) + log(e) + log1p(-e)
            lp += (a - 1.0) * slx + (b - 1.0) * sl1mx - n_resp * betaln(a, b)
            return lp

        start = origin if origin is not None and lo < origin < hi else prior.mean()
        init = np.array([logit((start - lo) / width)])
        if mh is None:
            cfg = MhConfig.for_draws(n_draws, burn_in=500, proposal_sd=0.3)
        else:
            cfg = MhConfig(
                steps=mh.burn_in + n_draws * mh.thinning,
                burn_in=mh.burn_in,
                thinning=mh.thinning,
                proposal_sd=mh.proposal_sd if np.size(mh.proposal_sd) == 1 else 0.3,
                target_accept=mh.target_accept,
                seed=mh.seed,
            )
        chain, diag = mh_sample(log_target, init, cfg, rng)
        self._warnings.extend(diag.warnings)
        return lo + width * expit(chain[:, 0])

    def drain_warnings(self) -> list[str]:
        out, self._warnings = self._warnings, []
        seen: dict[str, int] = {}
        for w in out:
            seen[w] = seen.get(w, 0) + 1
        return [w if c == 1 else f"{w} (x{c})" for w, c in seen.items()]

    # -- summaries ------------------------------------------------------------

    def summarize(self, dataset: Dataset) -> np.ndarray:
        d = dataset.data
        r = d["n_resp"]
        if r == 0:
            return self._impute.copy()
        if self.summary_mode == "geometric":
            return np.exp(np.array([d["slx1"], d["sl1mx1"], d["slx2"], d["sl1mx2"]]) / r)
        m1, m2 = d["sx1"] / r, d["sx2"] / r
        return np.array([m1, d["sq1"] / r - m1 * m1, m2, d["sq2"] / r - m2 * m2])

    def sample_summaries_batch(
        self, phis: np.ndarray, design: StudyDesign, rng: np.random.Generator
    ) -> np.ndarray:
        phis = np.atleast_2d(np.asarray(phis, dtype=float))
        s = phis.shape[0]
        if design.n == 0:
            return np.tile(self._impute, (s, 1))
        n_resp = rng.binomial(design.n, self.response_rate, s)
        idx = np.repeat(np.arange(s), n_resp)
        out = np.tile(self._impute, (s, 1))
        if idx.size == 0:
            return out
        counts = n_resp.astype(float)
        filled = n_resp > 0
        cols = []
        for col, sd in ((0, self.sd1), (1, self.sd2)):
            a, b = self._beta_params(phis[:, col], sd)
            x = np.clip(rng.beta(a[idx], b[idx]), _CLIP, 1.0 - _CLIP)
            cols.append(x)
        if self.summary_mode == "geometric":
            for j, x in enumerate(cols):
                for k, v in enumerate((np.log(x), np.log1p(-x))):
                    tot = np.bincount(idx, weights=v, minlength=s)
                    out[filled, 2 * j + k] = np.exp(tot[filled] / counts[filled])
        else:
            for j, x in enumerate(cols):
                sx = np.bincount(idx, weights=x, minlength=s)
                sq = np.bincount(idx, weights=x * x, minlength=s)
                m = sx[filled] / counts[filled]
                out[filled, 2 * j] = m
                out[filled, 2 * j + 1] = sq[filled] / counts[filled] - m * m
        return out
