"""Two-arm chemotherapy side-effect model.

Standard care and a novel treatment are clinically equivalent except that the
novel arm reduces the probability of adverse events by a factor rho. Adverse
events are costed with a four-state daily Markov model (home care, hospital
care, recovered, dead) run for 15 days. A future two-arm trial of n patients
per arm informs six parameters: the adverse-event probability, the reduction
factor, the 15-day hospitalisation and death probabilities, and the two daily
recovery probabilities.

Baseline counts behind the beta priors (adverse events 10/111, hospitalised
4/10, died 1/4) are configurable stand-ins: the source figures are not public,
so absolute results are illustrative and cross-method agreement is what the
test-suite checks.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.integrate import quad
from scipy.special import expit, logit, xlog1py, xlogy

from voi.bayes import MhConfig, PriorSpec, mh_sample
from voi.core import Dataset, DecisionModel, PsaSet, StudyDesign

logger = logging.getLogger(__name__)

HORIZON_DAYS = 15
TREAT_COST = (110.0, 420.0)


def _beta_mean_inv_neglog(a: float, b: float) -> float:
    """E[1 / (-log X)] for X ~ Beta(a, b), by quadrature."""
    beta_const = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)

    def f(x):
        return math.exp((a - 1) * math.log(x) + (b - 1) * math.log1p(-x) - beta_const) / (
            -math.log(x)
        )

    val, _ = quad(f, 0.0, 1.0, limit=200)
    return val


class ChemotherapyModel(DecisionModel):
    """See module docstring. Parameter columns, in order:

    p_ae, rho, qol_well, p_hosp_15d, p_death_15d, p_recover_home,
    p_recover_hosp, cost_death, cost_home_day, cost_hosp_day, qol_home,
    qol_hosp. Daily transition probabilities into hospital and death are the
    15-day probabilities divided by 15.
    """

    name = "chemotherapy"
    strategies = ["standard", "novel"]
    param_names = [
        "p_ae",
        "rho",
        "qol_well",
        "p_hosp_15d",
        "p_death_15d",
        "p_recover_home",
        "p_recover_hosp",
        "cost_death",
        "cost_home_day",
        "cost_hosp_day",
        "qol_home",
        "qol_hosp",
    ]
    focal_params = [
        "p_ae",
        "rho",
        "p_hosp_15d",
        "p_death_15d",
        "p_recover_home",
        "p_recover_hosp",
    ]
    summary_names = [
        "ae_rate_standard",
        "ae_rate_novel",
        "hosp_rate",
        "death_rate",
        "mean_recovery_home",
        "mean_recovery_hosp",
    ]
    default_wtp = 30_000.0
    default_n = 150

    def __init__(
        self,
        baseline_ae: tuple[int, int] = (10, 111),
        baseline_hosp: tuple[int, int] = (4, 10),
        baseline_death: tuple[int, int] = (1, 4),
    ):
        self.prior_p_ae = PriorSpec.beta(1 + baseline_ae[0], 1 + baseline_ae[1] - baseline_ae[0])
        self.prior_hosp = PriorSpec.beta(
            1 + baseline_hosp[0], 1 + baseline_hosp[1] - baseline_hosp[0]
        )
        self.prior_death = PriorSpec.beta(
            1 + baseline_death[0], 1 + baseline_death[1] - baseline_death[0]
        )
        self.rho_mean, self.rho_sd = 0.65, 0.1
        self.prior_qol_well = PriorSpec.beta(18.23, 0.372)
        self.prior_rec_home = PriorSpec.beta(5.12, 6.26)
        self.prior_rec_hosp = PriorSpec.beta(3.63, 6.74)
        self.prior_cost_death = PriorSpec.lognormal(8.33, 0.13)
        self.prior_cost_home = PriorSpec.lognormal(7.74, 0.039)
        self.prior_cost_hosp = PriorSpec.lognormal(8.77, 0.15)
        self.prior_qol_home = PriorSpec.beta(5.75, 5.75)
        self.prior_qol_hosp = PriorSpec.beta(0.87, 3.47)
        # prior means used to impute summaries whose denominator is empty
        self._impute = np.array(
            [
                self.prior_p_ae.mean(),
                self.rho_mean * self.prior_p_ae.mean(),
                self.prior_hosp.mean() / HORIZON_DAYS,
                self.prior_death.mean() / HORIZON_DAYS,
                _beta_mean_inv_neglog(*self.prior_rec_home.params),
                _beta_mean_inv_neglog(*self.prior_rec_hosp.params),
            ]
        )
        self.last_rejection_fraction = 0.0
        self._warnings: list[str] = []

    # -- prior ----------------------------------------------------------

    def _draw_raw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        cols = [
            self.prior_p_ae.sample(rng, n),
            rng.normal(self.rho_mean, self.rho_sd, n),
            self.prior_qol_well.sample(rng, n),
            self.prior_hosp.sample(rng, n),
            self.prior_death.sample(rng, n),
            self.prior_rec_home.sample(rng, n),
            self.prior_rec_hosp.sample(rng, n),
            self.prior_cost_death.sample(rng, n),
            self.prior_cost_home.sample(rng, n),
            self.prior_cost_hosp.sample(rng, n),
            self.prior_qol_home.sample(rng, n),
            self.prior_qol_hosp.sample(rng, n),
        ]
        return np.column_stack(cols)

    @staticmethod
    def _feasible(draws: np.ndarray) -> np.ndarray:
        rho = draws[:, 1]
        g1 = draws[:, 3] / HORIZON_DAYS
        g2 = draws[:, 4] / HORIZON_DAYS
        l1 = draws[:, 5]
        l2 = draws[:, 6]
        return (rho > 0) & (rho <= 1) & (g1 + l1 <= 1) & (g2 + l2 <= 1)

    def sample_prior(self, n: int, rng: np.random.Generator) -> PsaSet:
        draws = self._draw_raw(n, rng)
        ok = self._feasible(draws)
        rejected = int(n - ok.sum())
        tries = 0
        while not ok.all():
            bad = ~ok
            redraw = self._draw_raw(int(bad.sum()), rng)
            draws[bad] = redraw
            ok[bad] = self._feasible(redraw)
            rejected += int((~ok).sum())
            tries += 1
            if tries > 1000:
                raise RuntimeError("prior rejection loop failed to converge")
        self.last_rejection_fraction = rejected / max(n + rejected, 1)
        if rejected:
            logger.debug(
                "chemotherapy prior: redrew %d of %d draws for Markov feasibility",
                rejected,
                n + rejected,
            )
        return PsaSet(names=list(self.param_names), values=draws)

    # -- economic model --------------------------------------------------

    def _trace(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Expected 15-day QALYs and costs for patients who start home care."""
        qol_well = theta[:, 2]
        g1 = theta[:, 3] / HORIZON_DAYS
        g2 = theta[:, 4] / HORIZON_DAYS
        l1 = theta[:, 5]
        l2 = theta[:, 6]
        c_death, c_home, c_hosp = theta[:, 7], theta[:, 8], theta[:, 9]
        q_home, q_hosp = theta[:, 10], theta[:, 11]

        s = theta.shape[0]
        home = np.ones(s)
        hosp = np.zeros(s)
        rec = np.zeros(s)
        qaly = np.zeros(s)
        cost = np.zeros(s)
        for _ in range(HORIZON_DAYS):
            qaly += (home * q_home + hosp * q_hosp + rec * qol_well) / 365.0
            cost += home * c_home + hosp * c_hosp
            new_dead = hosp * g2
            cost += new_dead * c_death
            rec = rec + home * l1 + hosp * l2
            hosp = hosp * (1.0 - g2 - l2) + home * g1
            home = home * (1.0 - g1 - l1)
        return qaly, cost

    def net_benefit_batch(self, thetas: np.ndarray, wtp: float) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(thetas, dtype=float))
        qaly_ae, cost_ae = self._trace(theta)
        p0 = theta[:, 0]
        p1 = np.clip(theta[:, 1] * p0, 0.0, 1.0)
        qol_well = theta[:, 2]
        qaly_well = HORIZON_DAYS * qol_well / 365.0
        nb = np.empty((theta.shape[0], 2))
        for arm, p in enumerate((p0, p1)):
            qaly = (1.0 - p) * qaly_well + p * qaly_ae
            cost = p * cost_ae + TREAT_COST[arm]
            nb[:, arm] = wtp * qaly - cost
        return nb

    def net_benefit(self, theta: np.ndarray, wtp: float) -> np.ndarray:
        return self.net_benefit_batch(theta[None, :], wtp)[0]

    def occupancy_history(self, theta: np.ndarray) -> np.ndarray:
        """(16, 4) state occupancy over the trace, for conservation checks."""
        theta = np.asarray(theta, dtype=float)
        g1 = theta[3] / HORIZON_DAYS
        g2 = theta[4] / HORIZON_DAYS
        l1, l2 = theta[5], theta[6]
        occ = np.zeros((HORIZON_DAYS + 1, 4))
        occ[0] = (1.0, 0.0, 0.0, 0.0)
        for d in range(HORIZON_DAYS):
            home, hosp, rec, dead = occ[d]
            occ[d + 1] = (
                home * (1 - g1 - l1),
                home * g1 + hosp * (1 - g2 - l2),
                rec + home * l1 + hosp * l2,
                dead + hosp * g2,
            )
        return occ

    # -- trial data -------------------------------------------------------

    def make_design(self, n: int) -> StudyDesign:
        return StudyDesign(n=n, label=f"{n} per arm")

    def sample_data(
        self, phi: np.ndarray, design: StudyDesign, rng: np.random.Generator
    ) -> Dataset:
        p0, rho, big_g1, big_g2, l1, l2 = (float(v) for v in phi)
        n = design.n
        g1, g2 = big_g1 / HORIZON_DAYS, big_g2 / HORIZON_DAYS
        x_ae0 = int(rng.binomial(n, p0)) if n else 0
        x_ae1 = int(rng.binomial(n, min(rho * p0, 1.0))) if n else 0
        n_ae = x_ae0 + x_ae1
        x_hosp = int(rng.binomial(n_ae, g1)) if n_ae else 0
        x_death = int(rng.binomial(x_hosp, g2)) if x_hosp else 0
        eta1, eta2 = -math.log(l1), -math.log(l2)
        t_home = rng.exponential(1.0 / eta1, n_ae - x_hosp)
        t_hosp = rng.exponential(1.0 / eta2, x_hosp - x_death)
        return Dataset(
            data={
                "n": n,
                "x_ae0": x_ae0,
                "x_ae1": x_ae1,
                "x_hosp": x_hosp,
                "x_death": x_death,
                "t_home_sum": float(t_home.sum()),
                "t_home_n": int(t_home.size),
                "t_hosp_sum": float(t_hosp.sum()),
                "t_hosp_n": int(t_hosp.size),
            },
            design=design,
            origin_phi=np.asarray(phi, dtype=float).copy(),
        )

    def log_likelihood_batch(self, dataset: Dataset, phis: np.ndarray) -> np.ndarray:
        d = dataset.data
        n = d["n"]
        phis = np.atleast_2d(np.asarray(phis, dtype=float))
        p0, rho = phis[:, 0], phis[:, 1]
        g1 = phis[:, 2] / HORIZON_DAYS
        g2 = phis[:, 3] / HORIZON_DAYS
        l1, l2 = phis[:, 4], phis[:, 5]
        p1 = rho * p0
        n_ae = d["x_ae0"] + d["x_ae1"]
        with np.errstate(divide="ignore", invalid="ignore"):
            eta1, eta2 = -np.log(l1), -np.log(l2)
            ll = (
                xlogy(d["x_ae0"], p0)
                + xlog1py(n - d["x_ae0"], -p0)
                + xlogy(d["x_ae1"], p1)
                + xlog1py(n - d["x_ae1"], -p1)
                + xlogy(d["x_hosp"], g1)
                + xlog1py(n_ae - d["x_hosp"], -g1)
                + xlogy(d["x_death"], g2)
                + xlog1py(d["x_hosp"] - d["x_death"], -g2)
                + xlogy(d["t_home_n"], eta1)
                - eta1 * d["t_home_sum"]
                + xlogy(d["t_hosp_n"], eta2)
                - eta2 * d["t_hosp_sum"]
            )
        bad = (
            (p0 <= 0) | (p0 >= 1) | (p1 < 0) | (p1 > 1)
            | (l1 <= 0) | (l1 >= 1) | (l2 <= 0) | (l2 >= 1)
            | (g1 <= 0) | (g1 >= 1) | (g2 <= 0) | (g2 >= 1)
        )
        ll = np.where(bad, -np.inf, ll)
        return np.where(np.isnan(ll), -np.inf, ll)

    def log_likelihood(self, dataset: Dataset, phi: np.ndarray) -> float:
        return float(self.log_likelihood_batch(dataset, np.atleast_2d(phi))[0])

    def log_likelihood_many(self, datasets, phis: np.ndarray) -> np.ndarray:
        """The likelihood is exponential-family in the counts and waiting-time
        sums, so the whole dataset-by-parameter matrix is one product of a
        sufficient-statistic matrix with per-parameter log terms.
        """
        phis = np.atleast_2d(np.asarray(phis, dtype=float))
        u = np.empty((len(datasets), 12))
        for i, ds in enumerate(datasets):
            d = ds.data
            n, x0, x1 = d["n"], d["x_ae0"], d["x_ae1"]
            xh, xd = d["x_hosp"], d["x_death"]
            u[i] = (
                x0, n - x0, x1, n - x1,
                xh, x0 + x1 - xh, xd, xh - xd,
                d["t_home_n"], d["t_home_sum"], d["t_hosp_n"], d["t_hosp_sum"],
            )
        p0, rho = phis[:, 0], phis[:, 1]
        g1 = phis[:, 2] / HORIZON_DAYS
        g2 = phis[:, 3] / HORIZON_DAYS
        l1, l2 = phis[:, 4], phis[:, 5]
        p1 = rho * p0
        with np.errstate(divide="ignore", invalid="ignore"):
            eta1, eta2 = -np.log(l1), -np.log(l2)
            v = np.stack(
                [
                    np.log(p0), np.log1p(-p0), np.log(p1), np.log1p(-p1),
                    np.log(g1), np.log1p(-g1), np.log(g2), np.log1p(-g2),
                    np.log(eta1), -eta1, np.log(eta2), -eta2,
                ],
                axis=1,
            )
        # a nonfinite log term only matters when its count is positive; a very
        # negative stand-in keeps 0 * log(0) = 0 while driving those entries
        # to -inf after the product
        v[~np.isfinite(v)] = -1e30
        out = u @ v.T
        return np.where(out < -1e15, -np.inf, out)

    # -- posterior --------------------------------------------------------

    def posterior_sample(
        self,
        dataset: Dataset,
        n: int,
        rng: np.random.Generator,
        mh: MhConfig | None = None,
    ) -> PsaSet:
        """Joint random-walk MH over the six trial-informed parameters.

        Both arm counts depend on p_ae (the novel arm through rho * p_ae), so
        p_ae is sampled jointly with the rest instead of via a conjugate
        update from the standard arm alone. A split update that fixes p_ae at
        its marginal posterior mean inside the novel-arm likelihood inflates
        the spread of preposterior means measurably. Parameters the trial
        never touches are redrawn from their priors.
        """
        d = dataset.data
        if d["n"] == 0:
            return self.sample_prior(n, rng)

        chain = self._mh_focal(dataset, n, rng, mh)

        out = np.empty((n, len(self.param_names)))
        out[:, 0] = chain[:, 0]
        out[:, 1] = chain[:, 1]
        out[:, 2] = self.prior_qol_well.sample(rng, n)
        out[:, 3:7] = chain[:, 2:6]
        out[:, 7] = self.prior_cost_death.sample(rng, n)
        out[:, 8] = self.prior_cost_home.sample(rng, n)
        out[:, 9] = self.prior_cost_hosp.sample(rng, n)
        out[:, 10] = self.prior_qol_home.sample(rng, n)
        out[:, 11] = self.prior_qol_hosp.sample(rng, n)
        return PsaSet(names=list(self.param_names), values=out)

    def _mh_focal(
        self,
        dataset: Dataset,
        n_draws: int,
        rng: np.random.Generator,
        mh: MhConfig | None,
    ) -> np.ndarray:
        d = dataset.data
        n = d["n"]
        n_ae = d["x_ae0"] + d["x_ae1"]
        x_ae0, x_ae1 = d["x_ae0"], d["x_ae1"]
        x_hosp, x_death = d["x_hosp"], d["x_death"]
        n_home, s_home = d["t_home_n"], d["t_home_sum"]
        n_hosp, s_hosp = d["t_hosp_n"], d["t_hosp_sum"]
        rho_m, rho_prec = self.rho_mean, 1.0 / self.rho_sd**2
        a0, b0 = self.prior_p_ae.params
        ag1, bg1 = self.prior_hosp.params
        ag2, bg2 = self.prior_death.params
        al1, bl1 = self.prior_rec_home.params
        al2, bl2 = self.prior_rec_hosp.params
        log, log1p, exp = math.log, math.log1p, math.exp

        def log_target(z) -> float:
            # sampling coordinates: (logit p_ae, rho, logit G1, logit G2,
            # logit l1, logit l2); each beta prior picks up the logit
            # Jacobian, turning pdf exponents (a - 1, b - 1) into (a, b)
            rho = z[1]
            if not 0.0 < rho <= 1.0:
                return -math.inf
            p0 = 1.0 / (1.0 + exp(-z[0]))
            big1 = 1.0 / (1.0 + exp(-z[2]))
            big2 = 1.0 / (1.0 + exp(-z[3]))
            l1 = 1.0 / (1.0 + exp(-z[4]))
            l2 = 1.0 / (1.0 + exp(-z[5]))
            g1 = big1 / HORIZON_DAYS
            g2 = big2 / HORIZON_DAYS
            if g1 + l1 > 1.0 or g2 + l2 > 1.0:
                return -math.inf
            p1 = rho * p0
            eta1, eta2 = -log(l1), -log(l2)
            lp = (
                a0 * log(p0) + b0 * log1p(-p0)
                - 0.5 * rho_prec * (rho - rho_m) ** 2
                + ag1 * log(big1) + bg1 * log1p(-big1)
                + ag2 * log(big2) + bg2 * log1p(-big2)
                + al1 * log(l1) + bl1 * log1p(-l1)
                + al2 * log(l2) + bl2 * log1p(-l2)
            )
            lp += x_ae0 * log(p0) + (n - x_ae0) * log1p(-p0)
            lp += x_ae1 * log(p1) + (n - x_ae1) * log1p(-p1)
            lp += x_hosp * log(g1) + (n_ae - x_hosp) * log1p(-g1)
            if x_hosp:
                lp += x_death * log(g2) + (x_hosp - x_death) * log1p(-g2)
            lp += n_home * log(eta1) - eta1 * s_home
            lp += n_hosp * log(eta2) - eta2 * s_hosp
            return lp

        if dataset.origin_phi is not None:
            o = dataset.origin_phi
            init = np.array(
                [logit(o[0]), o[1], logit(o[2]), logit(o[3]), logit(o[4]), logit(o[5])]
            )
        else:
            init = np.array(
                [
                    logit(self.prior_p_ae.mean()),
                    self.rho_mean,
                    logit(self.prior_hosp.mean()),
                    logit(self.prior_death.mean()),
                    logit(self.prior_rec_home.mean()),
                    logit(self.prior_rec_hosp.mean()),
                ]
            )
        base_sd = np.array([0.2, 0.08, 0.5, 0.7, 0.4, 0.5])
        if mh is None:
            cfg = MhConfig.for_draws(n_draws, burn_in=1000, proposal_sd=base_sd)
        else:
            cfg = MhConfig(
                steps=mh.burn_in + n_draws * mh.thinning,
                burn_in=mh.burn_in,
                thinning=mh.thinning,
                proposal_sd=mh.proposal_sd if np.size(mh.proposal_sd) == 6 else base_sd,
                target_accept=mh.target_accept,
                seed=mh.seed,
            )
        chain, diag = mh_sample(log_target, init, cfg, rng)
        self._warnings.extend(diag.warnings)
        out = np.empty_like(chain)
        out[:, 0] = expit(chain[:, 0])
        out[:, 1] = chain[:, 1]
        out[:, 2:] = expit(chain[:, 2:])
        return out

    def drain_warnings(self) -> list[str]:
        out, self._warnings = self._warnings, []
        seen: dict[str, int] = {}
        for w in out:
            seen[w] = seen.get(w, 0) + 1
        return [w if c == 1 else f"{w} (x{c})" for w, c in seen.items()]

    # -- summaries --------------------------------------------------------

    def summarize(self, dataset: Dataset) -> np.ndarray:
        d = dataset.data
        n = d["n"]
        n_ae = d["x_ae0"] + d["x_ae1"]
        imp = self._impute
        return np.array(
            [
                d["x_ae0"] / n if n else imp[0],
                d["x_ae1"] / n if n else imp[1],
                d["x_hosp"] / n_ae if n_ae else imp[2],
                d["x_death"] / d["x_hosp"] if d["x_hosp"] else imp[3],
                d["t_home_sum"] / d["t_home_n"] if d["t_home_n"] else imp[4],
                d["t_hosp_sum"] / d["t_hosp_n"] if d["t_hosp_n"] else imp[5],
            ]
        )

    def sample_summaries_batch(
        self, phis: np.ndarray, design: StudyDesign, rng: np.random.Generator
    ) -> np.ndarray:
        phis = np.atleast_2d(np.asarray(phis, dtype=float))
        s = phis.shape[0]
        n = design.n
        imp = self._impute
        if n == 0:
            return np.tile(imp, (s, 1))
        p0 = phis[:, 0]
        p1 = np.clip(phis[:, 1] * p0, 0.0, 1.0)
        g1 = phis[:, 2] / HORIZON_DAYS
        g2 = phis[:, 3] / HORIZON_DAYS
        eta1 = -np.log(phis[:, 4])
        eta2 = -np.log(phis[:, 5])
        x0 = rng.binomial(n, p0)
        x1 = rng.binomial(n, p1)
        n_ae = x0 + x1
        xh = rng.binomial(n_ae, g1)
        xd = rng.binomial(xh, g2)
        n_home = n_ae - xh
        n_hosp = xh - xd
        # a sum of k iid exponentials is a gamma(k) variate over the rate
        sum_home = rng.standard_gamma(n_home) / eta1
        sum_hosp = rng.standard_gamma(n_hosp) / eta2
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.column_stack(
                [
                    x0 / n,
                    x1 / n,
                    np.where(n_ae > 0, xh / np.maximum(n_ae, 1), imp[2]),
                    np.where(xh > 0, xd / np.maximum(xh, 1), imp[3]),
                    np.where(n_home > 0, sum_home / np.maximum(n_home, 1), imp[4]),
                    np.where(n_hosp > 0, sum_hosp / np.maximum(n_hosp, 1), imp[5]),
                ]
            )
        return out
