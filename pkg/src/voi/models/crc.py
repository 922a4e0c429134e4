"""Colorectal cancer screening model.

Adenomas arise with a Weibull age hazard l(a) = lambda1 * g * a**(g-1), so by
age a a person carries an adenoma or cancer with probability
p(a) = 1 - exp(-lambda1 * a**g). A one-off screen (sensitivity about 0.98,
specificity about 0.87) moves prevalent disease into detected states where
treatment is possible; without screening it progresses silently. The economic
side is a reduced-form nine-state annual cohort model run per starting age
and averaged over a population age table restricted to ages 25 to 90.

A future study enrols n people with ages drawn from that table and records
whether each has an adenoma or cancer, a Bernoulli draw with probability
p(age). The focal parameters are the two Weibull quantities (lambda1_w, g);
dataset summaries are their maximum-likelihood estimates, found by numerical
optimisation.

All-cause mortality is derived from the same age table by reading the weight
column as a stationary population, so each year-on-year weight ratio is a
survival probability; beyond the last tabulated age the mortality rate is
extrapolated on its fitted log-linear trend. State costs, utilities, and
transition means come from a JSON config; the shipped file holds plausible
illustrative values, not the source cost-effectiveness tables, and every PSA
distribution uses sd = 10% of the mean except the screening accuracy pair,
whose spreads are set directly.
"""

from __future__ import annotations

import json
import logging
import math
from importlib import resources

import numpy as np
from scipy.optimize import minimize

from voi.bayes import MhConfig, PriorSpec, mh_sample, moment_to_beta
from voi.core import Dataset, DecisionModel, PsaSet, StudyDesign
from voi.metamodel import BasisSpec

logger = logging.getLogger(__name__)

_STATES = [
    "normal",
    "adenoma",
    "early_undetected",
    "late_undetected",
    "early_detected",
    "late_detected",
    "post_treatment",
    "crc_death",
    "other_death",
]

_TRANSITION_KEYS = [
    "p_adenoma_progress",
    "p_early_late",
    "p_detect_early",
    "p_detect_late",
    "p_cure_early",
    "p_cure_late",
    "p_crc_death_early",
    "p_crc_death_late",
    "p_crc_death_late_undetected",
]

_MORTALITY_CAP = 0.6


def load_default_config() -> dict:
    text = resources.files("voi.models").joinpath("data/crc.json").read_text()
    return json.loads(text)


def load_default_age_table() -> np.ndarray:
    text = resources.files("voi.models").joinpath("data/age_table.csv").read_text()
    return parse_age_table(text)


def parse_age_table(text: str) -> np.ndarray:
    """Parse an ``age,weight`` CSV into a (rows, 2) array, weights normalised."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "age,weight":
        raise ValueError("age table must start with the header 'age,weight'")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return validate_age_table(rows)


def validate_age_table(rows: np.ndarray) -> np.ndarray:
    rows = np.array(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != 2 or rows.shape[0] < 2:
        raise ValueError("age table needs at least two 'age,weight' rows")
    ages = rows[:, 0]
    if np.any(ages != np.round(ages)) or np.any(np.diff(ages) != 1):
        raise ValueError("age table ages must be consecutive integers")
    if ages[0] < 25 or ages[-1] > 90:
        raise ValueError("age table must be restricted to ages 25 to 90")
    if np.any(rows[:, 1] <= 0):
        raise ValueError("age weights must be positive")
    rows[:, 1] /= rows[:, 1].sum()
    return rows


def onset_probability(lambda1_w, g, age):
    """Probability of carrying an adenoma or cancer by ``age``."""
    lam = np.asarray(lambda1_w, dtype=float)
    gg = np.asarray(g, dtype=float)
    if np.any(lam <= 0) or np.any(gg <= 0):
        raise ValueError("lambda1_w and g must be positive")
    out = -np.expm1(-lam * np.asarray(age, dtype=float) ** gg)
    return out if out.ndim else float(out)


def onset_hazard(lambda1_w, g, age):
    """Instantaneous onset rate l(age) matching :func:`onset_probability`."""
    lam = np.asarray(lambda1_w, dtype=float)
    gg = np.asarray(g, dtype=float)
    if np.any(lam <= 0) or np.any(gg <= 0):
        raise ValueError("lambda1_w and g must be positive")
    out = lam * gg * np.asarray(age, dtype=float) ** (gg - 1.0)
    return out if out.ndim else float(out)


class CrcScreeningModel(DecisionModel):
    """See module docstring. Parameter columns: the Weibull pair
    (lambda1_w, g), screening sensitivity and specificity, seven transition
    probabilities, six state utilities, five costs. The adenoma state is
    asymptomatic and shares the normal-state utility, so it has no utility
    parameter of its own.
    """

    name = "crc-screening"
    strategies = ["no_screening", "screening"]
    focal_params = ["lambda1_w", "g"]
    default_wtp = 20_000.0
    default_n = 100
    # net benefit depends on (lambda1_w, g) through the onset curve
    # lambda1_w * age**g, a curved ridge that additive or product-column
    # fits flatten; the tensor block follows it
    preferred_basis = BasisSpec(tensor=True)

    def __init__(self, config: dict | None = None, age_table: np.ndarray | None = None):
        self.config = config or load_default_config()
        cfg = self.config
        table = load_default_age_table() if age_table is None else validate_age_table(age_table)
        self.ages = table[:, 0]
        self.age_weights = table[:, 1]
        self.horizon = int(cfg["horizon_years"])
        self.discount = float(cfg["discount_rate"])
        self.default_wtp = float(cfg.get("default_wtp", self.default_wtp))
        self.default_n = int(cfg.get("default_n", self.default_n))
        self.design_grid = [int(n) for n in cfg.get("design_grid", [])]

        onset = cfg["onset_prior"]
        self._lam_prior = (float(onset["lambda1_meanlog"]), float(onset["lambda1_sdlog"]))
        self._g_prior = (float(onset["g_meanlog"]), float(onset["g_sdlog"]))
        scr = cfg["screening"]
        self.screen_test_cost = float(scr["test_cost"])
        split = cfg["prevalent_split"]
        self._split = np.array(
            [float(split["adenoma"]), float(split["early"]), float(split["late"])]
        )
        if abs(self._split.sum() - 1.0) > 1e-9 or np.any(self._split < 0):
            raise ValueError("prevalent_split must be non-negative and sum to 1")

        util_states = [s for s in _STATES[:7] if s != "adenoma"]
        self.param_names = (
            ["lambda1_w", "g", "sens", "spec"]
            + list(_TRANSITION_KEYS)
            + [f"u_{s}" for s in util_states]
            + [
                "cost_colonoscopy",
                "cost_adenoma_removal",
                "cost_early_treatment",
                "cost_late_treatment",
                "cost_post_treatment",
            ]
        )
        self.priors: list[PriorSpec] = [
            PriorSpec.lognormal(*self._lam_prior),
            PriorSpec.lognormal(*self._g_prior),
            moment_to_beta(float(scr["sens_mean"]), float(scr["sens_sd"])),
            moment_to_beta(float(scr["spec_mean"]), float(scr["spec_sd"])),
        ]
        for key in _TRANSITION_KEYS:
            m = float(cfg["transitions"][key])
            self.priors.append(moment_to_beta(m, 0.1 * m))
        for s in util_states:
            m = float(cfg["utilities"][s])
            self.priors.append(moment_to_beta(m, 0.1 * m))
        for key in ("colonoscopy", "adenoma_removal", "early_treatment", "late_treatment", "post_treatment"):
            m = float(cfg["costs"][key])
            self.priors.append(PriorSpec.gamma(100.0, 100.0 / m))

        self._mort = self._mortality_curve()
        self._log_aref = math.log(float((self.ages * self.age_weights).sum()))
        self._warnings: list[str] = []

    # -- age table ----------------------------------------------------------

    def _mortality_curve(self) -> np.ndarray:
        """Annual death probability by age, indexed from the first table age.

        Read off the weight ratios, then extended past the last table age on
        the fitted log-linear trend so a cohort can be traced to the end of
        the horizon. Clipped to (1e-5, 0.6) to survive rough user tables.
        """
        w = self.age_weights
        m = np.clip(1.0 - w[1:] / w[:-1], 1e-5, _MORTALITY_CAP)
        a = self.ages[:-1]
        slope, intercept = np.polyfit(a, np.log(m), 1)
        need = int(self.ages[-1] - self.ages[0]) + self.horizon + 1
        ages_full = self.ages[0] + np.arange(need)
        out = np.clip(np.exp(intercept + slope * ages_full), 1e-5, _MORTALITY_CAP)
        out[: m.size] = m
        return out

    # -- prior ---------------------------------------------------------------

    def sample_prior(self, n: int, rng: np.random.Generator) -> PsaSet:
        cols = [spec.sample(rng, n) for spec in self.priors]
        return PsaSet(names=list(self.param_names), values=np.column_stack(cols))

    # -- economic model -------------------------------------------------------

    def _state_values(self, theta: np.ndarray, wtp: float) -> np.ndarray:
        """Expected discounted net benefit of starting the trace in each
        living state, per draw and starting age: a (7, S, A) array.

        Backward recursion over the horizon; the two death states are worth
        exactly zero throughout, which keeps them out of the arrays entirely.
        Deaths from other causes come first each year, then onset,
        progression, detection, cure, and cancer death split the survivors.
        """
        s = theta.shape[0]
        a = self.ages.size
        lam = theta[:, 0][:, None]
        g = theta[:, 1][:, None]
        (
            p_prog, p_el, p_de, p_dl, p_ce, p_cl, p_dce, p_dcl, p_dlu,
        ) = (theta[:, 4 + j][:, None] for j in range(9))
        u = [theta[:, 13 + j][:, None] for j in range(6)]
        c_early, c_late, c_post = (theta[:, 21 + j][:, None] for j in range(3))

        # u[0] serves both the normal and the asymptomatic adenoma state
        wtp_u = [wtp * x for x in u]
        r = [
            wtp_u[0],
            wtp_u[0],
            wtp_u[1],
            wtp_u[2],
            wtp_u[3] - c_early,
            wtp_u[4] - c_late,
            wtp_u[5] - c_post,
        ]
        beta = 1.0 / (1.0 + self.discount)
        # one power table covers every age reached inside the horizon
        ages_full = self.ages[0] + np.arange(a + self.horizon)
        pw = np.power(ages_full[None, :], g)

        v = np.zeros((7, s, a))
        for t in reversed(range(self.horizon)):
            alive = 1.0 - self._mort[t : t + a][None, :]
            q_on = -np.expm1(-lam * (pw[:, t + 1 : t + a + 1] - pw[:, t : t + a]))
            v0 = r[0] + beta * alive * (q_on * v[1] + (1.0 - q_on) * v[0])
            v1 = r[1] + beta * alive * (p_prog * v[2] + (1.0 - p_prog) * v[1])
            v2 = r[2] + beta * alive * (
                p_el * v[3] + (1.0 - p_el) * (p_de * v[4] + (1.0 - p_de) * v[2])
            )
            v3 = r[3] + beta * alive * (1.0 - p_dlu) * (p_dl * v[5] + (1.0 - p_dl) * v[3])
            v4 = r[4] + beta * alive * (1.0 - p_dce) * (p_ce * v[6] + (1.0 - p_ce) * v[4])
            v5 = r[5] + beta * alive * (1.0 - p_dcl) * (p_cl * v[6] + (1.0 - p_cl) * v[5])
            v6 = r[6] + beta * alive * v[6]
            v = np.stack([v0, v1, v2, v3, v4, v5, v6])
        return v

    def net_benefit_batch(self, thetas: np.ndarray, wtp: float) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(thetas, dtype=float))
        lam = theta[:, 0][:, None]
        g = theta[:, 1][:, None]
        se = theta[:, 2][:, None]
        sp = theta[:, 3][:, None]
        c_col = theta[:, 19][:, None]
        c_rem = theta[:, 20][:, None]
        f_a, f_e, f_l = self._split

        v = self._state_values(theta, wtp)
        prev = -np.expm1(-lam * self.ages[None, :] ** g)
        undetected = f_a * v[1] + f_e * v[2] + f_l * v[3]
        detected = f_a * v[0] + f_e * v[4] + f_l * v[5]
        nb_none = (1.0 - prev) * v[0] + prev * undetected
        screen_cost = (
            self.screen_test_cost
            + c_col * (prev * se + (1.0 - prev) * (1.0 - sp))
            + c_rem * f_a * prev * se
        )
        nb_screen = (
            (1.0 - prev) * v[0]
            + prev * ((1.0 - se) * undetected + se * detected)
            - screen_cost
        )
        w = self.age_weights[None, :]
        return np.column_stack([(nb_none * w).sum(axis=1), (nb_screen * w).sum(axis=1)])

    def net_benefit(self, theta: np.ndarray, wtp: float) -> np.ndarray:
        return self.net_benefit_batch(np.atleast_2d(theta), wtp)[0]

    def occupancy_history(self, theta: np.ndarray, strategy: int, age: int) -> np.ndarray:
        """Forward cohort trace from one starting age, (horizon+1, 9) rows.

        The same transition logic as the value recursion, kept as an explicit
        occupancy evolution so conservation is directly checkable.
        """
        th = np.atleast_2d(np.asarray(theta, dtype=float))[0]
        lam, g, se, sp = th[0], th[1], th[2], th[3]
        p_prog, p_el, p_de, p_dl, p_ce, p_cl, p_dce, p_dcl, p_dlu = th[4:13]
        f_a, f_e, f_l = self._split

        prev = float(-np.expm1(-lam * float(age) ** g))
        occ = np.zeros((self.horizon + 1, 9))
        if strategy == 0:
            occ[0, :4] = (1.0 - prev, prev * f_a, prev * f_e, prev * f_l)
        else:
            occ[0, 0] = (1.0 - prev) + prev * f_a * se
            occ[0, 1:4] = prev * (1.0 - se) * np.array([f_a, f_e, f_l])
            occ[0, 4:6] = prev * se * np.array([f_e, f_l])

        i0 = int(age - self.ages[0])
        for t in range(self.horizon):
            m = self._mort[i0 + t]
            alive = 1.0 - m
            q_on = float(-np.expm1(-lam * ((age + t + 1.0) ** g - (age + t) ** g)))
            o = occ[t]
            nxt = np.zeros(9)
            nxt[0] = alive * (1.0 - q_on) * o[0]
            nxt[1] = alive * (q_on * o[0] + (1.0 - p_prog) * o[1])
            nxt[2] = alive * (p_prog * o[1] + (1.0 - p_el) * (1.0 - p_de) * o[2])
            nxt[3] = alive * (p_el * o[2] + (1.0 - p_dlu) * (1.0 - p_dl) * o[3])
            nxt[4] = alive * ((1.0 - p_el) * p_de * o[2] + (1.0 - p_dce) * (1.0 - p_ce) * o[4])
            nxt[5] = alive * ((1.0 - p_dlu) * p_dl * o[3] + (1.0 - p_dcl) * (1.0 - p_cl) * o[5])
            nxt[6] = alive * ((1.0 - p_dce) * p_ce * o[4] + (1.0 - p_dcl) * p_cl * o[5] + o[6])
            nxt[7] = o[7] + alive * (p_dlu * o[3] + p_dce * o[4] + p_dcl * o[5])
            nxt[8] = o[8] + m * o[:7].sum()
            occ[t + 1] = nxt
        return occ

    # -- study data -----------------------------------------------------------

    def sample_data(self, phi: np.ndarray, design: StudyDesign, rng: np.random.Generator) -> Dataset:
        lam, g = (float(v) for v in phi)
        n = design.n
        if n:
            ages = rng.choice(self.ages, size=n, p=self.age_weights).astype(int)
            x = (rng.random(n) < onset_probability(lam, g, ages)).astype(int)
        else:
            ages = np.empty(0, dtype=int)
            x = np.empty(0, dtype=int)
        i0 = int(self.ages[0])
        n_by_age = np.bincount(ages - i0, minlength=self.ages.size).astype(float)
        x_by_age = np.bincount(ages - i0, weights=x, minlength=self.ages.size)
        return Dataset(
            data={"n": n, "ages": ages, "x": x, "n_by_age": n_by_age, "x_by_age": x_by_age},
            design=design,
            origin_phi=np.asarray(phi, dtype=float).copy(),
        )

    def _log_lik_terms(self, phis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """log p(a) and log(1 - p(a)) over the table ages, per phi row.

        The complement is -lam * a**g exactly, so no probability ever rounds
        to one; the direct term only needs guarding where mu underflows.
        """
        lam = phis[:, 0][:, None]
        g = phis[:, 1][:, None]
        mu = lam * self.ages[None, :] ** g
        with np.errstate(divide="ignore"):
            log_p = np.log(-np.expm1(-mu))
        tiny = mu < 1e-300
        if np.any(tiny):
            log_p = np.where(tiny, np.log(np.maximum(mu, 1e-320)), log_p)
        return log_p, -mu

    def log_likelihood_batch(self, dataset: Dataset, phis: np.ndarray) -> np.ndarray:
        phis = np.atleast_2d(np.asarray(phis, dtype=float))
        d = dataset.data
        if d["n"] == 0:
            return np.zeros(phis.shape[0])
        log_p, log_q = self._log_lik_terms(phis)
        return log_p @ d["x_by_age"] + log_q @ (d["n_by_age"] - d["x_by_age"])

    def log_likelihood(self, dataset: Dataset, phi: np.ndarray) -> float:
        return float(self.log_likelihood_batch(dataset, np.atleast_2d(phi))[0])

    def log_likelihood_many(self, datasets, phis: np.ndarray) -> np.ndarray:
        """Binned counts make the matrix one product of sufficient statistics
        with per-phi log terms, exactly as the per-dataset path computes it.
        """
        phis = np.atleast_2d(np.asarray(phis, dtype=float))
        a = self.ages.size
        u = np.empty((len(datasets), 2 * a))
        for i, ds in enumerate(datasets):
            d = ds.data
            u[i, :a] = d["x_by_age"]
            u[i, a:] = d["n_by_age"] - d["x_by_age"]
        log_p, log_q = self._log_lik_terms(phis)
        return u @ np.concatenate([log_p, log_q], axis=1).T

    # -- posterior --------------------------------------------------------------

    def posterior_sample(
        self,
        dataset: Dataset,
        n: int,
        rng: np.random.Generator,
        mh: MhConfig | None = None,
    ) -> PsaSet:
        """Random-walk MH over (log lambda1_w, log g); every other parameter
        is untouched by the study and redrawn from its prior.

        The chain runs in the rotated coordinates (log lambda1_w +
        g * log(a_ref), log g) with a_ref the mean table age: the data pin
        down the cumulative hazard near the centre of the age range, so the
        rotation removes most of the strong negative correlation between the
        raw coordinates. The map back is unit-Jacobian, so the target density
        is unchanged.
        """
        prior = self.sample_prior(n, rng)
        if dataset.data["n"] == 0:
            return prior
        out = prior.values
        chain = self._mh_focal(dataset, n, rng, mh)
        out[:, 0] = chain[:, 0]
        out[:, 1] = chain[:, 1]
        return PsaSet(names=list(self.param_names), values=out)

    def _mh_focal(
        self,
        dataset: Dataset,
        n_draws: int,
        rng: np.random.Generator,
        mh: MhConfig | None,
    ) -> np.ndarray:
        d = dataset.data
        x_by_age = d["x_by_age"]
        nmx_by_age = d["n_by_age"] - x_by_age
        ages = self.ages
        la = self._log_aref
        (m_lam, s_lam), (m_g, s_g) = self._lam_prior, self._g_prior
        exp, log = math.exp, math.log

        def log_target(z) -> float:
            g = exp(z[1])
            loglam = z[0] - g * la
            if loglam < -300.0 or loglam > 50.0:
                return -math.inf
            lam = exp(loglam)
            mu = lam * ages**g
            with np.errstate(divide="ignore"):
                ll = float(x_by_age @ np.log(-np.expm1(-mu)) - nmx_by_age @ mu)
            if not math.isfinite(ll):
                return -math.inf
            lp = -0.5 * ((loglam - m_lam) / s_lam) ** 2 - 0.5 * ((z[1] - m_g) / s_g) ** 2
            return ll + lp

        origin = dataset.origin_phi
        if origin is not None and origin[0] > 0 and origin[1] > 0:
            g0 = float(origin[1])
            init = np.array([log(float(origin[0])) + g0 * la, log(g0)])
        else:
            init = np.array([m_lam + exp(m_g) * la, m_g])
        base_sd = np.array([0.25, 0.15])
        if mh is None:
            cfg = MhConfig.for_draws(n_draws, burn_in=500, proposal_sd=base_sd)
        else:
            cfg = MhConfig(
                steps=mh.burn_in + n_draws * mh.thinning,
                burn_in=mh.burn_in,
                thinning=mh.thinning,
                proposal_sd=mh.proposal_sd if np.size(mh.proposal_sd) == 2 else base_sd,
                target_accept=mh.target_accept,
                seed=mh.seed,
            )
        chain, diag = mh_sample(log_target, init, cfg, rng)
        self._warnings.extend(diag.warnings)
        g = np.exp(chain[:, 1])
        return np.column_stack([np.exp(chain[:, 0] - g * la), g])

    def drain_warnings(self) -> list[str]:
        out, self._warnings = self._warnings, []
        seen: dict[str, int] = {}
        for w in out:
            seen[w] = seen.get(w, 0) + 1
        return [w if c == 1 else f"{w} (x{c})" for w, c in seen.items()]

    # -- summaries ----------------------------------------------------------------

    @property
    def summary_names(self) -> list[str]:
        return ["log_lambda1_mle", "log_g_mle"]

    def _neg_log_lik(self, z: np.ndarray, x_by_age: np.ndarray, nmx_by_age: np.ndarray) -> float:
        g = math.exp(z[1])
        if not (-600.0 < z[0] < 100.0) or not (1e-6 < g < 1e3):
            return 1e30
        log_mu = z[0] + g * np.log(self.ages)
        if log_mu.max() > 50.0:
            return 1e30
        mu = np.exp(log_mu)
        with np.errstate(divide="ignore"):
            ll = float(x_by_age @ np.log(-np.expm1(-mu)) - nmx_by_age @ mu)
        return -ll if math.isfinite(ll) else 1e30

    def _mom_start(self, x_by_age: np.ndarray, n_by_age: np.ndarray) -> np.ndarray:
        """Method-of-moments start: match -log(1 - prevalence) in the two
        halves of the observed age range.
        """
        n_lo = n_hi = x_lo = x_hi = a_lo = a_hi = 0.0
        mid = float(np.median(np.repeat(self.ages, n_by_age.astype(int)))) if n_by_age.sum() else 60.0
        for age, nn, xx in zip(self.ages, n_by_age, x_by_age):
            if nn == 0:
                continue
            if age <= mid:
                n_lo, x_lo, a_lo = n_lo + nn, x_lo + xx, a_lo + nn * age
            else:
                n_hi, x_hi, a_hi = n_hi + nn, x_hi + xx, a_hi + nn * age
        if n_lo == 0 or n_hi == 0:
            return np.array([self._lam_prior[0], self._g_prior[0]])
        p_lo = min(max(x_lo / n_lo, 0.5 / n_lo), 1.0 - 0.5 / n_lo)
        p_hi = min(max(x_hi / n_hi, 0.5 / n_hi), 1.0 - 0.5 / n_hi)
        l_lo, l_hi = -math.log1p(-p_lo), -math.log1p(-p_hi)
        a1, a2 = a_lo / n_lo, a_hi / n_hi
        g = math.log(l_hi / l_lo) / math.log(a2 / a1) if l_hi > l_lo else 1.0
        g = min(max(g, 0.05), 20.0)
        return np.array([math.log(l_lo) - g * math.log(a1), math.log(g)])

    def summarize(self, dataset: Dataset) -> np.ndarray:
        """Maximum-likelihood (log lambda1_w, log g) by Nelder-Mead.

        Datasets whose outcomes are all positive or all negative have no
        finite MLE, and an optimiser failure can leave a nonsense point; both
        fall back to a weakly penalised fit that ridges the log parameters
        toward their prior means, and are flagged.
        """
        d = dataset.data
        x_by_age, n_by_age = d["x_by_age"], d["n_by_age"]
        nmx_by_age = n_by_age - x_by_age
        total_x, total_n = x_by_age.sum(), n_by_age.sum()
        if total_n == 0:
            return np.array([self._lam_prior[0], self._g_prior[0]])
        degenerate = total_x == 0 or total_x == total_n
        start = self._mom_start(x_by_age, n_by_age)

        if not degenerate:
            res = minimize(
                self._neg_log_lik, start, args=(x_by_age, nmx_by_age),
                method="Nelder-Mead",
                options={"xatol": 1e-6, "fatol": 1e-9, "maxiter": 400},
            )
            if res.success and np.all(np.isfinite(res.x)) and res.fun < 1e29:
                return np.asarray(res.x, dtype=float)
            self._warnings.append(
                "crc mle optimiser failed; method-of-moments summary used"
            )
            return start

        (m_lam, s_lam), (m_g, s_g) = self._lam_prior, self._g_prior

        def penalised(z):
            ridge = 0.5 * ((z[0] - m_lam) / s_lam) ** 2 + 0.5 * ((z[1] - m_g) / s_g) ** 2
            return self._neg_log_lik(z, x_by_age, nmx_by_age) + ridge

        res = minimize(
            penalised, np.array([m_lam, m_g]), method="Nelder-Mead",
            options={"xatol": 1e-6, "fatol": 1e-9, "maxiter": 400},
        )
        self._warnings.append(
            "crc dataset with all-zero or all-one outcomes; penalised mle summary used"
        )
        if res.success and np.all(np.isfinite(res.x)):
            return np.asarray(res.x, dtype=float)
        return np.array([m_lam, m_g])
