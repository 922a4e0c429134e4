"""Fast EVSI estimators and supporting machinery.

Four approximations to the nested Monte Carlo reference, in increasing order
of how much posterior work they need:

- ``evsi_jalal``: rescale the terms of a spline fit of incremental net
  benefit on the focal parameters by sqrt(n / (n + N0)), where N0 is the
  prior's effective sample size. Needs no per-dataset simulation at all once
  N0 is known, so a whole sample-size grid is nearly free.
- ``evsi_strong``: regress incremental net benefit on low-dimensional
  summaries of one simulated dataset per PSA draw.
- ``evsi_menzies``: importance-reweight the conditional-mean fit
  (the EVPPI regression) by the likelihood of each simulated dataset.
- ``evsi_heath``: shrink the conditional-mean fit toward its centre so its
  variance matches the preposterior variance measured by a handful of
  nested posterior runs.

All of them consume the same PSA draws and put the reference strategy at
exactly zero, so the "do nothing new" option is always on the table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from voi.bayes import MhConfig, effective_sample_size
from voi.core import (
    DecisionModel,
    NetBenefitTable,
    PsaSet,
    StudyDesign,
    compute_nb_table,
    incremental,
)
from voi.metamodel import BasisSpec, EvppiResult, MetaModelFit, evppi_regression, fit_metamodel


@dataclass
class EvsiEstimate:
    method: str
    value: float
    design: StudyDesign
    evppi: float | None = None
    details: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def _nb_table(model, psa, wtp, nb):
    return nb if nb is not None else compute_nb_table(model, psa, wtp)


def default_basis(model, basis: BasisSpec | None = None) -> BasisSpec:
    """Explicit basis, else the model's declared preference, else pairwise splines."""
    if basis is not None:
        return basis
    preferred = getattr(model, "preferred_basis", None)
    return preferred if preferred is not None else BasisSpec(pairwise=True)


_default_basis = default_basis


def _evppi_fit(model, psa, inb, basis, evppi):
    if evppi is not None:
        return evppi
    return evppi_regression(inb, psa, model.focal_params, basis=basis)


# ---------------------------------------------------------------------------
# regression on dataset summaries


def evsi_strong(
    model: DecisionModel,
    psa: PsaSet,
    design: StudyDesign,
    wtp: float,
    rng: np.random.Generator,
    *,
    basis: BasisSpec | None = None,
    nb: NetBenefitTable | None = None,
    keep_fits: bool = False,
) -> EvsiEstimate:
    """EVSI by regressing incremental net benefit on dataset summaries.

    One dataset is simulated per PSA draw from that draw's focal parameters;
    the model's summary vector of each dataset becomes the covariates. The
    fitted values estimate E[INB | summary], and their best-arm average
    minus the current best is the EVSI. With ``keep_fits`` the per-strategy
    regression objects are attached under ``details["fits"]`` for residual
    diagnostics.
    """
    basis = _default_basis(model, basis)
    table = _nb_table(model, psa, wtp, nb)
    inb = incremental(table)
    phis = psa.subset(model.focal_params)
    summaries = np.asarray(model.sample_summaries_batch(phis, design, rng), dtype=float)
    if summaries.ndim == 1:
        summaries = summaries[:, None]
    if summaries.shape[0] != psa.n_samples:
        raise ValueError("one summary row per PSA draw required")
    names = list(getattr(model, "summary_names", None) or
                 [f"s{i}" for i in range(summaries.shape[1])])[: summaries.shape[1]]
    s, t = inb.values.shape
    mu = np.zeros((s, t))
    fits: list[MetaModelFit] = []
    warnings: list[str] = []
    for col in range(t):
        if col == inb.reference:
            continue
        fit = fit_metamodel(inb.values[:, col], summaries, names=names, basis=basis)
        mu[:, col] = fit.fitted
        fits.append(fit)
        if fit.dropped and design.n > 0:
            warnings.append(
                f"constant summaries dropped from the fit: {', '.join(fit.dropped)}"
            )
    if design.n == 0:
        # imputed summaries are constant across the outer draws, so the
        # fitted surfaces carry no information and the value is exactly zero;
        # the fits are still produced for residual diagnostics
        value = 0.0
    else:
        value = float(mu.max(axis=1).mean() - mu.mean(axis=0).max())
    details = {"lambdas": [f.lambda_ for f in fits], "edf": [f.edf for f in fits]}
    if keep_fits:
        details["fits"] = fits
        details["inb"] = inb
    return EvsiEstimate(
        method="strong",
        value=value,
        design=design,
        details=details,
        warnings=sorted(set(warnings)),
    )


# ---------------------------------------------------------------------------
# likelihood reweighting


def evsi_menzies(
    model: DecisionModel,
    psa: PsaSet,
    design: StudyDesign,
    wtp: float,
    rng: np.random.Generator,
    *,
    n_outer: int | None = None,
    pool_size: int | None = None,
    basis: BasisSpec | None = None,
    nb: NetBenefitTable | None = None,
    evppi: EvppiResult | None = None,
    ess_frac: float = 0.05,
    chunk: int = 256,
) -> EvsiEstimate:
    """EVSI by importance-reweighting the conditional-mean fit.

    A dataset is simulated from each of the first ``n_outer`` PSA draws; the
    posterior mean of incremental net benefit given that dataset is the
    likelihood-weighted average of the EVPPI fitted values over a pool of
    ``pool_size`` focal-parameter draws (the leading PSA rows). Weights are
    normalised per dataset after subtracting the row maximum, and the mean
    effective sample size of the weights is reported; a mean below
    ``ess_frac`` of the pool triggers a degeneracy warning.

    The no-data baseline (the prior-expected maximum) is evaluated as a
    uniform-weight row through the same matrix product as the reweighted
    rows, so a likelihood that is flat over the pool cancels it exactly.
    """
    s = psa.n_samples
    n_outer = s if n_outer is None else int(n_outer)
    k = s if pool_size is None else int(pool_size)
    if not 1 <= n_outer <= s or not 2 <= k <= s:
        raise ValueError("n_outer and pool_size must fit inside the PSA set")
    basis = _default_basis(model, basis)
    table = _nb_table(model, psa, wtp, nb)
    inb = incremental(table)
    ev = _evppi_fit(model, psa, inb, basis, evppi)
    if design.n == 0:
        # a size-zero study produces no data: the posterior is the prior and
        # the expected posterior maximum equals the current best exactly
        return EvsiEstimate(
            method="menzies",
            value=0.0,
            design=design,
            evppi=ev.value,
            details={"mean_ess": float(k), "min_ess": float(k), "pool": k},
            warnings=[],
        )
    phis = psa.subset(model.focal_params)
    pool_phis = phis[:k]
    mu_pool = ev.mu[:k]

    outer_vals = np.empty(n_outer)
    ess = np.empty(n_outer)
    streams = rng.spawn(n_outer)
    w_flat = np.full((1, k), 1.0 / k)
    for lo in range(0, n_outer, chunk):
        hi = min(lo + chunk, n_outer)
        datasets = [
            model.sample_data(phis[i], design, streams[i]) for i in range(lo, hi)
        ]
        ll = np.asarray(model.log_likelihood_many(datasets, pool_phis), dtype=float)
        if ll.shape != (hi - lo, k):
            raise ValueError(f"likelihood matrix shape {ll.shape}, expected {(hi-lo, k)}")
        ll -= ll.max(axis=1, keepdims=True)
        w = np.exp(ll)
        w /= w.sum(axis=1, keepdims=True)
        ess[lo:hi] = 1.0 / np.einsum("ij,ij->i", w, w)
        # the uniform row rides through the same product so flat weights
        # reproduce the baseline bit for bit
        p = np.vstack([w_flat, w]) @ mu_pool
        outer_vals[lo:hi] = p[1:].max(axis=1) - p[0].max()

    value = float(outer_vals.mean())
    warnings = []
    mean_ess = float(ess.mean())
    if design.n > 0 and mean_ess < ess_frac * k:
        warnings.append(
            f"importance weights are degenerate: mean ESS {mean_ess:.1f} of "
            f"pool {k} ({100*mean_ess/k:.2f}% < {100*ess_frac:.0f}%); the "
            "estimate is unreliable at this sample size"
        )
    return EvsiEstimate(
        method="menzies",
        value=value,
        design=design,
        evppi=ev.value,
        details={"mean_ess": mean_ess, "min_ess": float(ess.min()), "pool": k},
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# prior effective sample size and linear rescaling


@dataclass
class N0Estimate:
    params: list[str]
    values: np.ndarray
    method: str
    probe_n: int | None = None
    details: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def by_name(self, name: str) -> float:
        return float(self.values[self.params.index(name)])


def _n0_values(n0, params: Sequence[str]) -> np.ndarray:
    if isinstance(n0, N0Estimate):
        return np.array([n0.by_name(p) for p in params], dtype=float)
    if isinstance(n0, Mapping):
        return np.array([float(n0[p]) for p in params], dtype=float)
    arr = np.asarray(n0, dtype=float)
    if arr.ndim == 0:
        return np.full(len(params), float(arr))
    if arr.size != len(params):
        raise ValueError(f"{arr.size} N0 values for {len(params)} parameters")
    return arr


def estimate_n0_nested(
    model: DecisionModel,
    rng: np.random.Generator,
    *,
    probe_n: int = 10,
    n_datasets: int = 60,
    r_inner: int = 400,
    mh: MhConfig | None = None,
) -> N0Estimate:
    """Prior effective sample size per focal parameter, by nested simulation.

    For each of ``n_datasets`` prior draws, a probe study of size ``probe_n``
    is simulated and the posterior mean of each focal parameter computed from
    ``r_inner`` posterior draws. Writing v for the variance of those means
    across datasets, a normal-conjugate analogy gives

        N0 = probe_n * (prior_var / v - 1).

    The Monte Carlo error of each posterior mean inflates v, so the mean
    squared chain error (chain variance over its effective sample size) is
    subtracted first.
    """
    if probe_n < 1:
        raise ValueError("probe_n must be at least 1")
    psa = model.sample_prior(n_datasets, rng)
    phi_idx = model.phi_index()
    phis = psa.values[:, phi_idx]
    design = model.make_design(probe_n)

    d = len(phi_idx)
    post_means = np.empty((n_datasets, d))
    mc_var = np.empty((n_datasets, d))
    streams = rng.spawn(n_datasets)
    for s in range(n_datasets):
        ds = model.sample_data(phis[s], design, streams[s])
        post = model.posterior_sample(ds, r_inner, streams[s], mh=mh)
        draws = post.values[:, phi_idx]
        post_means[s] = draws.mean(axis=0)
        for j in range(d):
            ess = effective_sample_size(draws[:, j])
            mc_var[s, j] = draws[:, j].var(ddof=1) / max(ess, 1.0)

    # prior variance from a generous fresh sample, cheap by construction
    prior = model.sample_prior(max(4 * n_datasets, 2000), rng)
    prior_var = prior.values[:, phi_idx].var(axis=0, ddof=1)

    warnings = []
    values = np.empty(d)
    for j in range(d):
        raw = post_means[:, j].var(ddof=1)
        corrected = raw - mc_var[:, j].mean()
        v = corrected
        if corrected < 0.05 * raw:
            v = 0.05 * raw
            warnings.append(
                f"{model.focal_params[j]}: posterior-mean variance is mostly "
                "Monte Carlo noise; N0 may be overstated"
            )
        ratio = prior_var[j] / v
        if ratio <= 1.0:
            values[j] = 0.0
            warnings.append(
                f"{model.focal_params[j]}: probe study is close to fully "
                "informative (N0 clamped to 0)"
            )
        else:
            values[j] = probe_n * (ratio - 1.0)
    return N0Estimate(
        params=list(model.focal_params),
        values=values,
        method="nested",
        probe_n=probe_n,
        details={"n_datasets": n_datasets, "r_inner": r_inner},
        warnings=warnings,
    )


def estimate_n0_summary(
    model: DecisionModel,
    rng: np.random.Generator,
    *,
    probe_n: int = 20,
    n_phi: int = 200,
    n_reps: int = 20,
) -> N0Estimate:
    """Prior effective sample size from summary-statistic variability.

    Requires the model's dataset summaries to be direct estimators of the
    focal parameters, in the same order and on the same scale. For each of
    ``n_phi`` prior draws, ``n_reps`` replicate probe datasets give the
    sampling variance of the summary at fixed phi; probe_n times its average
    is the per-observation variance, and N0 is that divided by the prior
    variance.
    """
    psa = model.sample_prior(n_phi, rng)
    phi_idx = model.phi_index()
    phis = psa.values[:, phi_idx]
    d = len(phi_idx)
    design = model.make_design(probe_n)

    within = np.zeros((n_phi, d))
    for rep_phis in range(n_phi):
        reps = model.sample_summaries_batch(
            np.repeat(phis[[rep_phis]], n_reps, axis=0), design, rng
        )
        reps = np.asarray(reps, dtype=float)
        if reps.shape[1] < d:
            raise ValueError(
                "summary vector shorter than the focal block; the summary "
                "route needs one summary per focal parameter"
            )
        within[rep_phis] = reps[:, :d].var(axis=0, ddof=1)

    prior = model.sample_prior(max(4 * n_phi, 2000), rng)
    prior_var = prior.values[:, phi_idx].var(axis=0, ddof=1)
    per_obs = probe_n * within.mean(axis=0)
    values = per_obs / prior_var
    return N0Estimate(
        params=list(model.focal_params),
        values=values,
        method="summary",
        probe_n=probe_n,
        details={"n_phi": n_phi, "n_reps": n_reps},
    )


@dataclass
class JalalFit:
    """Reusable linear-rescaling fit: evaluate EVSI at any sample size."""

    strategies: list[str]
    reference: int
    param_names: list[str]
    col_means: np.ndarray
    fits: list[MetaModelFit]
    fit_cols: list[int]

    def evsi(self, n: int, n0) -> float:
        n0v = _n0_values(n0, self.param_names)
        if np.any(n0v < 0):
            raise ValueError("N0 values must be non-negative")
        s = self.fits[0].fitted.size if self.fits else 0
        t = len(self.strategies)
        mu = np.tile(self.col_means, (s, 1))
        scale = {
            p: math.sqrt(n / (n + v)) if (n > 0 or v == 0) and n + v > 0 else 0.0
            for p, v in zip(self.param_names, n0v)
        }
        if n == 0:
            scale = {p: 0.0 for p in self.param_names}
        for col, fit in zip(self.fit_cols, self.fits):
            adj = np.zeros(s)
            for j, name in enumerate(fit.covariate_names):
                adj += scale[name] * fit.term_values[:, j]
            mu[:, col] += adj
        return float(mu.max(axis=1).mean() - self.col_means.max())


def jalal_fit(
    nb: NetBenefitTable | np.ndarray,
    psa: PsaSet,
    params: Sequence[str],
    basis: BasisSpec | None = None,
) -> JalalFit:
    """Fit the conditional-mean regression once, for reuse across sample sizes."""
    if basis is not None and (basis.pairwise or basis.tensor):
        raise ValueError(
            "per-parameter term scaling needs an additive fit; "
            "use a BasisSpec without pairwise or tensor blocks"
        )
    inb = incremental(nb) if not hasattr(nb, "reference") else nb
    vals = inb.values
    fits, cols = [], []
    for col in range(vals.shape[1]):
        if col == inb.reference:
            continue
        fits.append(fit_metamodel(vals[:, col], psa.subset(params), names=list(params), basis=basis))
        cols.append(col)
    col_means = vals.mean(axis=0)
    return JalalFit(
        strategies=list(inb.strategies),
        reference=inb.reference,
        param_names=list(params),
        col_means=col_means,
        fits=fits,
        fit_cols=cols,
    )


def evsi_jalal(
    model: DecisionModel,
    psa: PsaSet,
    design: StudyDesign,
    wtp: float,
    n0: "N0Estimate | Mapping[str, float] | float | Sequence[float]",
    *,
    basis: BasisSpec | None = None,
    nb: NetBenefitTable | None = None,
    fit: JalalFit | None = None,
) -> EvsiEstimate:
    """EVSI by shrinking each regression term with sqrt(n / (n + N0)).

    The fitted conditional mean of incremental net benefit given the focal
    parameters is decomposed per parameter; a future study of size n moves
    the posterior mean of parameter j a fraction sqrt(n / (n + N0_j)) of the
    way toward its true deviation, so each term is scaled by that factor and
    the best-arm average recomputed. Re-evaluating at another n costs nothing.
    """
    if fit is None:
        table = _nb_table(model, psa, wtp, nb)
        fit = jalal_fit(table, psa, model.focal_params, basis=basis)
    value = fit.evsi(design.n, n0)
    n0v = _n0_values(n0, fit.param_names)
    evppi_val = fit.evsi(1, np.zeros(len(fit.param_names))) if design.n else None
    return EvsiEstimate(
        method="jalal",
        value=value,
        design=design,
        evppi=evppi_val,
        details={"n0": dict(zip(fit.param_names, n0v.tolist()))},
    )


# ---------------------------------------------------------------------------
# moment matching


@dataclass
class HeathVariance:
    sigma2: np.ndarray
    total_var: np.ndarray
    mu_var: np.ndarray
    probe_var: np.ndarray
    probe_indices: np.ndarray
    warnings: list[str] = field(default_factory=list)


def _heath_probe_indices(
    mu: np.ndarray, reference: int, q: int, rng: np.random.Generator
) -> np.ndarray:
    """One row drawn from each of q equal-probability strata of the fitted
    conditional-mean ordering.

    Posterior variance varies strongly across the parameter space, so the
    probe average must be unbiased for its expectation; drawing uniformly
    within strata keeps the quantile spread of deterministic placement
    without the midpoint bias it picks up when the variance is steep inside
    the tail strata.
    """
    s, t = mu.shape
    nonref = [c for c in range(t) if c != reference]
    order_by = mu[:, nonref[0]] if len(nonref) == 1 else mu.max(axis=1)
    order = np.argsort(order_by, kind="stable")
    edges = np.linspace(0, s, q + 1).astype(int)
    pos = np.array([rng.integers(lo, max(lo + 1, hi)) for lo, hi in zip(edges[:-1], edges[1:])])
    return order[np.clip(pos, 0, s - 1)]


def heath_preposterior_variance(
    model: DecisionModel,
    psa: PsaSet,
    design: StudyDesign,
    wtp: float,
    rng: np.random.Generator,
    *,
    q: int = 30,
    r_inner: int = 500,
    basis: BasisSpec | None = None,
    nb: NetBenefitTable | None = None,
    evppi: EvppiResult | None = None,
    mh: MhConfig | None = None,
) -> HeathVariance:
    """Variance of the preposterior mean of incremental net benefit.

    By the law of total variance this is var(INB) minus the expected
    posterior variance, the latter averaged over ``q`` nested posterior runs
    whose generating parameters are spread over the fitted conditional-mean
    distribution. A slightly negative estimate is clamped to zero; one
    below -5% of the total variance raises, since that signals a broken
    posterior sampler rather than noise. Values above the conditional-mean
    variance are capped at it (information about the focal parameters cannot
    exceed perfect information).

    Posterior chains default to a thinned configuration: sample variances,
    unlike sample means, are biased low by chain autocorrelation, and the
    bias lands directly in the variance difference.
    """
    basis = _default_basis(model, basis)
    if mh is None:
        mh = MhConfig.for_draws(r_inner, burn_in=1000, thinning=4)
    table = _nb_table(model, psa, wtp, nb)
    inb = incremental(table)
    ev = _evppi_fit(model, psa, inb, basis, evppi)
    t = len(inb.strategies)
    total = inb.values.var(axis=0, ddof=1)
    mu_var = ev.mu.var(axis=0, ddof=1)
    warnings: list[str] = []

    if design.n == 0:
        return HeathVariance(
            sigma2=np.zeros(t),
            total_var=total,
            mu_var=mu_var,
            probe_var=np.empty((0, t)),
            probe_indices=np.empty(0, dtype=int),
        )

    idx = _heath_probe_indices(ev.mu, inb.reference, q, rng)
    phis = psa.subset(model.focal_params)
    probe_var = np.empty((q, t))
    streams = rng.spawn(q)
    for i, row in enumerate(idx):
        ds = model.sample_data(phis[row], design, streams[i])
        post = model.posterior_sample(ds, r_inner, streams[i], mh=mh)
        pnb = np.asarray(model.net_benefit_batch(post.values, wtp), dtype=float)
        pinb = pnb - pnb[:, [inb.reference]]
        probe_var[i] = pinb.var(axis=0, ddof=1)

    sigma2 = total - probe_var.mean(axis=0)
    for col in range(t):
        if col == inb.reference:
            sigma2[col] = 0.0
            continue
        if sigma2[col] < -0.05 * total[col]:
            raise ValueError(
                f"preposterior variance for {inb.strategies[col]!r} is "
                f"{sigma2[col]:.4g}, below -5% of the total {total[col]:.4g}; "
                "posterior draws look inconsistent with the prior sample"
            )
        if sigma2[col] < 0.0:
            sigma2[col] = 0.0
            warnings.append(
                f"{inb.strategies[col]}: small negative variance clamped to zero"
            )
        if sigma2[col] > mu_var[col]:
            sigma2[col] = mu_var[col]
            warnings.append(
                f"{inb.strategies[col]}: variance capped at the conditional-mean "
                "variance (study would be effectively fully informative)"
            )
    return HeathVariance(
        sigma2=sigma2,
        total_var=total,
        mu_var=mu_var,
        probe_var=probe_var,
        probe_indices=idx,
        warnings=warnings,
    )


def _heath_evsi_from_sigma2(ev: EvppiResult, sigma2: np.ndarray, reference: int) -> float:
    mu = ev.mu
    col_means = mu.mean(axis=0)
    mu_var = mu.var(axis=0, ddof=1)
    out = np.tile(col_means, (mu.shape[0], 1))
    for col in range(mu.shape[1]):
        if col == reference or mu_var[col] == 0.0:
            continue
        ratio = math.sqrt(min(sigma2[col] / mu_var[col], 1.0))
        if ratio == 1.0:
            out[:, col] = mu[:, col]
        else:
            out[:, col] = col_means[col] + (mu[:, col] - col_means[col]) * ratio
    # row-paired difference: when every column collapses onto its mean the
    # per-row terms are identical doubles and the value is exactly zero
    return float(np.mean(out.max(axis=1) - col_means.max()))


def evsi_heath(
    model: DecisionModel,
    psa: PsaSet,
    design: StudyDesign,
    wtp: float,
    rng: np.random.Generator,
    *,
    q: int = 30,
    r_inner: int = 500,
    basis: BasisSpec | None = None,
    nb: NetBenefitTable | None = None,
    evppi: EvppiResult | None = None,
    mh: MhConfig | None = None,
) -> EvsiEstimate:
    """EVSI by matching the conditional-mean fit to the preposterior variance."""
    basis = _default_basis(model, basis)
    table = _nb_table(model, psa, wtp, nb)
    inb = incremental(table)
    ev = _evppi_fit(model, psa, inb, basis, evppi)
    hv = heath_preposterior_variance(
        model, psa, design, wtp, rng,
        q=q, r_inner=r_inner, basis=basis, nb=table, evppi=ev, mh=mh,
    )
    value = _heath_evsi_from_sigma2(ev, hv.sigma2, inb.reference)
    return EvsiEstimate(
        method="heath",
        value=value,
        design=design,
        evppi=ev.value,
        details={
            "sigma2": hv.sigma2.tolist(),
            "mu_var": hv.mu_var.tolist(),
            "q": q,
        },
        warnings=list(hv.warnings),
    )


@dataclass
class HeathCurve:
    """Fitted variance-vs-n curves, evaluable at any sample size."""

    strategies: list[str]
    reference: int
    sigma2_max: np.ndarray
    nu: np.ndarray
    mu_var: np.ndarray
    points_n: np.ndarray
    points_reduction: np.ndarray
    _evppi: EvppiResult = field(repr=False, default=None)
    warnings: list[str] = field(default_factory=list)

    def sigma2(self, n: int) -> np.ndarray:
        n = float(n)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = self.sigma2_max * n / (n + self.nu)
        return np.where(n <= 0, 0.0, out)

    def evsi(self, n: int) -> float:
        return _heath_evsi_from_sigma2(self._evppi, self.sigma2(n), self.reference)

    def residuals(self) -> np.ndarray:
        """Fit residuals at the probe sizes, one column per strategy."""
        pred = np.array([self.sigma2(n) for n in self.points_n])
        return self.points_reduction - pred


def heath_variance_across_n(
    model: DecisionModel,
    psa: PsaSet,
    n_grid: Sequence[int],
    wtp: float,
    rng: np.random.Generator,
    *,
    q: int = 30,
    r_inner: int = 500,
    basis: BasisSpec | None = None,
    nb: NetBenefitTable | None = None,
    evppi: EvppiResult | None = None,
    mh: MhConfig | None = None,
) -> HeathCurve:
    """One nested-run budget, a whole sample-size curve.

    Each of the ``q`` probe runs uses a different study size drawn from
    ``n_grid`` (cycled in sorted order), giving per-size observations of the
    variance reduction. A curve sigma2(n) = a * n / (n + nu) is then fitted
    per strategy by least squares, with a capped at the conditional-mean
    variance, after which EVSI at any n is a pure rescaling exercise.
    """
    sizes = sorted({int(n) for n in n_grid if int(n) > 0})
    if len(sizes) < 3:
        raise ValueError("need at least 3 distinct positive sizes to fit a curve")
    basis = _default_basis(model, basis)
    if mh is None:
        mh = MhConfig.for_draws(r_inner, burn_in=1000, thinning=4)
    table = _nb_table(model, psa, wtp, nb)
    inb = incremental(table)
    ev = _evppi_fit(model, psa, inb, basis, evppi)
    t = len(inb.strategies)
    total = inb.values.var(axis=0, ddof=1)
    mu_var = ev.mu.var(axis=0, ddof=1)

    idx = _heath_probe_indices(ev.mu, inb.reference, q, rng)
    phis = psa.subset(model.focal_params)
    probe_n = np.array([sizes[i % len(sizes)] for i in range(q)])
    reduction = np.empty((q, t))
    streams = rng.spawn(q)
    for i, row in enumerate(idx):
        design = model.make_design(int(probe_n[i]))
        ds = model.sample_data(phis[row], design, streams[i])
        post = model.posterior_sample(ds, r_inner, streams[i], mh=mh)
        pnb = np.asarray(model.net_benefit_batch(post.values, wtp), dtype=float)
        pinb = pnb - pnb[:, [inb.reference]]
        reduction[i] = total - pinb.var(axis=0, ddof=1)

    sigma2_max = np.zeros(t)
    nu = np.ones(t)
    warnings: list[str] = []
    for col in range(t):
        if col == inb.reference:
            continue
        y = reduction[:, col]
        cap = mu_var[col]
        if cap <= 0:
            continue
        a0 = min(cap, max(float(np.median(y)), 1e-3 * cap))
        nu0 = float(np.median(probe_n))

        def resid(p, y=y):
            a, v = p
            return a * probe_n / (probe_n + v) - y

        sol = least_squares(
            resid, x0=[a0, nu0], bounds=([1e-12, 1e-9], [cap, 1e9])
        )
        sigma2_max[col], nu[col] = sol.x
        if not sol.success:
            warnings.append(
                f"{inb.strategies[col]}: variance curve fit did not converge cleanly"
            )
    return HeathCurve(
        strategies=list(inb.strategies),
        reference=inb.reference,
        sigma2_max=sigma2_max,
        nu=nu,
        mu_var=mu_var,
        points_n=probe_n,
        points_reduction=reduction,
        _evppi=ev,
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# replicate harness


@dataclass
class ReplicateSummary:
    values: np.ndarray
    mean: float
    sd: float
    lo: float
    hi: float

    @property
    def reps(self) -> int:
        return self.values.size


def estimate_with_uncertainty(
    estimator: Callable[[np.random.Generator], float],
    reps: int,
    rng: np.random.Generator,
    alpha: float = 0.05,
) -> ReplicateSummary:
    """Replicate an estimator over independent streams; percentile interval.

    The callable owns everything it wants held fixed (typically the PSA
    sample); only the generator it is handed varies between replicates.
    """
    if reps < 2:
        raise ValueError("need at least 2 replicates")
    streams = rng.spawn(reps)
    values = np.array([float(estimator(s)) for s in streams])
    lo, hi = np.percentile(values, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return ReplicateSummary(
        values=values,
        mean=float(values.mean()),
        sd=float(values.std(ddof=1)),
        lo=float(lo),
        hi=float(hi),
    )
