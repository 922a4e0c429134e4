"""Penalized additive spline regression for EVPPI and regression-based EVSI.

Each covariate gets a B-spline block (interior knots at quantiles), the
blocks are column-centred and constrained so only the intercept carries the
level, and a single second-order difference penalty weight is chosen by
generalized cross-validation. The fit exposes a per-covariate term
decomposition, which the sample-size rescaling estimators rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import LinAlgError, cho_factor, cho_solve, null_space

from voi.core import IncrementalNbTable, NetBenefitTable, PsaSet, incremental


@dataclass(frozen=True)
class BasisSpec:
    """Spline basis and penalty-search settings shared by all covariates.

    With ``pairwise`` set, every product of two distinct covariates gets its
    own spline block too. Conditional means of incremental net benefit tend
    to have strong product structure (rate times consequence), which a purely
    additive fit attenuates; the product blocks recover most of it at little
    cost. Leave it off where per-covariate term attribution matters.

    With ``tensor`` set, every pair of distinct covariates also gets a
    tensor-product block, projected orthogonal to the marginal blocks and
    ridge-penalized. A spline in the raw product only bends along level sets
    of x*y; the tensor block can follow a ridge along any curved direction,
    which matters when the conditional mean is a function of a composite such
    as x * exp(y).
    """

    degree: int = 3
    knots: int = 10
    n_lambda: int = 40
    lambda_min: float = 1e-8
    lambda_max: float = 1e4
    pairwise: bool = False
    tensor: bool = False

    def __post_init__(self):
        if self.degree not in (1, 2, 3):
            raise ValueError(f"degree must be 1, 2 or 3, got {self.degree}")
        if self.knots < 0:
            raise ValueError("knot count must be non-negative")
        if self.n_lambda < 1 or self.lambda_min <= 0 or self.lambda_max < self.lambda_min:
            raise ValueError("bad lambda grid")

    def grid(self) -> np.ndarray:
        if self.n_lambda == 1:
            return np.array([self.lambda_min])
        return np.geomspace(self.lambda_min, self.lambda_max, self.n_lambda)


@dataclass
class MetaModelFit:
    """A fitted additive spline regression.

    ``term_values`` holds each covariate's centred contribution (columns sum
    with ``intercept`` to ``fitted``), so the fit can be re-weighted term by
    term without refitting.
    """

    fitted: np.ndarray
    intercept: float
    term_values: np.ndarray
    covariate_names: list[str]
    dropped: list[str]
    lambda_: float
    edf: float
    gcv: float
    residual_var: float

    @property
    def n_terms(self) -> int:
        return self.term_values.shape[1]


def _bspline_design(x: np.ndarray, spec: BasisSpec, knots: int | None = None) -> np.ndarray:
    """Raw (uncentred) B-spline design matrix for one covariate."""
    lo, hi = float(x.min()), float(x.max())
    k = spec.knots if knots is None else knots
    q = np.quantile(x, np.linspace(0.0, 1.0, k + 2)[1:-1]) if k else np.array([])
    q = np.unique(q[(q > lo) & (q < hi)])
    d = spec.degree
    t = np.concatenate([[lo] * (d + 1), q, [hi] * (d + 1)])
    return BSpline.design_matrix(np.clip(x, lo, hi), t, d).toarray()


def _covariate_block(x: np.ndarray, spec: BasisSpec):
    """Centred, constrained B-spline block and its penalty for one covariate."""
    b = _bspline_design(x, spec)
    b -= b.mean(axis=0)
    m = b.shape[1]
    # remove the constant coefficient direction (it spans nothing after centring)
    z = null_space(np.ones((1, m)))
    bz = b @ z
    d2 = np.diff(np.eye(m), n=2, axis=0)
    dz = d2 @ z
    return bz, dz.T @ dz


def _tensor_block(xa: np.ndarray, xb: np.ndarray, marginal: np.ndarray, spec: BasisSpec):
    """Pure-interaction tensor block for a covariate pair, plus a ridge penalty.

    The row-wise product of two coarser marginal bases spans smooth functions
    of the pair; projecting out ``marginal`` (an orthonormal basis holding the
    intercept and both fitted marginal blocks) leaves only the interaction
    remainder. The ridge penalty is scaled to the block's gram trace so the
    shared penalty weight acts on a comparable footing.
    """
    k = min(spec.knots, 6)
    ba = _bspline_design(xa, spec, knots=k)
    bb = _bspline_design(xb, spec, knots=k)
    t = (ba[:, :, None] * bb[:, None, :]).reshape(xa.size, -1)
    t -= marginal @ (marginal.T @ t)
    norms = np.linalg.norm(t, axis=0)
    t = t[:, norms > 1e-8 * norms.max()]
    if t.shape[1] == 0:
        return t, np.empty((0, 0))
    pen = np.eye(t.shape[1]) * (float((t * t).sum()) / t.shape[1])
    return t, pen


def fit_metamodel(
    y: np.ndarray,
    x: np.ndarray,
    names: Sequence[str] | None = None,
    basis: BasisSpec | None = None,
) -> MetaModelFit:
    """Fit an additive penalized spline regression of ``y`` on the columns of ``x``.

    Zero-variance covariates are dropped (with a constant design the fit is
    just the mean). Exactly collinear covariates leave individual
    coefficients unidentified, but the penalty keeps the system solvable and
    the fitted values well defined; ``ValueError`` is raised only when every
    penalty weight on the grid yields a numerically singular system.
    """
    y = np.asarray(y, dtype=float).ravel()
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    s, j = x.shape
    if y.size != s:
        raise ValueError(f"{y.size} responses for {s} covariate rows")
    if s < 3:
        raise ValueError("need at least 3 rows to fit")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
        raise ValueError("non-finite values in regression inputs")
    if names is None:
        names = [f"x{i}" for i in range(j)]
    names = list(names)
    if len(names) != j:
        raise ValueError(f"{len(names)} names for {j} covariates")
    spec = basis or BasisSpec()

    cols = [x[:, idx] for idx in range(j)]
    if spec.pairwise and j > 1:
        live = [i for i in range(j) if cols[i].std() > 0.0]
        for a in range(len(live)):
            for b in range(a + 1, len(live)):
                ia, ib = live[a], live[b]
                cols.append(cols[ia] * cols[ib])
                names.append(f"{names[ia]}*{names[ib]}")

    keep, dropped, blocks, penalties = [], [], [], []
    block_of = {}
    for idx, col in enumerate(cols):
        if col.std() == 0.0:
            dropped.append(names[idx])
            continue
        bz, pz = _covariate_block(col, spec)
        if idx < j:
            block_of[idx] = len(blocks)
        keep.append(names[idx])
        blocks.append(bz)
        penalties.append(pz)

    if spec.tensor and len(block_of) > 1:
        ones = np.ones((s, 1))
        live = sorted(block_of)
        for a in range(len(live)):
            for b in range(a + 1, len(live)):
                ia, ib = live[a], live[b]
                q, _ = np.linalg.qr(
                    np.hstack([ones, blocks[block_of[ia]], blocks[block_of[ib]]])
                )
                tb, tp = _tensor_block(cols[ia], cols[ib], q, spec)
                if tb.shape[1] == 0:
                    continue
                keep.append(f"{names[ia]}:{names[ib]}")
                blocks.append(tb)
                penalties.append(tp)

    ybar = float(y.mean())
    if not blocks:
        fitted = np.full(s, ybar)
        resid = y - fitted
        return MetaModelFit(
            fitted=fitted,
            intercept=ybar,
            term_values=np.empty((s, 0)),
            covariate_names=[],
            dropped=dropped,
            lambda_=float("nan"),
            edf=1.0,
            gcv=float("nan"),
            residual_var=float(resid @ resid) / max(s - 1, 1),
        )

    widths = [b.shape[1] for b in blocks]
    xmat = np.hstack(blocks)
    p = xmat.shape[1]
    pen = np.zeros((p, p))
    off = 0
    for w, pz in zip(widths, penalties):
        pen[off : off + w, off : off + w] = pz
        off += w

    # centred blocks make the intercept orthogonal to everything: fit y - ybar
    yc = y - ybar
    c = xmat.T @ xmat
    rhs = xmat.T @ yc
    yss = float(yc @ yc)

    best = None
    for lam in spec.grid():
        try:
            chol = cho_factor(c + lam * pen, lower=True)
        except LinAlgError:
            continue
        beta = cho_solve(chol, rhs)
        # edf = tr(H) = tr((C + lam P)^-1 C) plus one for the intercept
        edf = 1.0 + float(np.trace(cho_solve(chol, c)))
        rss = yss - 2.0 * float(beta @ rhs) + float(beta @ (c @ beta))
        rss = max(rss, 0.0)
        if s - edf <= 0:
            continue
        gcv = s * rss / (s - edf) ** 2
        if best is None or gcv < best[0]:
            best = (gcv, lam, beta, edf, rss)
    if best is None:
        raise ValueError(
            "penalized fit singular at every lambda: covariates are collinear "
            "or the design is degenerate"
        )
    gcv, lam, beta, edf, rss = best

    terms = np.empty((s, len(blocks)))
    off = 0
    for i, (b, w) in enumerate(zip(blocks, widths)):
        terms[:, i] = b @ beta[off : off + w]
        off += w
    fitted = ybar + terms.sum(axis=1)
    return MetaModelFit(
        fitted=fitted,
        intercept=ybar,
        term_values=terms,
        covariate_names=keep,
        dropped=dropped,
        lambda_=float(lam),
        edf=float(edf),
        gcv=float(gcv),
        residual_var=rss / max(s - edf, 1.0),
    )


@dataclass
class EvppiResult:
    value: float
    mu: np.ndarray
    fits: list[MetaModelFit] = field(default_factory=list)
    reference: int = 0


def evppi_regression(
    nb: NetBenefitTable | IncrementalNbTable | np.ndarray,
    psa: PsaSet,
    params: Sequence[str],
    basis: BasisSpec | None = None,
) -> EvppiResult:
    """EVPPI for a parameter subset by regressing incremental net benefit on it.

    Each non-reference strategy's incremental net benefit is regressed on the
    named parameters; the row-wise best of the fitted conditional means
    (including the zero reference) minus the best current decision is the
    EVPPI estimate. ``mu`` keeps the fitted table, reference column zeroed.
    """
    params = list(params)
    if not params:
        raise ValueError("need at least one parameter name")
    inb = nb if isinstance(nb, IncrementalNbTable) else incremental(nb)
    vals = inb.values
    s, t = vals.shape
    if psa.n_samples != s:
        raise ValueError("PSA and net benefit tables have different row counts")
    x = psa.subset(params)
    mu = np.zeros((s, t))
    fits: list[MetaModelFit] = []
    for col in range(t):
        if col == inb.reference:
            continue
        fit = fit_metamodel(vals[:, col], x, names=params, basis=basis)
        mu[:, col] = fit.fitted
        fits.append(fit)
    value = float(mu.max(axis=1).mean() - mu.mean(axis=0).max())
    return EvppiResult(value=value, mu=mu, fits=fits, reference=inb.reference)
