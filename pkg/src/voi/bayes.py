"""Bayesian updating machinery: conjugate updates and adaptive random-walk MH.

Exact conjugate updates are used where the prior/likelihood pair allows it;
everything else goes through :func:`mh_sample`, a random-walk Metropolis
sampler with per-dimension Gaussian proposals and scale adaptation during
burn-in. Bounded parameters are expected to be transformed (logit/log) by the
caller, with the Jacobian folded into the log target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln


class InfeasibleMomentsError(ValueError):
    """Requested mean/sd pair cannot be represented by a beta distribution."""


@dataclass(frozen=True)
class PriorSpec:
    """A univariate prior distribution.

    Families and their parameterisations:

    - ``beta(alpha, beta)``
    - ``normal(mean, precision)`` -- precision, not sd (JAGS convention)
    - ``lognormal(meanlog, sdlog)``
    - ``gamma(shape, rate)``
    - ``uniform(lo, hi)``
    """

    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        p = self.params
        if self.family == "beta":
            if len(p) != 2 or p[0] <= 0 or p[1] <= 0:
                raise ValueError(f"beta requires alpha, beta > 0, got {p}")
        elif self.family == "normal":
            if len(p) != 2 or p[1] <= 0:
                raise ValueError(f"normal requires (mean, precision>0), got {p}")
        elif self.family == "lognormal":
            if len(p) != 2 or p[1] <= 0:
                raise ValueError(f"lognormal requires (meanlog, sdlog>0), got {p}")
        elif self.family == "gamma":
            if len(p) != 2 or p[0] <= 0 or p[1] <= 0:
                raise ValueError(f"gamma requires shape, rate > 0, got {p}")
        elif self.family == "uniform":
            if len(p) != 2 or p[0] >= p[1]:
                raise ValueError(f"uniform requires lo < hi, got {p}")
        else:
            raise ValueError(f"unknown prior family {self.family!r}")

    @classmethod
    def beta(cls, alpha: float, beta: float) -> "PriorSpec":
        return cls("beta", (float(alpha), float(beta)))

    @classmethod
    def normal(cls, mean: float, precision: float) -> "PriorSpec":
        return cls("normal", (float(mean), float(precision)))

    @classmethod
    def lognormal(cls, meanlog: float, sdlog: float) -> "PriorSpec":
        return cls("lognormal", (float(meanlog), float(sdlog)))

    @classmethod
    def gamma(cls, shape: float, rate: float) -> "PriorSpec":
        return cls("gamma", (float(shape), float(rate)))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "PriorSpec":
        return cls("uniform", (float(lo), float(hi)))

    def sample(self, rng: np.random.Generator, size=None):
        a, b = self.params
        if self.family == "beta":
            return rng.beta(a, b, size)
        if self.family == "normal":
            return rng.normal(a, 1.0 / math.sqrt(b), size)
        if self.family == "lognormal":
            return rng.lognormal(a, b, size)
        if self.family == "gamma":
            return rng.gamma(a, 1.0 / b, size)
        return rng.uniform(a, b, size)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.params
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.family == "beta":
                out = np.where(
                    (x > 0) & (x < 1),
                    (a - 1) * np.log(x) + (b - 1) * np.log1p(-x)
                    - (gammaln(a) + gammaln(b) - gammaln(a + b)),
                    -np.inf,
                )
            elif self.family == "normal":
                out = 0.5 * math.log(b / (2 * math.pi)) - 0.5 * b * (x - a) ** 2
            elif self.family == "lognormal":
                out = np.where(
                    x > 0,
                    -np.log(x) - math.log(b) - 0.5 * math.log(2 * math.pi)
                    - 0.5 * ((np.log(x) - a) / b) ** 2,
                    -np.inf,
                )
            elif self.family == "gamma":
                out = np.where(
                    x > 0,
                    a * math.log(b) - gammaln(a) + (a - 1) * np.log(x) - b * x,
                    -np.inf,
                )
            else:
                out = np.where((x >= a) & (x <= b), -math.log(b - a), -np.inf)
        return out if out.ndim else float(out)

    def mean(self) -> float:
        a, b = self.params
        if self.family == "beta":
            return a / (a + b)
        if self.family == "normal":
            return a
        if self.family == "lognormal":
            return math.exp(a + 0.5 * b * b)
        if self.family == "gamma":
            return a / b
        return 0.5 * (a + b)

    def var(self) -> float:
        a, b = self.params
        if self.family == "beta":
            return a * b / ((a + b) ** 2 * (a + b + 1))
        if self.family == "normal":
            return 1.0 / b
        if self.family == "lognormal":
            return (math.exp(b * b) - 1) * math.exp(2 * a + b * b)
        if self.family == "gamma":
            return a / b**2
        return (b - a) ** 2 / 12.0


def conjugate_beta_binomial(prior: PriorSpec, successes: int, trials: int) -> PriorSpec:
    """Exact beta posterior for binomial data."""
    if prior.family != "beta":
        raise ValueError("conjugate_beta_binomial needs a beta prior")
    if successes < 0 or trials < 0 or successes > trials:
        raise ValueError(f"invalid counts: {successes}/{trials}")
    a, b = prior.params
    return PriorSpec.beta(a + successes, b + trials - successes)


def moment_to_beta(mean: float, sd: float) -> PriorSpec:
    """Beta distribution matching a given mean and standard deviation.

    Raises :class:`InfeasibleMomentsError` when ``sd**2 >= mean*(1-mean)``,
    which no beta distribution can achieve.
    """
    if not 0.0 < mean < 1.0:
        raise InfeasibleMomentsError(f"mean must be in (0,1), got {mean}")
    if sd <= 0:
        raise InfeasibleMomentsError(f"sd must be positive, got {sd}")
    if sd * sd >= mean * (1.0 - mean):
        raise InfeasibleMomentsError(
            f"sd={sd} infeasible for mean={mean}: "
            f"sd^2={sd*sd:.6g} >= mean*(1-mean)={mean*(1-mean):.6g}"
        )
    nu = mean * (1.0 - mean) / (sd * sd) - 1.0
    return PriorSpec.beta(mean * nu, (1.0 - mean) * nu)


@dataclass
class MhConfig:
    """Settings for the random-walk Metropolis sampler."""

    steps: int
    burn_in: int
    thinning: int = 1
    proposal_sd: float | Sequence[float] = 1.0
    target_accept: float | None = None  # None -> 0.44 if D==1 else 0.234
    seed: int | None = None

    def __post_init__(self):
        if self.burn_in < 0 or self.steps <= self.burn_in:
            raise ValueError("need steps > burn_in >= 0")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.target_accept is not None and not 0.0 < self.target_accept < 1.0:
            raise ValueError("target acceptance must be in (0,1)")

    @classmethod
    def for_draws(cls, draws: int, burn_in: int = 1000, thinning: int = 1, **kw) -> "MhConfig":
        """Config sized so the returned chain has exactly ``draws`` rows."""
        return cls(steps=burn_in + draws * thinning, burn_in=burn_in, thinning=thinning, **kw)


@dataclass
class MhDiagnostics:
    acceptance_rate: float
    ess: np.ndarray
    proposal_sd: np.ndarray
    warnings: list[str] = field(default_factory=list)


def effective_sample_size(x: np.ndarray) -> float:
    """ESS of a single chain via Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = float(np.dot(x, x)) / n
    if var <= 0:
        return float(n)
    # FFT autocovariance
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n].real / n
    rho = acov / var
    # sum consecutive pairs until a pair sum goes non-positive
    tau = 1.0
    for k in range(1, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(min(n, n / tau))


def mh_sample(
    log_target: Callable[[np.ndarray], float],
    init: np.ndarray,
    config: MhConfig,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, MhDiagnostics]:
    """Adaptive random-walk Metropolis with componentwise Gaussian proposals.

    A single accept/reject step per iteration with per-dimension proposal
    scales; a global scale factor is adapted during burn-in toward the
    target acceptance rate (0.234 for D>1, 0.44 for D=1) and frozen after.

    Returns the post burn-in chain, thinned, as an (R, D) array, plus
    diagnostics (post burn-in acceptance rate, per-dimension ESS, warnings).
    """
    if rng is None:
        if config.seed is None:
            raise ValueError("mh_sample needs an rng or a config.seed")
        rng = np.random.default_rng(config.seed)
    elif config.seed is not None:
        rng = np.random.default_rng(config.seed)

    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    d = x.size
    lp = float(log_target(x))
    if not math.isfinite(lp):
        raise ValueError(f"log target not finite at init {x!r}")

    sd = np.broadcast_to(np.asarray(config.proposal_sd, dtype=float), (d,)).copy()
    if np.any(sd <= 0):
        raise ValueError("proposal sds must be positive")
    target = config.target_accept
    if target is None:
        target = 0.44 if d == 1 else 0.234
    log_scale = 0.0

    n_keep = (config.steps - config.burn_in) // config.thinning
    chain = np.empty((n_keep, d))
    kept = 0
    accepted_post = 0
    post_steps = 0

    # draw all proposal noise up front: one rng pass keeps runs reproducible
    noise = rng.standard_normal((config.steps, d))
    logu = np.log(rng.random(config.steps))

    for t in range(config.steps):
        prop = x + math.exp(log_scale) * sd * noise[t]
        lp_prop = float(log_target(prop))
        log_alpha = lp_prop - lp
        accept = log_alpha >= 0.0 or logu[t] < log_alpha
        if accept:
            x = prop
            lp = lp_prop
        if t < config.burn_in:
            # Robbins-Monro on the log proposal scale
            alpha = 1.0 if log_alpha >= 0 else math.exp(max(log_alpha, -50.0))
            log_scale += (alpha - target) / math.sqrt(t + 10.0)
        else:
            post_steps += 1
            accepted_post += accept
            k = t - config.burn_in
            if k % config.thinning == 0 and kept < n_keep:
                chain[kept] = x
                kept += 1

    rate = accepted_post / max(post_steps, 1)
    ess = np.array([effective_sample_size(chain[:, j]) for j in range(d)])
    warns = []
    if not 0.05 <= rate <= 0.95:
        warns.append(
            f"mh acceptance rate {rate:.3f} outside [0.05, 0.95] after adaptation"
        )
    diag = MhDiagnostics(
        acceptance_rate=rate,
        ess=ess,
        proposal_sd=math.exp(log_scale) * sd,
        warnings=warns,
    )
    return chain, diag
