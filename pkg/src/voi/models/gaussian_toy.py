"""Conjugate Gaussian two-arm toy model with closed-form EVPI and EVSI.

The incremental net benefit of the novel strategy is a single normal
parameter; a study observes it with iid normal noise. Every quantity of
interest has an exact expression, so this model doubles as the reference
oracle for the simulation-based estimators.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm

from voi.bayes import MhConfig
from voi.core import Dataset, DecisionModel, PsaSet, StudyDesign


def _psi(u: float) -> float:
    """Unit normal loss integral: phi(u) - u * Phi(-u)."""
    return float(norm.pdf(u) - u * norm.cdf(-u))


class GaussianToyModel(DecisionModel):
    """Two strategies; INB of the second is mu ~ Normal(mu0, sigma0^2).

    A study of size n draws y_i ~ Normal(mu, sigma^2). The posterior is
    normal, so posterior sampling is exact, and

        EVSI(n) = sigma_m * psi(|mu0| / sigma_m),
        sigma_m^2 = sigma0^2 * n / (n + n0),    n0 = sigma^2 / sigma0^2.

    EVPI is the n -> infinity limit, sigma0 * psi(|mu0|/sigma0).
    """

    name = "gaussian-toy"
    strategies = ["standard", "novel"]
    param_names = ["inb_mean"]
    focal_params = ["inb_mean"]
    default_wtp = 1.0  # net benefit is already monetary; wtp is unused

    def __init__(self, mu0: float = 0.0, sigma0: float = 1.0, sigma: float = 2.0):
        if sigma0 <= 0 or sigma <= 0:
            raise ValueError("sigma0 and sigma must be positive")
        self.mu0 = float(mu0)
        self.sigma0 = float(sigma0)
        self.sigma = float(sigma)

    # closed forms -----------------------------------------------------

    @property
    def analytic_n0(self) -> float:
        return self.sigma**2 / self.sigma0**2

    def preposterior_sd(self, n: int) -> float:
        if n == 0:
            return 0.0
        return self.sigma0 * math.sqrt(n / (n + self.analytic_n0))

    def analytic_evsi(self, n: int) -> float:
        sm = self.preposterior_sd(n)
        if sm == 0.0:
            return 0.0
        return sm * _psi(abs(self.mu0) / sm)

    def analytic_evpi(self) -> float:
        return self.sigma0 * _psi(abs(self.mu0) / self.sigma0)

    # model contract ---------------------------------------------------

    def sample_prior(self, n: int, rng: np.random.Generator) -> PsaSet:
        draws = rng.normal(self.mu0, self.sigma0, size=(n, 1))
        return PsaSet(names=list(self.param_names), values=draws)

    def net_benefit(self, theta: np.ndarray, wtp: float) -> np.ndarray:
        return np.array([0.0, float(theta[0])])

    def net_benefit_batch(self, thetas: np.ndarray, wtp: float) -> np.ndarray:
        mu = np.asarray(thetas, dtype=float)[:, 0]
        return np.column_stack([np.zeros_like(mu), mu])

    def sample_data(
        self, phi: np.ndarray, design: StudyDesign, rng: np.random.Generator
    ) -> Dataset:
        y = float(phi[0]) + self.sigma * rng.standard_normal(design.n)
        return Dataset(data={"y": y}, design=design, origin_phi=np.atleast_1d(phi).copy())

    def _posterior_params(self, dataset: Dataset) -> tuple[float, float]:
        y = dataset["y"]
        n = y.size
        prec = 1.0 / self.sigma0**2 + n / self.sigma**2
        mean = (self.mu0 / self.sigma0**2 + y.sum() / self.sigma**2) / prec
        return mean, 1.0 / prec

    def posterior_sample(
        self,
        dataset: Dataset,
        n: int,
        rng: np.random.Generator,
        mh: MhConfig | None = None,
    ) -> PsaSet:
        mean, var = self._posterior_params(dataset)
        draws = rng.normal(mean, math.sqrt(var), size=(n, 1))
        return PsaSet(names=list(self.param_names), values=draws)

    def log_likelihood(self, dataset: Dataset, phi: np.ndarray) -> float:
        y = dataset["y"]
        mu = float(np.atleast_1d(phi)[0])
        return float(-0.5 * np.sum((y - mu) ** 2) / self.sigma**2)

    def log_likelihood_batch(self, dataset: Dataset, phis: np.ndarray) -> np.ndarray:
        y = dataset["y"]
        mu = np.asarray(phis, dtype=float).reshape(-1)
        sy, sy2, n = y.sum(), float(y @ y), y.size
        return -(sy2 - 2.0 * mu * sy + n * mu**2) / (2.0 * self.sigma**2)

    def log_likelihood_many(self, datasets, phis: np.ndarray) -> np.ndarray:
        mu = np.asarray(phis, dtype=float).reshape(-1)
        sy = np.array([ds["y"].sum() for ds in datasets])
        sy2 = np.array([float(ds["y"] @ ds["y"]) for ds in datasets])
        n = np.array([ds["y"].size for ds in datasets], dtype=float)
        return -(sy2[:, None] - 2.0 * np.outer(sy, mu) + np.outer(n, mu**2)) / (
            2.0 * self.sigma**2
        )

    def summarize(self, dataset: Dataset) -> np.ndarray:
        y = dataset["y"]
        return np.array([y.mean() if y.size else 0.0])

    summary_names = ["sample_mean"]

    def sample_summaries_batch(
        self, phis: np.ndarray, design: StudyDesign, rng: np.random.Generator
    ) -> np.ndarray:
        mu = np.asarray(phis, dtype=float).reshape(-1)
        if design.n == 0:
            return np.zeros((mu.size, 1))
        # the sample mean of n draws is exactly Normal(mu, sigma^2/n)
        se = self.sigma / math.sqrt(design.n)
        return (mu + se * rng.standard_normal(mu.size))[:, None]
