"""Core containers, the decision-model contract, EVPI and nested Monte Carlo EVSI.

The central convention: every value-of-information quantity is computed on
incremental net benefit against a reference strategy (column 0 by default),
with the reference column kept in place as exact zeros. Taking a row maximum
over that table is then ``max(0, increments)``, which makes estimates
invariant to whether a model reports absolute or incremental net benefit.
"""

from __future__ import annotations

import abc
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from voi.bayes import MhConfig


class ModelContractError(ValueError):
    """A decision model returned something outside its declared contract."""


@dataclass
class PsaSet:
    """A matrix of parameter draws, one row per simulation, one column per parameter."""

    names: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError(f"PsaSet values must be 2-d, got shape {self.values.shape}")
        if len(self.names) != self.values.shape[1]:
            raise ValueError(
                f"{len(self.names)} names for {self.values.shape[1]} columns"
            )
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate parameter names")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def subset(self, names: Sequence[str]) -> np.ndarray:
        idx = [self.names.index(n) for n in names]
        return self.values[:, idx]


@dataclass
class NetBenefitTable:
    """Net benefit per PSA draw (rows) and strategy (columns)."""

    strategies: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.strategies):
            raise ValueError("net benefit table shape does not match strategy names")


@dataclass
class IncrementalNbTable:
    """Incremental net benefit against a reference strategy.

    The reference column is retained as exact zeros, so row maxima already
    include the "keep the reference" option.
    """

    strategies: list[str]
    reference: int
    values: np.ndarray


def _values(table) -> np.ndarray:
    return np.asarray(getattr(table, "values", table), dtype=float)


@dataclass(frozen=True)
class StudyDesign:
    """Description of a proposed data-collection exercise.

    ``n`` is the headline per-arm (or per-group) sample size; anything else a
    model needs lives in ``extra``.
    """

    n: int
    label: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 0 or self.n != int(self.n):
            raise ValueError(f"design size must be a non-negative integer, got {self.n}")


@dataclass
class Dataset:
    """One simulated realisation of a study.

    ``origin_phi`` records the focal-parameter draw the data were generated
    from, when known. Because (phi, X) is a joint draw from the prior
    predictive, phi is itself a draw from the posterior given X, so samplers
    may use it as a warm start without biasing stationarity.
    """

    data: dict[str, Any]
    design: StudyDesign
    origin_phi: np.ndarray | None = None

    def __getitem__(self, key: str):
        return self.data[key]


class DecisionModel(abc.ABC):
    """Contract a decision-analytic model must satisfy for VoI computation.

    Required: prior sampling, net benefit evaluation, data simulation given
    the focal parameters, posterior sampling given a dataset, a pointwise
    likelihood, and a low-dimensional dataset summary. The ``*_batch`` hooks
    have loop-based defaults; models override them when a vectorised path is
    worth having.
    """

    name: str = "model"
    strategies: list[str] = ["reference", "alternative"]
    param_names: list[str] = []
    focal_params: list[str] = []
    default_wtp: float = 0.0

    @property
    def n_strategies(self) -> int:
        return len(self.strategies)

    @abc.abstractmethod
    def sample_prior(self, n: int, rng: np.random.Generator) -> PsaSet:
        """Draw ``n`` joint parameter vectors from the prior."""

    @abc.abstractmethod
    def net_benefit(self, theta: np.ndarray, wtp: float) -> np.ndarray:
        """Net benefit of each strategy for one parameter vector."""

    @abc.abstractmethod
    def sample_data(
        self, phi: np.ndarray, design: StudyDesign, rng: np.random.Generator
    ) -> Dataset:
        """Simulate one study outcome given focal-parameter values.

        Must depend on the full parameter vector only through the focal
        block, so datasets can be attached to any draw sharing that block.
        """

    @abc.abstractmethod
    def posterior_sample(
        self,
        dataset: Dataset,
        n: int,
        rng: np.random.Generator,
        mh: MhConfig | None = None,
    ) -> PsaSet:
        """Draw ``n`` parameter vectors from the posterior given ``dataset``.

        With an empty design (n=0) this must reduce to prior sampling.
        ``mh`` overrides the model's own sampler settings where one is used.
        """

    @abc.abstractmethod
    def log_likelihood(self, dataset: Dataset, phi: np.ndarray) -> float:
        """Log p(dataset | phi) up to a phi-independent constant."""

    @abc.abstractmethod
    def summarize(self, dataset: Dataset) -> np.ndarray:
        """Low-dimensional summary vector of a dataset, fixed length per design."""

    # ------------------------------------------------------------------
    # batch hooks: defaults loop over the scalar methods

    def net_benefit_batch(self, thetas: np.ndarray, wtp: float) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        return np.array([self.net_benefit(row, wtp) for row in thetas])

    def log_likelihood_batch(self, dataset: Dataset, phis: np.ndarray) -> np.ndarray:
        phis = np.asarray(phis, dtype=float)
        return np.array([self.log_likelihood(dataset, row) for row in phis])

    def log_likelihood_many(
        self, datasets: Sequence[Dataset], phis: np.ndarray
    ) -> np.ndarray:
        """Matrix of log likelihoods, datasets down the rows, phi draws across."""
        return np.vstack([self.log_likelihood_batch(ds, phis) for ds in datasets])

    def sample_summaries_batch(
        self, phis: np.ndarray, design: StudyDesign, rng: np.random.Generator
    ) -> np.ndarray:
        out = []
        for row in np.asarray(phis, dtype=float):
            out.append(self.summarize(self.sample_data(row, design, rng)))
        return np.array(out)

    def make_design(self, n: int) -> StudyDesign:
        return StudyDesign(n=n)

    def phi_index(self) -> list[int]:
        return [self.param_names.index(p) for p in self.focal_params]


def compute_nb_table(model: DecisionModel, psa: PsaSet, wtp: float) -> NetBenefitTable:
    """Evaluate the model's net benefit on every PSA draw."""
    nb = np.asarray(model.net_benefit_batch(psa.values, wtp), dtype=float)
    if nb.shape != (psa.n_samples, model.n_strategies):
        raise ModelContractError(
            f"net benefit shape {nb.shape}, expected {(psa.n_samples, model.n_strategies)}"
        )
    if not np.all(np.isfinite(nb)):
        raise ModelContractError("net benefit contains non-finite values")
    return NetBenefitTable(strategies=list(model.strategies), values=nb)


def incremental(nb: NetBenefitTable | np.ndarray, reference: int = 0) -> IncrementalNbTable:
    """Subtract the reference strategy's column, keeping it in place as zeros."""
    vals = _values(nb)
    if not 0 <= reference < vals.shape[1]:
        raise ValueError(f"reference {reference} out of range for {vals.shape[1]} strategies")
    inb = vals - vals[:, [reference]]
    strategies = list(getattr(nb, "strategies", [f"s{i}" for i in range(vals.shape[1])]))
    return IncrementalNbTable(strategies=strategies, reference=reference, values=inb)


def evpi(nb: NetBenefitTable | IncrementalNbTable | np.ndarray) -> float:
    """Expected value of perfect information: E[max_t NB] - max_t E[NB]."""
    vals = _values(nb)
    if vals.ndim != 2 or vals.shape[0] < 1:
        raise ValueError("need a 2-d table with at least one row")
    return float(vals.max(axis=1).mean() - vals.mean(axis=0).max())


def enbs(evsi_per_person: float, population: float, study_cost: float) -> float:
    """Expected net benefit of sampling for a target population."""
    return evsi_per_person * population - study_cost


@dataclass
class NestedMcResult:
    evsi: float
    se: float
    outer_values: np.ndarray
    current_best: float
    warnings: list[str] = field(default_factory=list)


def evsi_nested_mc(
    model: DecisionModel,
    design: StudyDesign,
    wtp: float,
    s_outer: int,
    r_inner: int,
    rng: np.random.Generator,
    mh: MhConfig | None = None,
    threads: int = 1,
) -> NestedMcResult:
    """Two-level Monte Carlo EVSI.

    Outer loop: draw (phi, theta) from the prior, simulate a dataset from
    phi. Inner loop: draw from the posterior given that dataset, average
    incremental net benefit per strategy, take the best. EVSI is the mean of
    those best values minus the value of the current best decision, both
    evaluated on the same outer prior draws.

    Iteration ``s`` uses its own generator spawned from ``rng``, so results
    are bit-identical for any ``threads`` value.
    """
    if s_outer < 2 or r_inner < 1:
        raise ValueError("need s_outer >= 2 and r_inner >= 1")
    psa = model.sample_prior(s_outer, rng)
    nb = compute_nb_table(model, psa, wtp)
    inb = incremental(nb).values
    col_means = inb.mean(axis=0)
    t_star = int(col_means.argmax())
    current_best = float(col_means[t_star])

    if design.n == 0:
        # no data, no value: the nested estimate of zero carries only
        # positive max-of-means bias, so short-circuit to the exact answer
        return NestedMcResult(
            evsi=0.0,
            se=0.0,
            outer_values=inb[:, t_star].copy(),
            current_best=current_best,
        )

    phi_idx = model.phi_index()
    phis = psa.values[:, phi_idx]
    streams = rng.spawn(s_outer)
    outer = np.empty(s_outer)
    warnings: list[str] = []

    def one(s: int) -> float:
        sub = streams[s]
        ds = model.sample_data(phis[s], design, sub)
        post = model.posterior_sample(ds, r_inner, sub, mh=mh)
        pnb = np.asarray(model.net_benefit_batch(post.values, wtp), dtype=float)
        if pnb.shape != (r_inner, model.n_strategies):
            raise ModelContractError(
                f"posterior net benefit shape {pnb.shape} at outer draw {s}"
            )
        pinb = pnb - pnb[:, [0]]
        return float(pinb.mean(axis=0).max())

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for s, val in enumerate(pool.map(one, range(s_outer))):
                outer[s] = val
    else:
        for s in range(s_outer):
            outer[s] = one(s)

    # paired difference against the chosen-arm INB of the same outer draws
    g = outer - inb[:, t_star]
    evsi = float(g.mean())
    se = float(g.std(ddof=1) / math.sqrt(s_outer))
    if evsi < 0:
        warnings.append(
            f"nested MC estimate {evsi:.4g} is negative; within noise this "
            "means EVSI is near zero for this design"
        )
    return NestedMcResult(
        evsi=evsi, se=se, outer_values=outer, current_best=current_best, warnings=warnings
    )
