"""Value-of-information analysis for probabilistic decision models.

Computes EVPI, EVPPI and EVSI for simulation-based decision models, with a
nested Monte Carlo reference estimator and four fast regression- or
reweighting-based EVSI approximations.
"""

from voi.core import (
    Dataset,
    DecisionModel,
    IncrementalNbTable,
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
from voi.metamodel import BasisSpec, MetaModelFit, evppi_regression, fit_metamodel
from voi.estimators import (
    EvsiEstimate,
    HeathCurve,
    JalalFit,
    N0Estimate,
    default_basis,
    estimate_n0_nested,
    estimate_n0_summary,
    estimate_with_uncertainty,
    evsi_heath,
    evsi_jalal,
    evsi_menzies,
    evsi_strong,
    heath_preposterior_variance,
    heath_variance_across_n,
    jalal_fit,
)

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "Dataset",
    "DecisionModel",
    "EvsiEstimate",
    "HeathCurve",
    "IncrementalNbTable",
    "JalalFit",
    "MetaModelFit",
    "ModelContractError",
    "N0Estimate",
    "NetBenefitTable",
    "PsaSet",
    "StudyDesign",
    "compute_nb_table",
    "default_basis",
    "enbs",
    "estimate_n0_nested",
    "estimate_n0_summary",
    "estimate_with_uncertainty",
    "evpi",
    "evppi_regression",
    "evsi_heath",
    "evsi_jalal",
    "evsi_menzies",
    "evsi_nested_mc",
    "evsi_strong",
    "fit_metamodel",
    "incremental",
]
