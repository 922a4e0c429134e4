"""Bundled decision models."""

from typing import Callable

from voi.core import DecisionModel
from voi.models.chemotherapy import ChemotherapyModel
from voi.models.chronic_pain import ChronicPainModel
from voi.models.crc import CrcScreeningModel
from voi.models.gaussian_toy import GaussianToyModel

_REGISTRY: dict[str, Callable[..., DecisionModel]] = {}


def register(name: str, factory: Callable[..., DecisionModel]) -> None:
    _REGISTRY[name] = factory


def get_model(name: str, **kwargs) -> DecisionModel:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise KeyError(f"unknown model {name!r}; available: {known}") from None
    return factory(**kwargs)


def list_models() -> list[str]:
    return sorted(_REGISTRY)


register("gaussian-toy", GaussianToyModel)
register("chemotherapy", ChemotherapyModel)
register("chronic-pain", ChronicPainModel)
register("crc-screening", CrcScreeningModel)
