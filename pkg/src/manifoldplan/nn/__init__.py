from manifoldplan.nn.layers import (
    MODE_DETERMINISTIC,
    MODE_STOCHASTIC,
    MODE_TRAIN,
    LayerSpec,
    Network,
)
from manifoldplan.nn.models import Discriminator, Generator

__all__ = [
    "Discriminator",
    "Generator",
    "LayerSpec",
    "Network",
    "MODE_DETERMINISTIC",
    "MODE_STOCHASTIC",
    "MODE_TRAIN",
]
