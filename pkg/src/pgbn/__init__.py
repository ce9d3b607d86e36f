"""Progressive WGAN-GP for multitrack binary piano-roll generation.

The generator and critic grow one layer per phase; per-track refiners end in
deterministic binary neurons trained with a sigmoid-adjusted
straight-through estimator.
"""

from pgbn.errors import ConfigurationError, FormatError, NumericAbort, ShapeError
from pgbn.layers import DbnState, anneal_slope, equalized_scale, minibatch_stddev, pixelnorm
from pgbn.networks import (
    LayerSpec,
    ModelDims,
    NetworkSet,
    PhaseConfig,
    build_networks,
    discriminator_forward,
    layer_table,
    generator_forward,
    grow,
    phase_schedule,
    refiner_forward,
)
from pgbn.tensor import Tensor, backward, grad, no_grad

__all__ = [
    "ConfigurationError",
    "DbnState",
    "FormatError",
    "LayerSpec",
    "ModelDims",
    "NetworkSet",
    "NumericAbort",
    "PhaseConfig",
    "ShapeError",
    "Tensor",
    "anneal_slope",
    "backward",
    "build_networks",
    "discriminator_forward",
    "equalized_scale",
    "layer_table",
    "generator_forward",
    "grad",
    "grow",
    "minibatch_stddev",
    "no_grad",
    "phase_schedule",
    "pixelnorm",
    "refiner_forward",
]

__version__ = "0.1.0"
