"""Piecewise-exponential survival modeling over partially pooled cohort
lattices, with an ordinal discharge-placement submodel and mean-field
variational inference."""

from .errors import DataError, NumericalError
from .hazard import DEFAULT_BREAKPOINTS
from .inference import (ArrayDataset, MeanFieldPosterior, ParamBlock,
                        TrainConfig, TrainResult, train)
from .lattice import LatticeDecomposition, LatticeSpec
from .model import (DecompositionConfig, LatticeSurvivalModel, ModelConfig,
                    load_checkpoint, save_checkpoint)
from .synth import GeneratorSpec, generate, random_truth

__version__ = "0.1.0"

__all__ = [
    "ArrayDataset",
    "DataError",
    "DecompositionConfig",
    "DEFAULT_BREAKPOINTS",
    "GeneratorSpec",
    "LatticeDecomposition",
    "LatticeSpec",
    "LatticeSurvivalModel",
    "MeanFieldPosterior",
    "ModelConfig",
    "NumericalError",
    "ParamBlock",
    "TrainConfig",
    "TrainResult",
    "generate",
    "load_checkpoint",
    "random_truth",
    "save_checkpoint",
    "train",
    "__version__",
]
