"""steexlab: semantic-steering counterfactual explanations for image classifiers.

A desk-scale, end-to-end workbench: decompose a query image into a semantic
layout plus per-region style codes, then optimize the style codes under the
fixed layout until a frozen classifier flips its decision, optionally
restricting the search to user-chosen semantic regions.
"""

from .errors import (
    ConfigError,
    CounterClassError,
    DatasetError,
    InvalidMaskError,
    NumericalFailureError,
    RegistryError,
    ShapeError,
    SteexlabError,
    TrainingDivergedError,
    UnsupportedModelError,
)
from .profiles import SEMSHAPES_64, DatasetProfile, get_profile
from .types import (
    AUTO_FLIP,
    CounterfactualRequest,
    CounterfactualResult,
    ImageTensor,
    OptimizerConfig,
    RegionTargetSpec,
    SemanticMask,
    StyleCodeSet,
    resolve_counter_class,
)

__version__ = "0.1.0"

__all__ = [
    "AUTO_FLIP",
    "ConfigError",
    "CounterClassError",
    "CounterfactualRequest",
    "CounterfactualResult",
    "DatasetError",
    "DatasetProfile",
    "ImageTensor",
    "InvalidMaskError",
    "NumericalFailureError",
    "OptimizerConfig",
    "RegionTargetSpec",
    "RegistryError",
    "SEMSHAPES_64",
    "SemanticMask",
    "ShapeError",
    "SteexlabError",
    "StyleCodeSet",
    "TrainingDivergedError",
    "UnsupportedModelError",
    "get_profile",
    "resolve_counter_class",
]
