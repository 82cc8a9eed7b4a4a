"""Core domain value types.

All types here are immutable after construction (arrays are made read-only)
and may be shared freely across threads.  Semantic classes are 1-based.

Serialization contract: images and masks travel as 8-bit PNG files (see
``steexlab.imaging``); everything else round-trips through plain JSON with
base-ten decimal reals.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import CounterClassError, InvalidMaskError, ShapeError, UnsupportedModelError

#: Sentinel accepted for CounterfactualRequest.counter_class meaning
#: "flip the model's current prediction" (binary models only).
AUTO_FLIP = None


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ImageTensor:
    """An H x W x 3 image with float pixels normalized to [-1, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ShapeError(f"image must be (H, W, 3), got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite values")
        if px.min() < -1.0 - 1e-6 or px.max() > 1.0 + 1e-6:
            raise ValueError("image values must lie in [-1, 1]")
        object.__setattr__(self, "pixels", _freeze(np.clip(px, -1.0, 1.0)))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class SemanticMask:
    """Per-pixel semantic labels, each in {1..num_classes}."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ShapeError(f"mask must be (H, W), got {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            lab = lab.astype(np.int64)
        if lab.min() < 1 or lab.max() > self.num_classes:
            raise InvalidMaskError(
                f"mask labels must lie in 1..{self.num_classes}, "
                f"got range [{lab.min()}, {lab.max()}]"
            )
        object.__setattr__(self, "labels", _freeze(lab.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def present_classes(self) -> frozenset[int]:
        return frozenset(int(c) for c in np.unique(self.labels))

    def region(self, class_index: int) -> np.ndarray:
        """Boolean pixel membership map for one class."""
        return self.labels == class_index


@dataclass(frozen=True)
class StyleCodeSet:
    """The latent z: one D-dimensional style code per semantic class.

    Codes of classes absent from ``present_classes`` are exactly the zero
    vector; they carry no appearance and are never optimized.
    """

    codes: np.ndarray
    present_classes: frozenset[int]

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.float32)
        if codes.ndim != 2:
            raise ShapeError(f"codes must be (N, D), got {codes.shape}")
        present = frozenset(int(c) for c in self.present_classes)
        n = codes.shape[0]
        if any(c < 1 or c > n for c in present):
            raise InvalidMaskError(f"present_classes {sorted(present)} outside 1..{n}")
        absent = sorted(set(range(1, n + 1)) - present)
        for c in absent:
            if np.any(codes[c - 1] != 0.0):
                raise ValueError(f"code for absent class {c} must be the zero vector")
        object.__setattr__(self, "codes", _freeze(codes))
        object.__setattr__(self, "present_classes", present)

    @property
    def num_classes(self) -> int:
        return self.codes.shape[0]

    @property
    def code_dim(self) -> int:
        return self.codes.shape[1]

    def presence_row_mask(self) -> np.ndarray:
        out = np.zeros(self.num_classes, dtype=bool)
        for c in self.present_classes:
            out[c - 1] = True
        return out

    def with_codes(self, codes: np.ndarray) -> "StyleCodeSet":
        return StyleCodeSet(codes=codes, present_classes=self.present_classes)

    def add_delta(self, delta: np.ndarray) -> "StyleCodeSet":
        """Return z + delta with delta masked to present classes.

        Masking keeps the zero-code convention for absent classes no matter
        what the caller passes.
        """
        delta = np.asarray(delta, dtype=np.float32)
        if delta.shape != self.codes.shape:
            raise ShapeError(f"delta shape {delta.shape} != codes shape {self.codes.shape}")
        masked = delta * self.presence_row_mask()[:, None]
        return self.with_codes(self.codes + masked)

    def delta_norms(self, other: "StyleCodeSet") -> np.ndarray:
        """Per-class L2 displacement ||z_c - other_c||, shape (N,)."""
        if other.codes.shape != self.codes.shape:
            raise ShapeError("code sets have different shapes")
        return np.linalg.norm(self.codes - other.codes, axis=1)

    def to_jsonable(self) -> dict:
        return {
            "codes": [[float(v) for v in row] for row in self.codes],
            "present_classes": sorted(self.present_classes),
        }

    @staticmethod
    def from_jsonable(data: dict) -> "StyleCodeSet":
        return StyleCodeSet(
            codes=np.asarray(data["codes"], dtype=np.float32),
            present_classes=frozenset(int(c) for c in data["present_classes"]),
        )


@dataclass(frozen=True)
class RegionTargetSpec:
    """The subset C of semantic classes the optimization may modify.

    An empty set is legal and means "no optimization freedom at all".
    """

    targeted_classes: frozenset[int]

    def __post_init__(self):
        object.__setattr__(
            self, "targeted_classes", frozenset(int(c) for c in self.targeted_classes)
        )
        if any(c < 1 for c in self.targeted_classes):
            raise ValueError("class indices are 1-based")

    @staticmethod
    def all_classes(num_classes: int) -> "RegionTargetSpec":
        return RegionTargetSpec(frozenset(range(1, num_classes + 1)))

    @staticmethod
    def none() -> "RegionTargetSpec":
        return RegionTargetSpec(frozenset())

    @staticmethod
    def of(*classes: int) -> "RegionTargetSpec":
        return RegionTargetSpec(frozenset(classes))

    def validate_for(self, num_classes: int) -> None:
        bad = [c for c in self.targeted_classes if c > num_classes]
        if bad:
            raise InvalidMaskError(f"targeted classes {bad} exceed num_classes={num_classes}")

    def row_mask(self, num_classes: int) -> np.ndarray:
        self.validate_for(num_classes)
        out = np.zeros(num_classes, dtype=bool)
        for c in self.targeted_classes:
            out[c - 1] = True
        return out

    def to_jsonable(self) -> list[int]:
        return sorted(self.targeted_classes)

    @staticmethod
    def from_jsonable(data: Sequence[int]) -> "RegionTargetSpec":
        return RegionTargetSpec(frozenset(int(c) for c in data))


@dataclass(frozen=True)
class OptimizerConfig:
    """Gradient-search hyperparameters for the counterfactual loop."""

    lambda_weight: float = 0.3
    learning_rate: float = 0.01
    num_steps: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.lambda_weight < 0:
            raise ValueError("lambda_weight must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.num_steps <= 0 or int(self.num_steps) != self.num_steps:
            raise ValueError("num_steps must be a positive integer")

    def to_jsonable(self) -> dict:
        return {
            "lambda_weight": float(self.lambda_weight),
            "learning_rate": float(self.learning_rate),
            "num_steps": int(self.num_steps),
            "seed": int(self.seed),
        }

    @staticmethod
    def from_jsonable(data: dict) -> "OptimizerConfig":
        return OptimizerConfig(
            lambda_weight=float(data.get("lambda_weight", 0.3)),
            learning_rate=float(data.get("learning_rate", 0.01)),
            num_steps=int(data.get("num_steps", 100)),
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True)
class CounterfactualRequest:
    """A single what-if query against a registered decision model.

    ``counter_class`` is a 1-based decision-class index, or ``AUTO_FLIP``
    (``None``) to request the complement of the model's prediction.
    """

    query_image: ImageTensor
    target_regions: RegionTargetSpec
    optimizer: OptimizerConfig = OptimizerConfig()
    counter_class: Optional[int] = AUTO_FLIP
    model_id: str = ""

    def to_jsonable(self) -> dict:
        from .imaging import image_to_png_base64

        return {
            "query_image_png": image_to_png_base64(self.query_image),
            "target_regions": self.target_regions.to_jsonable(),
            "optimizer": self.optimizer.to_jsonable(),
            "counter_class": self.counter_class,
            "model_id": self.model_id,
        }

    @staticmethod
    def from_jsonable(data: dict) -> "CounterfactualRequest":
        from .imaging import image_from_png_base64

        return CounterfactualRequest(
            query_image=image_from_png_base64(data["query_image_png"]),
            target_regions=RegionTargetSpec.from_jsonable(data["target_regions"]),
            optimizer=OptimizerConfig.from_jsonable(data["optimizer"]),
            counter_class=(None if data.get("counter_class") is None else int(data["counter_class"])),
            model_id=str(data.get("model_id", "")),
        )


@dataclass(frozen=True)
class CounterfactualResult:
    """Everything produced by one counterfactual search.

    ``loss_trajectory`` holds one (decision_loss, distance_loss) pair per
    optimization step; ``prob_trajectory`` the counter-class probability at
    the same steps.  ``delta_norms[c-1]`` is ||z_c^query - z_c^final||_2 and
    is exactly zero for every non-targeted class.
    """

    counterfactual_image: ImageTensor
    reconstruction_image: ImageTensor
    final_codes: StyleCodeSet
    query_codes: StyleCodeSet
    delta_norms: np.ndarray
    loss_trajectory: tuple[tuple[float, float], ...]
    prob_trajectory: tuple[float, ...]
    success: bool
    counter_class: int
    final_counter_prob: float
    first_flip_step: Optional[int] = None
    model_id: str = ""
    optimizer: OptimizerConfig = OptimizerConfig()
    target_regions: RegionTargetSpec = field(default_factory=RegionTargetSpec.none)

    def __post_init__(self):
        dn = np.asarray(self.delta_norms, dtype=np.float64)
        if np.any(dn < 0):
            raise ValueError("delta norms must be non-negative")
        object.__setattr__(self, "delta_norms", _freeze(dn))
        object.__setattr__(self, "loss_trajectory", tuple(tuple(map(float, p)) for p in self.loss_trajectory))
        object.__setattr__(self, "prob_trajectory", tuple(float(p) for p in self.prob_trajectory))

    @property
    def total_displacement_sq(self) -> float:
        """Sum over classes of squared code displacement."""
        return float(np.sum(self.delta_norms**2))

    def to_jsonable(self) -> dict:
        """Numeric payload only; images are stored as PNG artifacts alongside."""
        return {
            "schema": "steexlab.result/1",
            "final_codes": self.final_codes.to_jsonable(),
            "query_codes": self.query_codes.to_jsonable(),
            "delta_norms": [float(v) for v in self.delta_norms],
            "loss_trajectory": [[float(a), float(b)] for a, b in self.loss_trajectory],
            "prob_trajectory": [float(p) for p in self.prob_trajectory],
            "success": bool(self.success),
            "counter_class": int(self.counter_class),
            "final_counter_prob": float(self.final_counter_prob),
            "first_flip_step": self.first_flip_step,
            "model_id": self.model_id,
            "optimizer": self.optimizer.to_jsonable(),
            "target_regions": self.target_regions.to_jsonable(),
        }

    @staticmethod
    def from_jsonable(
        data: dict,
        counterfactual_image: ImageTensor,
        reconstruction_image: ImageTensor,
    ) -> "CounterfactualResult":
        return CounterfactualResult(
            counterfactual_image=counterfactual_image,
            reconstruction_image=reconstruction_image,
            final_codes=StyleCodeSet.from_jsonable(data["final_codes"]),
            query_codes=StyleCodeSet.from_jsonable(data["query_codes"]),
            delta_norms=np.asarray(data["delta_norms"], dtype=np.float64),
            loss_trajectory=tuple((float(a), float(b)) for a, b in data["loss_trajectory"]),
            prob_trajectory=tuple(float(p) for p in data["prob_trajectory"]),
            success=bool(data["success"]),
            counter_class=int(data["counter_class"]),
            final_counter_prob=float(data["final_counter_prob"]),
            first_flip_step=(None if data.get("first_flip_step") is None else int(data["first_flip_step"])),
            model_id=str(data.get("model_id", "")),
            optimizer=OptimizerConfig.from_jsonable(data.get("optimizer", {})),
            target_regions=RegionTargetSpec.from_jsonable(data.get("target_regions", [])),
        )


def resolve_counter_class(model_output: np.ndarray, request: CounterfactualRequest) -> int:
    """Determine the 1-based counter class for a request.

    With an explicit ``counter_class`` the value is passed through after
    checking it differs from the model's argmax prediction.  With the
    auto-flip sentinel, binary models get the complement of the argmax
    (ties broken toward the lowest class index); anything wider is rejected.
    """
    probs = np.asarray(model_output, dtype=np.float64)
    if probs.ndim != 1:
        raise ShapeError("model output must be a 1-D probability vector")
    if abs(float(probs.sum()) - 1.0) > 1e-6:
        raise ValueError(f"model output must sum to 1, got {probs.sum():.8f}")
    predicted = int(np.argmax(probs)) + 1
    if request.counter_class is not AUTO_FLIP:
        wanted = int(request.counter_class)
        if wanted < 1 or wanted > probs.shape[0]:
            raise CounterClassError(f"counter class {wanted} outside 1..{probs.shape[0]}")
        if wanted == predicted:
            raise CounterClassError(
                f"counter class {wanted} equals the model's predicted class"
            )
        return wanted
    if probs.shape[0] != 2:
        raise UnsupportedModelError(
            "auto-flip is only defined for binary decision models"
        )
    return 2 if predicted == 1 else 1
