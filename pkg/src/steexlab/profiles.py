"""Dataset profiles: the fixed resolution / class-palette contract for a run.

Every model checkpoint records the profile it was trained under, and all
operations reject inputs whose shape disagrees with it.  Semantic class
indices are 1-based throughout the package: a mask entry ``c`` refers to
``class_names[c - 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class DatasetProfile:
    """Immutable description of one dataset family.

    ``height`` and ``width`` are fixed for a whole run; ``num_classes`` is the
    number of semantic classes N; ``code_dim`` is the per-class style-code
    dimension D.
    """

    name: str
    height: int
    width: int
    num_classes: int
    code_dim: int
    class_names: tuple[str, ...]
    attribute_names: tuple[str, ...] = ()
    decision_class_names: tuple[str, ...] = ("stop", "go")

    def __post_init__(self):
        if len(self.class_names) != self.num_classes:
            raise ValueError("class_names must have num_classes entries")

    def class_index(self, name: str) -> int:
        """1-based index of a semantic class name."""
        return self.class_names.index(name) + 1

    def decision_index(self, name: str) -> int:
        """1-based index of a decision class name."""
        return self.decision_class_names.index(name) + 1

    def to_jsonable(self) -> dict:
        return {
            "name": self.name,
            "height": self.height,
            "width": self.width,
            "num_classes": self.num_classes,
            "code_dim": self.code_dim,
            "class_names": list(self.class_names),
            "attribute_names": list(self.attribute_names),
            "decision_class_names": list(self.decision_class_names),
        }

    @staticmethod
    def from_jsonable(data: dict) -> "DatasetProfile":
        return DatasetProfile(
            name=data["name"],
            height=int(data["height"]),
            width=int(data["width"]),
            num_classes=int(data["num_classes"]),
            code_dim=int(data["code_dim"]),
            class_names=tuple(data["class_names"]),
            attribute_names=tuple(data.get("attribute_names", ())),
            decision_class_names=tuple(data.get("decision_class_names", ("stop", "go"))),
        )


# The desk-scale synthetic street-scene domain.  Classes, in mask order:
# sky fills whatever is not covered; road is the bottom band; the signal
# light and the obstacle are the two label-relevant regions; the rest are
# distractors.
SEMSHAPES_CLASS_NAMES = (
    "sky",
    "road",
    "light",
    "obstacle",
    "building",
    "tree",
    "marking",
    "sign",
)

SEMSHAPES_ATTRIBUTE_NAMES = (
    "light_green",
    "obstacle_blocking",
    "obstacle_present",
    "building_bright",
    "tree_dark",
    "marking_bright",
    "sign_warm",
    "sky_light",
)

SEMSHAPES_64 = DatasetProfile(
    name="semshapes-64",
    height=64,
    width=64,
    num_classes=8,
    code_dim=64,
    class_names=SEMSHAPES_CLASS_NAMES,
    attribute_names=SEMSHAPES_ATTRIBUTE_NAMES,
)

PROFILES = {SEMSHAPES_64.name: SEMSHAPES_64}


def get_profile(name: str) -> DatasetProfile:
    if name not in PROFILES:
        raise KeyError(f"unknown dataset profile: {name!r}")
    return PROFILES[name]


@lru_cache(maxsize=8)
def coordinate_channels(height: int, width: int) -> np.ndarray:
    """Two channels with row/col positions normalized to [-1, 1], shape (2, H, W)."""
    rows = np.linspace(-1.0, 1.0, height, dtype=np.float32)
    cols = np.linspace(-1.0, 1.0, width, dtype=np.float32)
    rr = np.repeat(rows[:, None], width, axis=1)
    cc = np.repeat(cols[None, :], height, axis=0)
    out = np.stack([rr, cc], axis=0)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=8)
def pattern_fields(height: int, width: int) -> np.ndarray:
    """Fixed procedural texture fields shared by every scene, shape (2, H, W).

    Scene styles modulate the *amplitude* of these fields per region; the
    fields themselves never change, so a generator given them as input
    channels can reproduce textures exactly.
    """
    r = np.arange(height, dtype=np.float32)[:, None]
    c = np.arange(width, dtype=np.float32)[None, :]
    p1 = np.sin(2 * np.pi * (3 * r + c) / 31.0) * np.cos(2 * np.pi * (c - 2 * r) / 43.0)
    p2 = np.sin(2 * np.pi * r / 9.0) * np.sin(2 * np.pi * c / 11.0)
    out = np.stack([p1, p2], axis=0).astype(np.float32)
    out.flags.writeable = False
    return out
