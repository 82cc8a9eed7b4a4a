"""Frozen decision models under explanation.

Binary convolutional classifiers with an optional input-visibility window:
pixels outside the window are zeroed *before* the network, which makes the
model exactly blind to them (and their gradients exactly zero).  Window
geometry is stored proportionally so it transfers across resolutions.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .autoencoder import as_tensor, _epoch_batches
from .checkpoints import load_checkpoint, save_checkpoint
from .errors import DatasetError, ShapeError, TrainingDivergedError
from .profiles import DatasetProfile
from .synthetic import SceneDataset
from .types import ImageTensor


@dataclass(frozen=True)
class VisibilityRegion:
    """Fraction-of-image rectangle kept visible; everything else is zeroed."""

    top: float = 0.0
    bottom: float = 1.0
    left: float = 0.0
    right: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.top < self.bottom <= 1.0 and 0.0 <= self.left < self.right <= 1.0):
            raise ValueError(f"degenerate visibility region {self}")

    @property
    def is_full(self) -> bool:
        return self == VisibilityRegion()

    def pixel_bounds(self, height: int, width: int) -> tuple[int, int, int, int]:
        return (
            int(round(self.top * height)),
            int(round(self.bottom * height)),
            int(round(self.left * width)),
            int(round(self.right * width)),
        )

    def pixel_mask(self, height: int, width: int) -> np.ndarray:
        r0, r1, c0, c1 = self.pixel_bounds(height, width)
        out = np.zeros((height, width), dtype=np.float32)
        out[r0:r1, c0:c1] = 1.0
        return out

    def to_jsonable(self) -> dict:
        return {"top": self.top, "bottom": self.bottom, "left": self.left, "right": self.right}

    @staticmethod
    def from_jsonable(data: Optional[dict]) -> "VisibilityRegion":
        if data is None:
            return VisibilityRegion()
        return VisibilityRegion(**data)

    @staticmethod
    def full() -> "VisibilityRegion":
        return VisibilityRegion()

    @staticmethod
    def top_band() -> "VisibilityRegion":
        return VisibilityRegion(top=0.0, bottom=0.25)

    @staticmethod
    def middle_rect() -> "VisibilityRegion":
        return VisibilityRegion(top=0.27, bottom=0.72, left=0.20, right=0.80)

    @staticmethod
    def bottom_band() -> "VisibilityRegion":
        return VisibilityRegion(top=0.78, bottom=1.0)


VISIBILITY_PRESETS = {
    "full": VisibilityRegion.full,
    "top": VisibilityRegion.top_band,
    "mid": VisibilityRegion.middle_rect,
    "bottom": VisibilityRegion.bottom_band,
}


class ClassifierNet(nn.Module):
    def __init__(self, num_outputs: int = 2):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 48, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(48, 64, 3, stride=2, padding=1), nn.SiLU(),
        )
        self.head = nn.Linear(64, num_outputs)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x).mean(dim=(2, 3))
        return self.head(h)


@dataclass
class DecisionModel:
    """Frozen differentiable classifier M with an optional visibility window."""

    net: ClassifierNet
    profile: DatasetProfile
    visibility: VisibilityRegion
    manifest: dict

    def __post_init__(self):
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    @property
    def num_classes(self) -> int:
        return self.net.head.out_features

    @property
    def class_names(self) -> tuple[str, ...]:
        return self.profile.decision_class_names

    def _visibility_tensor(self, dtype) -> Optional[torch.Tensor]:
        if self.visibility.is_full:
            return None
        mask = self.visibility.pixel_mask(self.profile.height, self.profile.width)
        return as_tensor(mask, dtype)

    def logits_t(self, images: torch.Tensor) -> torch.Tensor:
        """Differentiable path over (B, 3, H, W) tensors."""
        vis = self._visibility_tensor(images.dtype)
        if vis is not None:
            images = images * vis
        net = self.net
        if images.dtype != torch.float32:
            net = copy.deepcopy(self.net).to(images.dtype)
        return net(images)

    def without_visibility(self) -> "DecisionModel":
        """The same trained network with a full visibility window."""
        return DecisionModel(net=self.net, profile=self.profile,
                             visibility=VisibilityRegion.full(), manifest=dict(self.manifest))

    def probs_t(self, images: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.logits_t(images), dim=1)

    def scores_t(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Probabilities and log-probabilities from one logits pass.

        Log-probabilities come from log-softmax, so they stay finite (and
        keep useful gradients) even where the probability underflows.
        """
        logits = self.logits_t(images)
        return F.softmax(logits, dim=1), F.log_softmax(logits, dim=1)

    def predict_batch(self, images: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            probs = self.probs_t(as_tensor(images).permute(0, 3, 1, 2))
        return probs.numpy()

    def predict(self, image: ImageTensor) -> np.ndarray:
        """Probability vector over decision classes; deterministic."""
        if image.height != self.profile.height or image.width != self.profile.width:
            raise ShapeError("image does not match the classifier profile")
        return self.predict_batch(image.pixels[None])[0]

    def save(self, out_dir: str | Path) -> Path:
        extra = dict(self.manifest)
        extra["visibility"] = self.visibility.to_jsonable()
        return save_checkpoint(out_dir, "classifier", self.profile,
                               self.net.state_dict(), extra=extra)

    @staticmethod
    def load(ckpt_dir: str | Path) -> "DecisionModel":
        manifest, state = load_checkpoint(ckpt_dir, expected_kind="classifier")
        profile = DatasetProfile.from_jsonable(manifest["profile"])
        net = ClassifierNet(num_outputs=len(profile.decision_class_names))
        net.load_state_dict(state)
        return DecisionModel(
            net=net,
            profile=profile,
            visibility=VisibilityRegion.from_jsonable(manifest.get("visibility")),
            manifest=manifest,
        )


@dataclass(frozen=True)
class ClassifierTrainConfig:
    epochs: int = 8
    batch_size: int = 32
    learning_rate: float = 1.5e-3
    seed: int = 0
    visibility: VisibilityRegion = VisibilityRegion()


def _classification_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, labels)


def train_classifier(
    dataset: SceneDataset,
    config: ClassifierTrainConfig = ClassifierTrainConfig(),
    out_dir: str | Path | None = None,
) -> DecisionModel:
    """Train a decision model; visibility masking is applied during training
    exactly as at inference time."""
    if len(dataset) == 0:
        raise DatasetError("cannot train on an empty dataset")
    profile = dataset.profile
    train = dataset.load_arrays(dataset.train_indices or range(len(dataset)))
    val = dataset.load_arrays(dataset.val_indices or range(len(dataset)))
    if np.any(train["labels"] < 0):
        raise DatasetError("dataset has unlabeled items; cannot train a classifier")
    if len(np.unique(train["labels"])) < 2:
        raise DatasetError("dataset must contain at least two decision classes")

    torch.manual_seed(config.seed)
    net = ClassifierNet(num_outputs=len(profile.decision_class_names))
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    rng = np.random.Generator(np.random.PCG64(np.uint64(config.seed)))
    vis_mask = None
    if not config.visibility.is_full:
        vis_mask = as_tensor(config.visibility.pixel_mask(profile.height, profile.width))

    history = []
    last_good = None
    for epoch in range(config.epochs):
        losses = []
        for idx in _epoch_batches(len(train["indices"]), config.batch_size, rng):
            x = torch.from_numpy(train["images"][idx]).permute(0, 3, 1, 2)
            if vis_mask is not None:
                x = x * vis_mask
            # labels on disk are 1-based decision indices
            y = torch.from_numpy(train["labels"][idx] - 1)
            loss = _classification_loss(net(x), y)
            if not torch.isfinite(loss):
                path = None
                if out_dir and last_good is not None:
                    restored = ClassifierNet(num_outputs=len(profile.decision_class_names))
                    restored.load_state_dict(last_good)
                    path = DecisionModel(net=restored, profile=profile,
                                         visibility=config.visibility,
                                         manifest={"diverged": True}).save(Path(out_dir) / "last-good")
                raise TrainingDivergedError(f"classifier loss non-finite at epoch {epoch}",
                                            last_good_checkpoint=path)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.detach().item())
        last_good = {k: v.detach().clone() for k, v in net.state_dict().items()}

        net.eval()
        with torch.no_grad():
            xv = as_tensor(val["images"]).permute(0, 3, 1, 2)
            if vis_mask is not None:
                xv = xv * vis_mask
            pred = net(xv).argmax(dim=1).numpy() + 1
        acc = float(np.mean(pred == val["labels"]))
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_accuracy": acc})
        net.train()

    manifest = {"seed": config.seed, "trained": True, "history": history,
                "val_accuracy": history[-1]["val_accuracy"]}
    model = DecisionModel(net=net, profile=profile, visibility=config.visibility, manifest=manifest)
    if out_dir is not None:
        model.save(out_dir)
    return model


def zero_outside_region(image: ImageTensor, visibility: VisibilityRegion) -> ImageTensor:
    """Apply a visibility window to an image explicitly (for equivalence checks)."""
    mask = visibility.pixel_mask(image.height, image.width)
    return ImageTensor(pixels=image.pixels * mask[:, :, None])
