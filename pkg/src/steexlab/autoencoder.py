"""The frozen perception/generation stack.

Three networks cooperate: a segmenter predicting the semantic layout, a
style encoder summarizing each region into one code vector, and a generator
painting an image from (layout, codes).

Two structural guarantees are load-bearing for everything downstream and
are provided by construction, not by training:

* the encoder is strictly pointwise (1x1 convolutions) followed by a masked
  average per region, so a region's code depends on nothing outside that
  region's pixels;
* the generator consumes codes only through per-pixel scatter against the
  mask (style channels and per-region denormalization), so the code of a
  class absent from the mask has exactly zero influence on the output.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .checkpoints import load_checkpoint, save_checkpoint
from .errors import DatasetError, ShapeError, TrainingDivergedError
from .profiles import DatasetProfile, coordinate_channels, pattern_fields
from .synthetic import SceneDataset
from .types import ImageTensor, SemanticMask, StyleCodeSet

GEN_HIDDEN = 32
GEN_STYLE_CHANNELS = 12
ENC_HIDDEN = 48
SEG_CHANNELS = (28, 40, 56)


def masks_to_onehot(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    """(B, H, W) integer labels in 1..N -> (B, N, H, W) float one-hot."""
    onehot = F.one_hot(labels.long() - 1, num_classes)
    return onehot.permute(0, 3, 1, 2).to(torch.float32)


def as_tensor(arr: np.ndarray, dtype=None) -> torch.Tensor:
    """Copying bridge from (possibly read-only) numpy arrays to torch."""
    t = torch.from_numpy(np.array(arr, copy=True))
    return t if dtype is None else t.to(dtype)


def _conv(cin: int, cout: int, k: int = 3, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, padding_mode="replicate")


class SegmenterNet(nn.Module):
    """Small encoder-decoder with coordinate channels; logits per class."""

    def __init__(self, num_classes: int):
        super().__init__()
        c1, c2, c3 = SEG_CHANNELS
        self.enc1 = _conv(5, c1)
        self.enc2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.enc3 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)
        self.mid = _conv(c3, c3)
        self.dec1 = _conv(c3, c2)
        self.dec2 = _conv(c2, c1)
        self.fuse = _conv(2 * c1, c1)
        self.head = nn.Conv2d(c1, num_classes, 1)
        # Zero head: class channels start indistinguishable, which keeps
        # training symmetric under label permutation.
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h1 = F.silu(self.enc1(x))
        h2 = F.silu(self.enc2(h1))
        h3 = F.silu(self.enc3(h2))
        h = F.silu(self.mid(h3))
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = F.silu(self.dec1(h))
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = F.silu(self.dec2(h))
        h = F.silu(self.fuse(torch.cat([h, h1], dim=1)))
        return self.head(h)


class StyleEncoderNet(nn.Module):
    """Pointwise feature extractor; codes are masked means of its output."""

    def __init__(self, code_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, ENC_HIDDEN, 1),
            nn.SiLU(),
            nn.Conv2d(ENC_HIDDEN, ENC_HIDDEN, 1),
            nn.SiLU(),
            nn.Conv2d(ENC_HIDDEN, code_dim, 1),
        )

    def forward(self, images: torch.Tensor, onehot: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W), (B, N, H, W) -> codes (B, N, D)."""
        feats = self.net(images)
        sums = torch.einsum("bdhw,bnhw->bnd", feats, onehot)
        counts = onehot.sum(dim=(2, 3))
        codes = sums / counts.clamp(min=1.0).unsqueeze(-1)
        return codes * (counts > 0).unsqueeze(-1)


class GeneratorNet(nn.Module):
    """Mask-conditioned synthesis with per-region style denormalization."""

    def __init__(self, num_classes: int, code_dim: int):
        super().__init__()
        self.num_classes = num_classes
        self.style_proj = nn.Linear(code_dim, GEN_STYLE_CHANNELS)
        in_ch = num_classes + GEN_STYLE_CHANNELS + 4  # + coords + texture fields
        self.conv1 = _conv(in_ch, GEN_HIDDEN)
        self.mod1 = nn.Linear(code_dim, 2 * GEN_HIDDEN)
        self.conv2 = _conv(GEN_HIDDEN, GEN_HIDDEN)
        self.mod2 = nn.Linear(code_dim, 2 * GEN_HIDDEN)
        self.conv3 = _conv(GEN_HIDDEN, GEN_HIDDEN)
        self.head = nn.Conv2d(GEN_HIDDEN, 3, 1)

    @staticmethod
    def _scatter(onehot: torch.Tensor, per_class: torch.Tensor) -> torch.Tensor:
        """Broadcast per-class vectors onto their pixels: (B,N,H,W),(B,N,C)->(B,C,H,W)."""
        return torch.einsum("bnhw,bnc->bchw", onehot, per_class)

    def _denorm(self, h: torch.Tensor, onehot: torch.Tensor, params: torch.Tensor) -> torch.Tensor:
        gb = self._scatter(onehot, params)
        gamma, beta = gb.chunk(2, dim=1)
        return h * (1.0 + gamma) + beta

    def forward(self, onehot: torch.Tensor, codes: torch.Tensor, const: torch.Tensor) -> torch.Tensor:
        """(B,N,H,W) one-hot, (B,N,D) codes, (B,4,H,W) coord+texture channels."""
        style_map = self._scatter(onehot, self.style_proj(codes))
        h = F.silu(self.conv1(torch.cat([onehot, style_map, const], dim=1)))
        h = self._denorm(h, onehot, self.mod1(codes))
        h = F.silu(self.conv2(h))
        h = self._denorm(h, onehot, self.mod2(codes))
        h = F.silu(self.conv3(h))
        return torch.tanh(self.head(h))


def _const_channels(profile: DatasetProfile, dtype=torch.float32) -> torch.Tensor:
    coords = coordinate_channels(profile.height, profile.width)
    fields = pattern_fields(profile.height, profile.width)
    return torch.from_numpy(np.concatenate([coords, fields], axis=0)).to(dtype)


def _check_image_shape(image: ImageTensor, profile: DatasetProfile) -> None:
    if image.height != profile.height or image.width != profile.width:
        raise ShapeError(
            f"image is {image.height}x{image.width}, profile expects "
            f"{profile.height}x{profile.width}"
        )


@dataclass
class SegmenterModel:
    """Frozen segmentation network E_seg."""

    net: SegmenterNet
    profile: DatasetProfile
    manifest: dict

    def __post_init__(self):
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    def _input(self, images: torch.Tensor) -> torch.Tensor:
        coords = as_tensor(coordinate_channels(self.profile.height, self.profile.width),
                           images.dtype)
        coords = coords.unsqueeze(0).expand(images.shape[0], -1, -1, -1)
        return torch.cat([images, coords], dim=1)

    def logits(self, images: torch.Tensor) -> torch.Tensor:
        return self.net(self._input(images))

    def segment_probs(self, image: ImageTensor) -> np.ndarray:
        """Per-pixel class probabilities, shape (H, W, N)."""
        _check_image_shape(image, self.profile)
        with torch.no_grad():
            x = as_tensor(image.pixels).permute(2, 0, 1).unsqueeze(0)
            probs = F.softmax(self.logits(x), dim=1)
        return probs[0].permute(1, 2, 0).numpy()

    def segment_batch(self, images: np.ndarray) -> np.ndarray:
        """(B, H, W, 3) -> (B, H, W) labels; argmax ties go to the lowest index."""
        with torch.no_grad():
            x = as_tensor(images).permute(0, 3, 1, 2)
            logits = self.logits(x).numpy()
        return (np.argmax(logits, axis=1) + 1).astype(np.uint8)

    def segment(self, image: ImageTensor) -> SemanticMask:
        _check_image_shape(image, self.profile)
        labels = self.segment_batch(image.pixels[None])[0]
        return SemanticMask(labels=labels, num_classes=self.profile.num_classes)

    def save(self, out_dir: str | Path) -> Path:
        return save_checkpoint(out_dir, "segmenter", self.profile,
                               self.net.state_dict(), extra=self.manifest)

    @staticmethod
    def load(ckpt_dir: str | Path) -> "SegmenterModel":
        manifest, state = load_checkpoint(ckpt_dir, expected_kind="segmenter")
        profile = DatasetProfile.from_jsonable(manifest["profile"])
        net = SegmenterNet(profile.num_classes)
        net.load_state_dict(state)
        return SegmenterModel(net=net, profile=profile, manifest=manifest)


@dataclass
class StyleEncoderModel:
    """Frozen per-region style encoder E_z."""

    net: StyleEncoderNet
    profile: DatasetProfile
    manifest: dict

    def __post_init__(self):
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    def encode_batch(self, images: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """(B,H,W,3), (B,H,W) -> codes (B, N, D)."""
        with torch.no_grad():
            x = as_tensor(images).permute(0, 3, 1, 2)
            onehot = masks_to_onehot(as_tensor(labels), self.profile.num_classes)
            codes = self.net(x, onehot)
        return codes.numpy()

    def encode(self, image: ImageTensor, mask: SemanticMask) -> StyleCodeSet:
        _check_image_shape(image, self.profile)
        if mask.height != image.height or mask.width != image.width:
            raise ShapeError("image and mask spatial dimensions differ")
        codes = self.encode_batch(image.pixels[None], mask.labels[None])[0]
        return StyleCodeSet(codes=codes, present_classes=mask.present_classes())

    def save(self, out_dir: str | Path) -> Path:
        return save_checkpoint(out_dir, "style_encoder", self.profile,
                               self.net.state_dict(), extra=self.manifest)


@dataclass
class GeneratorModel:
    """Frozen mask-conditioned generator G; differentiable in the codes."""

    net: GeneratorNet
    profile: DatasetProfile
    manifest: dict

    def __post_init__(self):
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    def const_channels(self, batch: int, dtype=torch.float32) -> torch.Tensor:
        return _const_channels(self.profile, dtype).unsqueeze(0).expand(batch, -1, -1, -1)

    def generate_t(self, onehot: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
        """Differentiable path: (B,N,H,W), (B,N,D) -> (B,3,H,W)."""
        const = self.const_channels(onehot.shape[0], dtype=codes.dtype)
        net = self.net
        if codes.dtype != torch.float32:
            net = copy.deepcopy(self.net).to(codes.dtype)
        return net(onehot.to(codes.dtype), codes, const)

    def generate_batch(self, labels: np.ndarray, codes: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            onehot = masks_to_onehot(as_tensor(labels), self.profile.num_classes)
            out = self.generate_t(onehot, as_tensor(codes))
        return out.permute(0, 2, 3, 1).numpy()

    def generate(self, mask: SemanticMask, codes: StyleCodeSet) -> ImageTensor:
        if codes.num_classes != self.profile.num_classes or codes.code_dim != self.profile.code_dim:
            raise ShapeError("code set does not match the generator profile")
        if mask.height != self.profile.height or mask.width != self.profile.width:
            raise ShapeError("mask does not match the generator profile")
        pixels = self.generate_batch(mask.labels[None], codes.codes[None].astype(np.float32))[0]
        return ImageTensor(pixels=pixels)

    def save(self, out_dir: str | Path) -> Path:
        return save_checkpoint(out_dir, "generator", self.profile,
                               self.net.state_dict(), extra=self.manifest)


def make_segmenter(profile: DatasetProfile, seed: int = 0) -> SegmenterModel:
    torch.manual_seed(seed)
    return SegmenterModel(net=SegmenterNet(profile.num_classes), profile=profile,
                          manifest={"seed": seed, "trained": False})


def make_autoencoder(profile: DatasetProfile, seed: int = 0) -> tuple[StyleEncoderModel, GeneratorModel]:
    torch.manual_seed(seed)
    enc = StyleEncoderNet(profile.code_dim)
    gen = GeneratorNet(profile.num_classes, profile.code_dim)
    meta = {"seed": seed, "trained": False}
    return (
        StyleEncoderModel(net=enc, profile=profile, manifest=dict(meta)),
        GeneratorModel(net=gen, profile=profile, manifest=dict(meta)),
    )


def save_autoencoder(out_dir: str | Path, encoder: StyleEncoderModel,
                     generator: GeneratorModel, extra: dict | None = None) -> Path:
    state = {"encoder": encoder.net.state_dict(), "generator": generator.net.state_dict()}
    manifest = dict(encoder.manifest)
    manifest.update(extra or {})
    return save_checkpoint(out_dir, "autoencoder", encoder.profile, state, extra=manifest)


def load_autoencoder(ckpt_dir: str | Path) -> tuple[StyleEncoderModel, GeneratorModel]:
    manifest, state = load_checkpoint(ckpt_dir, expected_kind="autoencoder")
    profile = DatasetProfile.from_jsonable(manifest["profile"])
    enc_net = StyleEncoderNet(profile.code_dim)
    enc_net.load_state_dict(state["encoder"])
    gen_net = GeneratorNet(profile.num_classes, profile.code_dim)
    gen_net.load_state_dict(state["generator"])
    return (
        StyleEncoderModel(net=enc_net, profile=profile, manifest=manifest),
        GeneratorModel(net=gen_net, profile=profile, manifest=manifest),
    )


@dataclass
class SemanticStack:
    """Segmenter + encoder + generator, used as one frozen unit."""

    segmenter: SegmenterModel
    encoder: StyleEncoderModel
    generator: GeneratorModel

    @property
    def profile(self) -> DatasetProfile:
        return self.generator.profile

    def segment(self, image: ImageTensor) -> SemanticMask:
        return self.segmenter.segment(image)

    def encode(self, image: ImageTensor, mask: SemanticMask) -> StyleCodeSet:
        return self.encoder.encode(image, mask)

    def generate(self, mask: SemanticMask, codes: StyleCodeSet) -> ImageTensor:
        return self.generator.generate(mask, codes)

    def reconstruct(self, image: ImageTensor) -> ImageTensor:
        mask = self.segment(image)
        return self.generate(mask, self.encode(image, mask))

    @staticmethod
    def load_dirs(segmenter_dir: str | Path, autoencoder_dir: str | Path) -> "SemanticStack":
        segmenter = SegmenterModel.load(segmenter_dir)
        encoder, generator = load_autoencoder(autoencoder_dir)
        if segmenter.profile.to_jsonable() != generator.profile.to_jsonable():
            raise ShapeError("segmenter and autoencoder were trained under different profiles")
        return SemanticStack(segmenter=segmenter, encoder=encoder, generator=generator)


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SegmenterTrainConfig:
    epochs: int = 18
    batch_size: int = 32
    learning_rate: float = 2e-3
    seed: int = 0
    color_augment: bool = True
    color_augment_scale: float = 0.3
    class_weighting: bool = True
    # fraction of samples replaced by flat background-only images, so that a
    # uniform input segments as all-background
    blank_sky_rate: float = 0.05


@dataclass(frozen=True)
class AutoencoderTrainConfig:
    epochs: int = 14
    batch_size: int = 32
    learning_rate: float = 2e-3
    seed: int = 0
    use_adversarial: bool = False
    adversarial_weight: float = 0.1
    use_perceptual: bool = False
    perceptual_weight: float = 0.5


def _segmentation_loss(
    logits: torch.Tensor, target: torch.Tensor, class_weights: Optional[torch.Tensor] = None
) -> torch.Tensor:
    return F.cross_entropy(logits, target.long() - 1, weight=class_weights)


def _inverse_frequency_weights(masks: np.ndarray, num_classes: int) -> torch.Tensor:
    """sqrt-inverse pixel-frequency weights; keeps small regions from drowning."""
    counts = np.bincount(masks.ravel(), minlength=num_classes + 1)[1:].astype(np.float64)
    weights = 1.0 / np.sqrt(np.maximum(counts, 1.0))
    weights = weights / weights.mean()
    return torch.from_numpy(weights.astype(np.float32))


def _reconstruction_loss(recon: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return (recon - target).abs().mean()


def _edge_loss(recon: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Horizontal/vertical gradient L1; the desk-scale perceptual term."""
    loss = (recon[..., 1:, :] - recon[..., :-1, :] - target[..., 1:, :] + target[..., :-1, :]).abs().mean()
    loss = loss + (recon[..., 1:] - recon[..., :-1] - target[..., 1:] + target[..., :-1]).abs().mean()
    return loss


class _PatchDiscriminator(nn.Module):
    def __init__(self):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(16, 32, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 1, 3, padding=1),
        )

    def forward(self, x):
        return self.net(x)


def _augment_regions(images: np.ndarray, labels: np.ndarray,
                     rng: np.random.Generator, scale: float) -> np.ndarray:
    """Shift each region's color by a random offset; layout is unchanged."""
    out = images.copy()
    for b in range(images.shape[0]):
        if rng.uniform() < 0.25:
            continue
        for cls in np.unique(labels[b]):
            offset = rng.uniform(-scale, scale, size=3).astype(np.float32)
            out[b][labels[b] == cls] += offset
    return np.clip(out, -1.0, 1.0)


def _blank_sky_samples(images: np.ndarray, labels: np.ndarray,
                       rng: np.random.Generator, rate: float) -> None:
    """Replace a few samples in-place with flat background-only scenes."""
    base = np.array([-0.15, 0.22, 0.52], dtype=np.float32)
    for b in range(images.shape[0]):
        if rng.uniform() >= rate:
            continue
        color = base + rng.uniform(-0.35, 0.35) + rng.uniform(-0.2, 0.2, size=3).astype(np.float32)
        images[b] = np.clip(color, -1.0, 1.0)
        labels[b] = 1


def mean_iou(pred: np.ndarray, target: np.ndarray, num_classes: int) -> float:
    """Mean per-class IoU over classes present in prediction or target."""
    ious = []
    for cls in range(1, num_classes + 1):
        p = pred == cls
        t = target == cls
        union = np.logical_or(p, t).sum()
        if union == 0:
            continue
        ious.append(np.logical_and(p, t).sum() / union)
    return float(np.mean(ious)) if ious else 1.0


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_segmenter(
    dataset: SceneDataset,
    config: SegmenterTrainConfig = SegmenterTrainConfig(),
    out_dir: str | Path | None = None,
) -> SegmenterModel:
    """Train E_seg on (image, ground-truth mask) pairs."""
    if len(dataset) == 0:
        raise DatasetError("cannot train on an empty dataset")
    profile = dataset.profile
    train = dataset.load_arrays(dataset.train_indices or range(len(dataset)))
    val = dataset.load_arrays(dataset.val_indices or range(len(dataset)))

    torch.manual_seed(config.seed)
    net = SegmenterNet(profile.num_classes)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    rng = np.random.Generator(np.random.PCG64(np.uint64(config.seed)))
    class_weights = None
    if config.class_weighting:
        class_weights = _inverse_frequency_weights(train["masks"], profile.num_classes)

    history = []
    last_good: Optional[dict] = None
    for epoch in range(config.epochs):
        net.train()
        losses = []
        for idx in _epoch_batches(len(train["indices"]), config.batch_size, rng):
            images = train["images"][idx]
            labels = train["masks"][idx].copy()
            if config.color_augment:
                images = _augment_regions(images, labels, rng, config.color_augment_scale)
            else:
                images = images.copy()
            if config.blank_sky_rate > 0:
                _blank_sky_samples(images, labels, rng, config.blank_sky_rate)
            x = torch.from_numpy(images).permute(0, 3, 1, 2)
            coords = as_tensor(coordinate_channels(profile.height, profile.width))
            coords = coords.unsqueeze(0).expand(x.shape[0], -1, -1, -1)
            logits = net(torch.cat([x, coords], dim=1))
            loss = _segmentation_loss(logits, torch.from_numpy(labels), class_weights)
            if not torch.isfinite(loss):
                path = None
                if out_dir and last_good is not None:
                    model = SegmenterModel(net=_restore(SegmenterNet(profile.num_classes), last_good),
                                           profile=profile, manifest={"diverged": True})
                    path = model.save(Path(out_dir) / "last-good")
                raise TrainingDivergedError(f"segmenter loss non-finite at epoch {epoch}",
                                            last_good_checkpoint=path)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.detach().item())
        last_good = {k: v.detach().clone() for k, v in net.state_dict().items()}

        net.eval()
        with torch.no_grad():
            xv = as_tensor(val["images"]).permute(0, 3, 1, 2)
            coords = as_tensor(coordinate_channels(profile.height, profile.width))
            coords = coords.unsqueeze(0).expand(xv.shape[0], -1, -1, -1)
            pred = (net(torch.cat([xv, coords], dim=1)).numpy().argmax(axis=1) + 1).astype(np.uint8)
        miou = float(np.mean([
            mean_iou(pred[i], val["masks"][i], profile.num_classes) for i in range(pred.shape[0])
        ]))
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_miou": miou})
        net.train()

    manifest = {"seed": config.seed, "trained": True, "history": history,
                "val_miou": history[-1]["val_miou"]}
    model = SegmenterModel(net=net, profile=profile, manifest=manifest)
    if out_dir is not None:
        model.save(out_dir)
    return model


def _restore(net: nn.Module, state: Optional[dict]) -> nn.Module:
    if state is not None:
        net.load_state_dict(state)
    return net


def train_autoencoder(
    dataset: SceneDataset,
    config: AutoencoderTrainConfig = AutoencoderTrainConfig(),
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> tuple[StyleEncoderModel, GeneratorModel]:
    """Jointly train E_z and G as an autoencoder with an L1 objective.

    Adversarial and edge ("perceptual") terms are optional and default off;
    plain L1 is deterministic and is all the desk-scale acceptance needs.
    """
    if len(dataset) == 0:
        raise DatasetError("cannot train on an empty dataset")
    profile = dataset.profile
    train = dataset.load_arrays(dataset.train_indices or range(len(dataset)))
    val = dataset.load_arrays(dataset.val_indices or range(len(dataset)))

    torch.manual_seed(config.seed)
    enc_net = StyleEncoderNet(profile.code_dim)
    gen_net = GeneratorNet(profile.num_classes, profile.code_dim)
    if resume_from is not None:
        _, state = load_checkpoint(resume_from, expected_kind="autoencoder")
        enc_net.load_state_dict(state["encoder"])
        gen_net.load_state_dict(state["generator"])
    params = list(enc_net.parameters()) + list(gen_net.parameters())
    opt = torch.optim.Adam(params, lr=config.learning_rate)
    disc = _PatchDiscriminator() if config.use_adversarial else None
    disc_opt = torch.optim.Adam(disc.parameters(), lr=config.learning_rate) if disc else None
    rng = np.random.Generator(np.random.PCG64(np.uint64(config.seed)))
    const = _const_channels(profile)

    history = []
    last_good: Optional[dict] = None
    for epoch in range(config.epochs):
        losses = []
        for idx in _epoch_batches(len(train["indices"]), config.batch_size, rng):
            x = torch.from_numpy(train["images"][idx]).permute(0, 3, 1, 2)
            onehot = masks_to_onehot(torch.from_numpy(train["masks"][idx]), profile.num_classes)
            codes = enc_net(x, onehot)
            recon = gen_net(onehot, codes, const.unsqueeze(0).expand(x.shape[0], -1, -1, -1))
            loss = _reconstruction_loss(recon, x)
            if config.use_perceptual:
                loss = loss + config.perceptual_weight * _edge_loss(recon, x)
            if disc is not None:
                d_fake = disc(recon.detach())
                d_real = disc(x)
                d_loss = F.relu(1.0 - d_real).mean() + F.relu(1.0 + d_fake).mean()
                disc_opt.zero_grad()
                d_loss.backward()
                disc_opt.step()
                loss = loss - config.adversarial_weight * disc(recon).mean()
            if not torch.isfinite(loss):
                path = None
                if out_dir and last_good is not None:
                    e = StyleEncoderModel(net=_restore(StyleEncoderNet(profile.code_dim), last_good["encoder"]),
                                          profile=profile, manifest={"diverged": True})
                    g = GeneratorModel(net=_restore(GeneratorNet(profile.num_classes, profile.code_dim),
                                                    last_good["generator"]),
                                       profile=profile, manifest={"diverged": True})
                    path = save_autoencoder(Path(out_dir) / "last-good", e, g)
                raise TrainingDivergedError(f"autoencoder loss non-finite at epoch {epoch}",
                                            last_good_checkpoint=path)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.detach().item())
        last_good = {
            "encoder": {k: v.detach().clone() for k, v in enc_net.state_dict().items()},
            "generator": {k: v.detach().clone() for k, v in gen_net.state_dict().items()},
        }

        with torch.no_grad():
            xv = torch.from_numpy(val["images"]).permute(0, 3, 1, 2)
            ov = masks_to_onehot(torch.from_numpy(val["masks"]), profile.num_classes)
            rv = gen_net(ov, enc_net(xv, ov), const.unsqueeze(0).expand(xv.shape[0], -1, -1, -1))
            val_mae = float((rv - xv).abs().mean())
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_mae": val_mae})

    manifest = {"seed": config.seed, "trained": True, "history": history,
                "val_mae": history[-1]["val_mae"]}
    encoder = StyleEncoderModel(net=enc_net, profile=profile, manifest=manifest)
    generator = GeneratorModel(net=gen_net, profile=profile, manifest=dict(manifest))
    if out_dir is not None:
        save_autoencoder(out_dir, encoder, generator)
    return encoder, generator
