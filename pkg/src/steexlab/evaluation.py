"""Metrics and experiment runners for auditing counterfactual quality.

Three families:

* intrinsic metrics over persisted results (success rate, per-class impact);
* perceptual proxies backed by small networks trained on the synthetic
  domain: desk-FID (feature Frechet distance; deliberately *not* comparable
  to Inception-based numbers), an identity-preservation rate, and a mean
  attributes-changed count;
* protocol runners (reconstruction quality, the distance-loss/ground-truth
  mask ablation, lambda sweeps) that orchestrate counterfactual sweeps and
  aggregate the metrics above.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .autoencoder import SemanticStack, _epoch_batches, as_tensor
from .checkpoints import load_checkpoint, save_checkpoint
from .classifiers import DecisionModel
from .engine import run_counterfactual_batch
from .errors import ConfigError, DatasetError, ShapeError
from .profiles import DatasetProfile
from .synthetic import SceneDataset
from .types import CounterfactualResult, OptimizerConfig, RegionTargetSpec

FVA_COSINE_THRESHOLD = 0.5
ATTRIBUTE_THRESHOLD = 0.5
_COV_EPS = 1e-6


def config_fingerprint(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class MetricReport:
    """One scalar metric with enough context to be reproduced."""

    name: str
    value: float
    sample_count: int
    fingerprint: str = ""
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sample_count <= 0:
            raise ValueError("sample_count must be positive")
        if not np.isfinite(self.value):
            raise ValueError(f"metric {self.name} is not finite")

    def to_jsonable(self) -> dict:
        return {
            "name": self.name,
            "value": float(self.value),
            "sample_count": int(self.sample_count),
            "fingerprint": self.fingerprint,
            "flags": dict(self.flags),
        }


# --------------------------------------------------------------------------
# Success rate
# --------------------------------------------------------------------------


def success_rate(results: Sequence[CounterfactualResult], fingerprint: str = "") -> MetricReport:
    """Fraction of results whose final image is classified as the counter class."""
    if not results:
        raise ValueError("success_rate requires at least one result")
    value = float(np.mean([r.success for r in results]))
    return MetricReport("success_rate", value, len(results), fingerprint)


# --------------------------------------------------------------------------
# desk-FID
# --------------------------------------------------------------------------


def _sqrtm_psd(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, negatives clipped."""
    sym = (matrix + matrix.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(mu1, sigma1, mu2, sigma2) -> float:
    """||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}) for Gaussian fits."""
    mu1, mu2 = np.asarray(mu1, dtype=np.float64), np.asarray(mu2, dtype=np.float64)
    sigma1 = np.atleast_2d(np.asarray(sigma1, dtype=np.float64))
    sigma2 = np.atleast_2d(np.asarray(sigma2, dtype=np.float64))
    root1 = _sqrtm_psd(sigma1)
    inner = _sqrtm_psd(root1 @ sigma2 @ root1)
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * np.trace(inner))
    return max(value, 0.0)


def desk_fid_features(
    features_a: np.ndarray, features_b: np.ndarray, fingerprint: str = ""
) -> MetricReport:
    """Frechet distance between Gaussian fits of two feature sets.

    Near-singular covariances are regularized with 1e-6 * I on both sides and
    the report is flagged.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError("feature sets must be (n, d) with matching d")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least two samples per set to fit a covariance")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    regularized = False
    floor = _COV_EPS * max(1.0, float(np.trace(cov_a) + np.trace(cov_b)) / (2 * a.shape[1]))
    if min(np.linalg.eigvalsh(cov_a).min(), np.linalg.eigvalsh(cov_b).min()) < floor:
        cov_a = cov_a + _COV_EPS * np.eye(a.shape[1])
        cov_b = cov_b + _COV_EPS * np.eye(b.shape[1])
        regularized = True
    value = frechet_distance(mu_a, cov_a, mu_b, cov_b)
    return MetricReport(
        "desk_fid",
        value,
        a.shape[0] + b.shape[0],
        fingerprint,
        flags={"covariance_regularized": regularized},
    )


def desk_fid_images(
    images_a: np.ndarray,
    images_b: np.ndarray,
    extractor: "AttributeOracle",
    fingerprint: str = "",
) -> MetricReport:
    """desk-FID between two image sets; both sets need at least 50 images."""
    if len(images_a) < 50 or len(images_b) < 50:
        raise ValueError("desk-FID over images requires at least 50 images per set")
    return desk_fid_features(
        extractor.features_batch(np.asarray(images_a)),
        extractor.features_batch(np.asarray(images_b)),
        fingerprint,
    )


# --------------------------------------------------------------------------
# Identity embedder (the face-verification stand-in)
# --------------------------------------------------------------------------

EMBED_DIM = 32


class _ConvTrunk(nn.Module):
    """Small conv feature extractor with average or average+max pooling.

    Max pooling keeps localized evidence (a tiny green disk) from being
    diluted, which matters for the attribute oracle.
    """

    def __init__(self, out_dim: int, pool: str = "avg"):
        super().__init__()
        self.pool = pool
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.SiLU(),
        )
        feat_dim = 64 if pool == "avg" else 128
        self.head = nn.Linear(feat_dim, out_dim)

    def trunk(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x)
        if self.pool == "avg":
            return h.mean(dim=(2, 3))
        return torch.cat([h.mean(dim=(2, 3)), h.amax(dim=(2, 3))], dim=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.trunk(x))


@dataclass
class IdentityEmbedder:
    """Maps images to unit-norm embeddings; cosine > 0.5 means same identity."""

    net: _ConvTrunk
    profile: DatasetProfile
    manifest: dict

    def __post_init__(self):
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    @property
    def trained(self) -> bool:
        return bool(self.manifest.get("trained"))

    def embed_batch(self, images: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            x = as_tensor(np.asarray(images, dtype=np.float32)).permute(0, 3, 1, 2)
            emb = F.normalize(self.net(x), dim=1)
        return emb.numpy()

    def save(self, out_dir: str | Path) -> Path:
        return save_checkpoint(out_dir, "embedder", self.profile,
                               self.net.state_dict(), extra=self.manifest)

    @staticmethod
    def load(ckpt_dir: str | Path) -> "IdentityEmbedder":
        manifest, state = load_checkpoint(ckpt_dir, expected_kind="embedder")
        profile = DatasetProfile.from_jsonable(manifest["profile"])
        net = _ConvTrunk(EMBED_DIM)
        net.load_state_dict(state)
        return IdentityEmbedder(net=net, profile=profile, manifest=manifest)


@dataclass(frozen=True)
class EmbedderTrainConfig:
    epochs: int = 150
    identities_per_batch: int = 24
    samples_per_identity: int = 3
    learning_rate: float = 1.5e-3
    positive_margin: float = 0.85
    negative_margin: float = 0.15
    noise_scale: float = 0.02
    luma_jitter: float = 0.06
    seed: int = 0


def _margin_pair_loss(
    emb: torch.Tensor,
    identities: torch.Tensor,
    positive_margin: float,
    negative_margin: float,
) -> torch.Tensor:
    """Shape cosines around the 0.5 verification threshold directly:
    same-identity pairs are pulled above ``positive_margin``, different ones
    pushed below ``negative_margin``."""
    sim = emb @ emb.T
    eye = torch.eye(sim.shape[0], dtype=torch.bool)
    same = (identities.view(-1, 1) == identities.view(1, -1)) & ~eye
    diff = ~same & ~eye
    pos_loss = F.relu(positive_margin - sim[same]).square().mean()
    neg_loss = F.relu(sim[diff] - negative_margin).square().mean()
    return pos_loss + neg_loss


def train_identity_embedder(
    dataset: SceneDataset,
    config: EmbedderTrainConfig = EmbedderTrainConfig(),
    out_dir: str | Path | None = None,
) -> IdentityEmbedder:
    """Contrastive training on the dataset's identity factor."""
    if not dataset.identity_available:
        raise DatasetError("dataset has no identity annotations")
    profile = dataset.profile
    train = dataset.load_arrays(dataset.train_indices or range(len(dataset)))
    val = dataset.load_arrays(dataset.val_indices or range(len(dataset)))

    by_identity: dict[int, list[int]] = {}
    for pos, ident in enumerate(train["identities"]):
        by_identity.setdefault(int(ident), []).append(pos)
    usable = {k: v for k, v in by_identity.items() if len(v) >= config.samples_per_identity}
    if len(usable) < 2:
        raise DatasetError("need at least two identities with multiple samples")

    torch.manual_seed(config.seed)
    net = _ConvTrunk(EMBED_DIM)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    rng = np.random.Generator(np.random.PCG64(np.uint64(config.seed)))
    ids = sorted(usable)

    history = []
    for epoch in range(config.epochs):
        losses = []
        order = rng.permutation(len(ids))
        for start in range(0, len(ids), config.identities_per_batch):
            chosen = [ids[i] for i in order[start : start + config.identities_per_batch]]
            if len(chosen) < 2:
                continue
            rows, labels = [], []
            for ident in chosen:
                picks = rng.choice(usable[ident], size=config.samples_per_identity, replace=False)
                rows.extend(int(p) for p in picks)
                labels.extend([ident] * config.samples_per_identity)
            images = train["images"][rows].copy()
            images += rng.normal(0, config.noise_scale, size=images.shape).astype(np.float32)
            images += rng.uniform(-config.luma_jitter, config.luma_jitter,
                                  size=(images.shape[0], 1, 1, 1)).astype(np.float32)
            images = np.clip(images, -1, 1)
            emb = F.normalize(net(torch.from_numpy(images).permute(0, 3, 1, 2)), dim=1)
            loss = _margin_pair_loss(emb, torch.tensor(labels),
                                     config.positive_margin, config.negative_margin)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.detach().item())
        history.append({"epoch": epoch, "loss": float(np.mean(losses))})

    manifest = {"seed": config.seed, "trained": True, "history": history}
    embedder = IdentityEmbedder(net=net, profile=profile, manifest=manifest)
    ver = _verification_accuracy(embedder, val, rng)
    embedder.manifest["val_verification_accuracy"] = ver
    if out_dir is not None:
        embedder.save(out_dir)
    return embedder


def _verification_accuracy(embedder: IdentityEmbedder, val: dict, rng: np.random.Generator) -> float:
    if val["identities"] is None or len(val["indices"]) < 4:
        return float("nan")
    emb = embedder.embed_batch(val["images"])
    idents = val["identities"]
    sims = emb @ emb.T
    n = len(idents)
    correct, total = 0, 0
    for i in range(n):
        for j in range(i + 1, n):
            same = idents[i] == idents[j]
            pred = sims[i, j] > FVA_COSINE_THRESHOLD
            correct += int(pred == same)
            total += 1
    return correct / total if total else float("nan")


def identity_preservation(
    query_images: np.ndarray,
    explanation_images: np.ndarray,
    embedder: IdentityEmbedder,
    fingerprint: str = "",
) -> MetricReport:
    """Fraction of pairs whose embeddings stay within cosine 0.5."""
    if not embedder.trained:
        raise ConfigError("identity embedder has not been trained")
    q = embedder.embed_batch(np.asarray(query_images))
    e = embedder.embed_batch(np.asarray(explanation_images))
    if q.shape != e.shape:
        raise ShapeError("query and explanation sets differ in size")
    cos = np.sum(q * e, axis=1)
    value = float(np.mean(cos > FVA_COSINE_THRESHOLD))
    return MetricReport("identity_preservation", value, q.shape[0], fingerprint)


# --------------------------------------------------------------------------
# Attribute oracle (also the desk-FID feature extractor)
# --------------------------------------------------------------------------


@dataclass
class AttributeOracle:
    """Multi-attribute classifier over the synthetic attribute set."""

    net: _ConvTrunk
    profile: DatasetProfile
    manifest: dict

    def __post_init__(self):
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    @property
    def trained(self) -> bool:
        return bool(self.manifest.get("trained"))

    def attribute_probs(self, images: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            x = as_tensor(np.asarray(images, dtype=np.float32)).permute(0, 3, 1, 2)
            probs = torch.sigmoid(self.net(x))
        return probs.numpy()

    def features_batch(self, images: np.ndarray) -> np.ndarray:
        """Penultimate pooled features; the desk-FID feature space."""
        with torch.no_grad():
            x = as_tensor(np.asarray(images, dtype=np.float32)).permute(0, 3, 1, 2)
            feats = self.net.trunk(x)
        return feats.numpy()

    def save(self, out_dir: str | Path) -> Path:
        return save_checkpoint(out_dir, "oracle", self.profile,
                               self.net.state_dict(), extra=self.manifest)

    @staticmethod
    def load(ckpt_dir: str | Path) -> "AttributeOracle":
        manifest, state = load_checkpoint(ckpt_dir, expected_kind="oracle")
        profile = DatasetProfile.from_jsonable(manifest["profile"])
        net = _ConvTrunk(len(profile.attribute_names), pool="avgmax")
        net.load_state_dict(state)
        return AttributeOracle(net=net, profile=profile, manifest=manifest)


@dataclass(frozen=True)
class OracleTrainConfig:
    epochs: int = 18
    batch_size: int = 32
    learning_rate: float = 1.5e-3
    seed: int = 0


def train_attribute_oracle(
    dataset: SceneDataset,
    config: OracleTrainConfig = OracleTrainConfig(),
    out_dir: str | Path | None = None,
) -> AttributeOracle:
    if not dataset.attributes_available:
        raise DatasetError("dataset has no attribute annotations")
    profile = dataset.profile
    train = dataset.load_arrays(dataset.train_indices or range(len(dataset)))
    val = dataset.load_arrays(dataset.val_indices or range(len(dataset)))

    torch.manual_seed(config.seed)
    net = _ConvTrunk(len(profile.attribute_names), pool="avgmax")
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    rng = np.random.Generator(np.random.PCG64(np.uint64(config.seed)))

    history = []
    for epoch in range(config.epochs):
        losses = []
        for idx in _epoch_batches(len(train["indices"]), config.batch_size, rng):
            x = torch.from_numpy(train["images"][idx]).permute(0, 3, 1, 2)
            y = torch.from_numpy(train["attributes"][idx])
            loss = F.binary_cross_entropy_with_logits(net(x), y)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.detach().item())
        history.append({"epoch": epoch, "loss": float(np.mean(losses))})

    net.eval()
    with torch.no_grad():
        logits = net(as_tensor(val["images"]).permute(0, 3, 1, 2))
        pred = (torch.sigmoid(logits) > ATTRIBUTE_THRESHOLD).numpy()
    per_attr = (pred == (val["attributes"] > 0.5)).mean(axis=0)
    manifest = {
        "seed": config.seed,
        "trained": True,
        "history": history,
        "val_attribute_accuracy": [float(a) for a in per_attr],
    }
    oracle = AttributeOracle(net=net, profile=profile, manifest=manifest)
    if out_dir is not None:
        oracle.save(out_dir)
    return oracle


def attributes_changed(
    query_images: np.ndarray,
    explanation_images: np.ndarray,
    oracle: AttributeOracle,
    fingerprint: str = "",
) -> MetricReport:
    """Mean Hamming distance between thresholded attribute vectors."""
    if not oracle.trained:
        raise ConfigError("attribute oracle has not been trained")
    q = oracle.attribute_probs(np.asarray(query_images)) > ATTRIBUTE_THRESHOLD
    e = oracle.attribute_probs(np.asarray(explanation_images)) > ATTRIBUTE_THRESHOLD
    if q.shape != e.shape:
        raise ShapeError("query and explanation sets differ in size")
    value = float(np.mean(np.sum(q != e, axis=1)))
    return MetricReport("attributes_changed", value, q.shape[0], fingerprint)


# --------------------------------------------------------------------------
# Per-class impact table
# --------------------------------------------------------------------------


@dataclass
class ImpactTable:
    class_names: tuple[str, ...]
    mean_norms: dict          # model -> class name -> mean ||delta_z_c||
    relative: dict            # model -> class name -> mean / cross-model mean
    ranked: dict              # model -> class names, most impactful first
    excluded: list            # classes never present (or never moved by anyone)

    def most_impactful(self, model: str, k: int = 3) -> list[str]:
        return self.ranked[model][:k]

    def least_impactful(self, model: str, k: int = 3) -> list[str]:
        return self.ranked[model][-k:][::-1]

    def to_jsonable(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "mean_norms": self.mean_norms,
            "relative": self.relative,
            "ranked": self.ranked,
            "excluded": self.excluded,
        }


def impact_table(
    results_by_model: dict[str, Sequence[CounterfactualResult]],
    profile: DatasetProfile,
) -> ImpactTable:
    """Relative per-class impact: each model's mean ||delta_z_c|| divided by
    the cross-model mean for that class.  By construction the relative values
    for one class average to 1 across models."""
    if len(results_by_model) < 2:
        raise ValueError("impact_table needs at least two models")
    names = profile.class_names
    mean_norms: dict[str, dict[str, float]] = {}
    for model, results in results_by_model.items():
        if not results:
            raise ValueError(f"model {model} has no results")
        sums = np.zeros(profile.num_classes)
        counts = np.zeros(profile.num_classes)
        for r in results:
            for c in r.query_codes.present_classes:
                sums[c - 1] += r.delta_norms[c - 1]
                counts[c - 1] += 1
        mean_norms[model] = {
            names[i]: (float(sums[i] / counts[i]) if counts[i] else float("nan"))
            for i in range(profile.num_classes)
        }

    excluded = []
    relative: dict[str, dict[str, float]] = {m: {} for m in mean_norms}
    models = list(mean_norms)
    for i, cls in enumerate(names):
        per_model = [mean_norms[m][cls] for m in models]
        if any(np.isnan(v) for v in per_model):
            excluded.append(cls)
            continue
        denom = float(np.mean(per_model))
        if denom <= 0:
            excluded.append(cls)
            continue
        for m in models:
            relative[m][cls] = mean_norms[m][cls] / denom

    ranked = {
        m: sorted(relative[m], key=lambda cls: relative[m][cls], reverse=True)
        for m in models
    }
    return ImpactTable(
        class_names=names,
        mean_norms=mean_norms,
        relative=relative,
        ranked=ranked,
        excluded=excluded,
    )


# --------------------------------------------------------------------------
# Protocol runners
# --------------------------------------------------------------------------


def _dataset_images(dataset: SceneDataset, indices: Sequence[int]) -> np.ndarray:
    return np.stack([dataset.image(i).pixels for i in indices])


def _dataset_masks(dataset: SceneDataset, indices: Sequence[int]) -> np.ndarray:
    return np.stack([dataset.mask(i).labels for i in indices])


def _cf_images(results: Sequence[CounterfactualResult]) -> np.ndarray:
    return np.stack([r.counterfactual_image.pixels for r in results])


def mean_total_displacement(results: Sequence[CounterfactualResult]) -> float:
    return float(np.mean([r.total_displacement_sq for r in results]))


def reconstruction_report(
    stack: SemanticStack,
    dataset: SceneDataset,
    indices: Sequence[int],
    embedder: IdentityEmbedder,
    oracle: Optional[AttributeOracle],
) -> dict[str, MetricReport]:
    """Quality of G(S, E_z(x, S)) against the queries themselves.

    These numbers upper-bound what any counterfactual run can achieve on the
    same set, since the optimization starts from the reconstruction.
    """
    queries = _dataset_images(dataset, indices)
    labels = stack.segmenter.segment_batch(queries)
    codes = stack.encoder.encode_batch(queries, labels)
    recons = stack.generator.generate_batch(labels, codes)
    fp = config_fingerprint({"op": "reconstruction", "n": len(indices)})
    reports = {
        "identity_preservation": identity_preservation(queries, recons, embedder, fp),
        "reconstruction_mae": MetricReport(
            "reconstruction_mae", float(np.mean(np.abs(recons - queries))), len(indices), fp
        ),
    }
    if oracle is not None and oracle.trained:
        reports["desk_fid"] = desk_fid_images(recons, queries, oracle, fp)
        if dataset.attributes_available:
            reports["attributes_changed"] = attributes_changed(queries, recons, oracle, fp)
    return reports


def ablation_suite(
    stack: SemanticStack,
    model: DecisionModel,
    dataset: SceneDataset,
    indices: Sequence[int],
    config: OptimizerConfig,
    embedder: IdentityEmbedder,
    oracle: Optional[AttributeOracle],
    batch_size: int = 50,
) -> dict:
    """Three conditions: the full pipeline, lambda=0, and ground-truth masks.

    Returns per-condition metric reports plus the raw results (the full
    condition must be bit-identical to a standalone sweep with the same
    seed/batch size, which the tests assert).
    """
    queries = _dataset_images(dataset, indices)
    gt_masks = _dataset_masks(dataset, indices)
    conditions = {
        "full": dict(config=config, gt_masks=None),
        "no_distance": dict(config=replace(config, lambda_weight=0.0), gt_masks=None),
        "gt_masks": dict(config=config, gt_masks=gt_masks),
    }
    out: dict[str, dict] = {}
    for name, kw in conditions.items():
        results = run_counterfactual_batch(
            stack, model, queries, kw["config"], gt_masks=kw["gt_masks"], batch_size=batch_size
        )
        fp = config_fingerprint({"op": "ablation", "condition": name, "n": len(indices),
                                 "optimizer": kw["config"].to_jsonable(), "batch": batch_size})
        cf = _cf_images(results)
        reports = {
            "success_rate": success_rate(results, fp),
            "identity_preservation": identity_preservation(queries, cf, embedder, fp),
            "mean_displacement_sq": MetricReport(
                "mean_displacement_sq", mean_total_displacement(results), len(results), fp
            ),
        }
        if oracle is not None and oracle.trained:
            reports["desk_fid"] = desk_fid_images(cf, queries, oracle, fp)
        out[name] = {"reports": reports, "results": results}
    return out


def lambda_sweep(
    stack: SemanticStack,
    model: DecisionModel,
    dataset: SceneDataset,
    indices: Sequence[int],
    lambdas: Sequence[float],
    config: OptimizerConfig,
    embedder: Optional[IdentityEmbedder] = None,
    batch_size: int = 50,
) -> dict[float, dict[str, MetricReport]]:
    """Success / displacement / identity preservation per lambda, on one query set."""
    queries = _dataset_images(dataset, indices)
    out: dict[float, dict[str, MetricReport]] = {}
    for lam in lambdas:
        cfg = replace(config, lambda_weight=float(lam))
        results = run_counterfactual_batch(stack, model, queries, cfg, batch_size=batch_size)
        fp = config_fingerprint({"op": "lambda_sweep", "lambda": float(lam), "n": len(indices)})
        reports = {
            "success_rate": success_rate(results, fp),
            "mean_displacement_sq": MetricReport(
                "mean_displacement_sq", mean_total_displacement(results), len(results), fp
            ),
        }
        if embedder is not None and embedder.trained:
            reports["identity_preservation"] = identity_preservation(
                queries, _cf_images(results), embedder, fp
            )
        out[float(lam)] = reports
    return out


# --------------------------------------------------------------------------
# Report rendering
# --------------------------------------------------------------------------


def format_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Plain-text table with aligned columns."""
    cells = [[str(h) for h in headers]] + [
        [f"{v:.4f}" if isinstance(v, float) else str(v) for v in row] for row in rows
    ]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
        if i == 0:
            lines.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
    return "\n".join(lines)


def save_reports(
    out_dir: str | Path,
    name: str,
    reports: dict[str, MetricReport],
    per_item: Optional[list[dict]] = None,
    table: Optional[str] = None,
) -> Path:
    """Persist a metric bundle as JSON (+ optional text table and CSV breakdown)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {key: rep.to_jsonable() for key, rep in reports.items()}
    (out / f"{name}.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    if table is not None:
        (out / f"{name}.txt").write_text(table + "\n")
    if per_item:
        fields = sorted({k for row in per_item for k in row})
        with open(out / f"{name}.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(per_item)
    return out
