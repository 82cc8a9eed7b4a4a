"""Shared fixtures: one desk-scale trained stack per test session.

Training the full stack takes ~20 minutes on two CPU cores, so the trained
artifacts are cached on disk (default `.desk_cache/v1` in the repo root,
override with STEEXLAB_TEST_CACHE) and reused across sessions.  Delete the
cache directory after changing dataset or training code.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import pytest

from steexlab.autoencoder import (
    AutoencoderTrainConfig,
    SegmenterModel,
    SegmenterTrainConfig,
    SemanticStack,
    load_autoencoder,
    train_autoencoder,
    train_segmenter,
)
from steexlab.classifiers import (
    ClassifierTrainConfig,
    DecisionModel,
    VisibilityRegion,
    train_classifier,
)
from steexlab.evaluation import (
    AttributeOracle,
    EmbedderTrainConfig,
    IdentityEmbedder,
    OracleTrainConfig,
    train_attribute_oracle,
    train_identity_embedder,
)
from steexlab.synthetic import SceneDataset, build_dataset

DATASET_COUNT = 2000
DATASET_SEED = 1234

VISIBILITIES = {
    "full": VisibilityRegion.full,
    "top": VisibilityRegion.top_band,
    "mid": VisibilityRegion.middle_rect,
    "bottom": VisibilityRegion.bottom_band,
}


def _cache_root() -> Path:
    default = Path(__file__).resolve().parent.parent / ".desk_cache"
    return Path(os.environ.get("STEEXLAB_TEST_CACHE", default)) / "v1"


@dataclass
class DeskStack:
    dataset: SceneDataset
    stack: SemanticStack
    classifiers: dict[str, DecisionModel]
    embedder: IdentityEmbedder
    oracle: AttributeOracle
    cache_dir: Path


def _build_or_load(cache: Path) -> DeskStack:
    cache.mkdir(parents=True, exist_ok=True)

    if (cache / "dataset" / "manifest.json").exists():
        dataset = SceneDataset.load(cache / "dataset")
    else:
        dataset = build_dataset(DATASET_COUNT, DATASET_SEED, cache / "dataset")

    if (cache / "seg" / "manifest.json").exists():
        segmenter = SegmenterModel.load(cache / "seg")
    else:
        segmenter = train_segmenter(dataset, SegmenterTrainConfig(seed=10), out_dir=cache / "seg")

    if (cache / "ae" / "manifest.json").exists():
        encoder, generator = load_autoencoder(cache / "ae")
    else:
        encoder, generator = train_autoencoder(
            dataset, AutoencoderTrainConfig(epochs=12, seed=11), out_dir=cache / "ae"
        )

    classifiers = {}
    for name, vis in VISIBILITIES.items():
        ckpt = cache / f"clf_{name}"
        if (ckpt / "manifest.json").exists():
            classifiers[name] = DecisionModel.load(ckpt)
        else:
            classifiers[name] = train_classifier(
                dataset,
                ClassifierTrainConfig(epochs=8, seed=20, visibility=vis()),
                out_dir=ckpt,
            )

    if (cache / "embedder" / "manifest.json").exists():
        embedder = IdentityEmbedder.load(cache / "embedder")
    else:
        embedder = train_identity_embedder(
            dataset, EmbedderTrainConfig(seed=30), out_dir=cache / "embedder"
        )

    if (cache / "oracle" / "manifest.json").exists():
        oracle = AttributeOracle.load(cache / "oracle")
    else:
        oracle = train_attribute_oracle(
            dataset, OracleTrainConfig(seed=40), out_dir=cache / "oracle"
        )

    stack = SemanticStack(segmenter=segmenter, encoder=encoder, generator=generator)
    return DeskStack(
        dataset=dataset,
        stack=stack,
        classifiers=classifiers,
        embedder=embedder,
        oracle=oracle,
        cache_dir=cache,
    )


@pytest.fixture(scope="session")
def desk() -> DeskStack:
    return _build_or_load(_cache_root())


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory) -> SceneDataset:
    """A quick dataset for training-behavior tests that retrain from scratch."""
    return build_dataset(120, seed=77, out_dir=tmp_path_factory.mktemp("smallds") / "d")
