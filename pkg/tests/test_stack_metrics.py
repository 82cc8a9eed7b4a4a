"""Perception-proxy quality and protocol behavior on the trained stack."""

import numpy as np
import pytest

from steexlab.engine import run_counterfactual_batch
from steexlab.evaluation import (
    attributes_changed,
    identity_preservation,
    reconstruction_report,
)
from steexlab.synthetic import (
    CLASS_LIGHT,
    CLASS_TREE,
    SceneSpec,
    render_scene,
)
from steexlab.types import OptimizerConfig, RegionTargetSpec

pytestmark = pytest.mark.stack

# Success collapses at this distance-loss weight (measured once on the desk
# stack: the sweep 3 -> 10 -> 30 crosses 0.5 between 3 and 30); frozen as a
# regression fixture.
LAMBDA_KNEE = 30.0


class TestIdentityEmbedder:
    def test_verification_accuracy(self, desk):
        assert desk.embedder.manifest["val_verification_accuracy"] >= 0.9

    def test_unrelated_scene_pairs_not_preserved(self, desk):
        ds = desk.dataset
        idx = ds.val_indices[:80]
        identities = [ds.identity(i) for i in idx]
        images = np.stack([ds.image(i).pixels for i in idx])
        shuffled = np.roll(np.arange(len(idx)), 7)
        keep = [k for k in range(len(idx)) if identities[k] != identities[shuffled[k]]]
        report = identity_preservation(images[keep], images[shuffled][keep], desk.embedder)
        assert report.value < 0.2

    def test_same_identity_renders_preserved(self, desk):
        ds = desk.dataset
        by_identity = {}
        for i in ds.val_indices:
            by_identity.setdefault(ds.identity(i), []).append(i)
        pairs = [(v[0], v[1]) for v in by_identity.values() if len(v) >= 2][:40]
        a = np.stack([ds.image(i).pixels for i, _ in pairs])
        b = np.stack([ds.image(j).pixels for _, j in pairs])
        report = identity_preservation(a, b, desk.embedder)
        assert report.value >= 0.9


class TestAttributeOracle:
    def test_attribute_accuracies(self, desk):
        accs = desk.oracle.manifest["val_attribute_accuracy"]
        assert float(np.mean(accs)) >= 0.95

    def test_single_attribute_flip_measures_about_one(self, desk):
        rng = np.random.default_rng(123)
        queries, flipped = [], []
        made = 0
        while made < 40:
            spec = SceneSpec(
                layout_seed=int(rng.integers(2**31)),
                style_seed=int(rng.integers(2**31)),
                identity=int(rng.integers(200)),
                light_green=bool(rng.integers(2)),
                obstacle_present=True,
                tree_present=True,
                sign_present=True,
                sky_light=bool(rng.integers(2)),
            )
            edited = SceneSpec(**{**spec.to_jsonable(), "sky_light": not spec.sky_light})
            img_a, _, _, attrs_a = render_scene(spec)
            img_b, _, _, attrs_b = render_scene(edited)
            if int(np.sum(attrs_a != attrs_b)) != 1:
                continue
            queries.append(img_a.pixels)
            flipped.append(img_b.pixels)
            made += 1
        report = attributes_changed(np.stack(queries), np.stack(flipped), desk.oracle)
        assert 0.5 <= report.value <= 1.5


class TestProtocolBehavior:
    def test_decisive_region_beats_distractor_region(self, desk):
        """Paired comparison: light-targeted flips succeed more often than
        tree-targeted ones on the same queries."""
        ds = desk.dataset
        idx = [i for i in ds.val_indices
               if {CLASS_LIGHT, CLASS_TREE} <= ds.mask(i).present_classes()][:60]
        images = np.stack([ds.image(i).pixels for i in idx])
        cfg = OptimizerConfig()
        light = run_counterfactual_batch(
            desk.stack, desk.classifiers["full"], images, cfg,
            targets=RegionTargetSpec.of(CLASS_LIGHT), batch_size=60,
        )
        tree = run_counterfactual_batch(
            desk.stack, desk.classifiers["full"], images, cfg,
            targets=RegionTargetSpec.of(CLASS_TREE), batch_size=60,
        )
        light_rate = float(np.mean([r.success for r in light]))
        tree_rate = float(np.mean([r.success for r in tree]))
        assert light_rate > tree_rate
        assert light_rate >= 0.75

    def test_large_lambda_collapses_success(self, desk):
        ds = desk.dataset
        idx = ds.val_indices[:16]
        images = np.stack([ds.image(i).pixels for i in idx])
        results = run_counterfactual_batch(
            desk.stack, desk.classifiers["full"], images,
            OptimizerConfig(lambda_weight=LAMBDA_KNEE), batch_size=16,
        )
        assert float(np.mean([r.success for r in results])) < 0.5

    def test_objective_decreases_on_most_queries(self, desk):
        """Adam is non-monotone per step, but the final total objective should
        not exceed the initial one on at least 95% of queries."""
        ds = desk.dataset
        idx = ds.val_indices[:60]
        images = np.stack([ds.image(i).pixels for i in idx])
        cfg = OptimizerConfig()
        results = run_counterfactual_batch(
            desk.stack, desk.classifiers["full"], images, cfg, batch_size=60
        )
        improved = 0
        for r in results:
            initial = r.loss_trajectory[0][0] + cfg.lambda_weight * r.loss_trajectory[0][1]
            final = -np.log(max(r.final_counter_prob, 1e-12)) \
                + cfg.lambda_weight * r.total_displacement_sq
            improved += int(final <= initial + 1e-9)
        assert improved / len(results) >= 0.95

    def test_reconstruction_report_keys(self, desk):
        reports = reconstruction_report(
            desk.stack, desk.dataset, desk.dataset.val_indices[:60],
            desk.embedder, desk.oracle,
        )
        assert {"identity_preservation", "reconstruction_mae", "desk_fid",
                "attributes_changed"} <= set(reports)
        assert reports["attributes_changed"].value <= 0.5
