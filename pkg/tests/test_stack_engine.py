"""Engine behavior against the trained desk stack."""

import numpy as np
import pytest

from steexlab.engine import (
    generate_counterfactual,
    load_result_dir,
    region_targeted_sweep,
    result_digest,
    run_counterfactual_batch,
    save_result_dir,
)
from steexlab.synthetic import CLASS_LIGHT, CLASS_OBSTACLE, CLASS_SIGN
from steexlab.types import CounterfactualRequest, OptimizerConfig, RegionTargetSpec

pytestmark = pytest.mark.stack

FAST = OptimizerConfig(num_steps=25)


def _request(desk, index=None, steps=25, targets=None, counter=None):
    ds = desk.dataset
    index = index if index is not None else ds.val_indices[0]
    profile = desk.stack.profile
    return CounterfactualRequest(
        query_image=ds.image(index),
        target_regions=targets or RegionTargetSpec.all_classes(profile.num_classes),
        optimizer=OptimizerConfig(num_steps=steps),
        counter_class=counter,
        model_id="full",
    )


class TestGenerateCounterfactual:
    def test_end_to_end_single_query(self, desk):
        request = _request(desk, steps=100)
        result = generate_counterfactual(desk.stack, desk.classifiers["full"], request)
        assert len(result.loss_trajectory) == 100
        assert len(result.prob_trajectory) == 100
        assert result.success
        assert result.final_counter_prob > 0.5
        assert result.first_flip_step is not None

    def test_mask_computed_once_and_reused_by_identity(self, desk, monkeypatch):
        stack = desk.stack
        segment_calls = {"n": 0}
        real_segment = stack.segmenter.segment

        def counting_segment(image):
            segment_calls["n"] += 1
            return real_segment(image)

        onehot_ids = []
        real_generate_t = stack.generator.generate_t

        def spying_generate_t(onehot, codes):
            onehot_ids.append(id(onehot))
            return real_generate_t(onehot, codes)

        monkeypatch.setattr(stack.segmenter, "segment", counting_segment)
        monkeypatch.setattr(stack.generator, "generate_t", spying_generate_t)
        generate_counterfactual(stack, desk.classifiers["full"], _request(desk, steps=12))
        assert segment_calls["n"] == 1
        # one render per step plus the final render, all with the same mask object
        assert len(onehot_ids) == 13
        assert len(set(onehot_ids)) == 1

    def test_targeting_invariance_bit_exact(self, desk):
        request = _request(desk, steps=30, targets=RegionTargetSpec.of(CLASS_LIGHT))
        result = generate_counterfactual(desk.stack, desk.classifiers["full"], request)
        for c in range(1, 9):
            if c == CLASS_LIGHT:
                continue
            assert np.array_equal(result.final_codes.codes[c - 1],
                                  result.query_codes.codes[c - 1])
            assert result.delta_norms[c - 1] == 0.0

    def test_empty_target_set_returns_reconstruction(self, desk):
        request = _request(desk, steps=10, targets=RegionTargetSpec.none())
        result = generate_counterfactual(desk.stack, desk.classifiers["full"], request)
        assert np.array_equal(result.final_codes.codes, result.query_codes.codes)
        assert np.array_equal(result.counterfactual_image.pixels,
                              result.reconstruction_image.pixels)

    def test_absent_class_targeting_is_accepted_with_zero_freedom(self, desk):
        ds = desk.dataset
        index = next(i for i in ds.val_indices
                     if CLASS_SIGN not in ds.mask(i).present_classes())
        request = _request(desk, index=index, steps=10,
                           targets=RegionTargetSpec.of(CLASS_SIGN))
        result = generate_counterfactual(desk.stack, desk.classifiers["full"], request)
        assert np.all(result.delta_norms == 0.0)
        assert np.array_equal(result.counterfactual_image.pixels,
                              result.reconstruction_image.pixels)

    def test_ground_truth_mask_override(self, desk):
        ds = desk.dataset
        index = ds.val_indices[1]
        request = _request(desk, index=index, steps=100)
        result = generate_counterfactual(
            desk.stack, desk.classifiers["full"], request, mask_override=ds.mask(index)
        )
        assert result.success

    def test_explicit_counter_class(self, desk):
        ds = desk.dataset
        index = ds.val_indices[2]
        probs = desk.classifiers["full"].predict(ds.image(index))
        counter = 1 if int(np.argmax(probs)) + 1 == 2 else 2
        request = _request(desk, index=index, steps=40, counter=counter)
        result = generate_counterfactual(desk.stack, desk.classifiers["full"], request)
        assert result.counter_class == counter


class TestRegionTargetedSweep:
    def test_each_spec_gets_independent_result(self, desk):
        specs = [
            RegionTargetSpec.of(CLASS_LIGHT),
            RegionTargetSpec.of(CLASS_OBSTACLE),
            RegionTargetSpec.of(CLASS_LIGHT, CLASS_OBSTACLE),
        ]
        request = _request(desk, steps=20)
        results = region_targeted_sweep(desk.stack, desk.classifiers["full"], request, specs)
        assert len(results) == 3
        for spec, result in zip(specs, results):
            assert result.target_regions == spec
            outside = [c for c in range(1, 9) if c not in spec.targeted_classes]
            assert all(result.delta_norms[c - 1] == 0.0 for c in outside)


class TestBatchRunner:
    def test_batched_sweep_matches_single_runs(self, desk):
        ds = desk.dataset
        idx = ds.val_indices[:6]
        images = np.stack([ds.image(i).pixels for i in idx])
        batched = run_counterfactual_batch(
            desk.stack, desk.classifiers["full"], images, FAST, batch_size=6
        )
        assert len(batched) == 6
        for r in batched:
            assert len(r.loss_trajectory) == FAST.num_steps

    def test_deterministic_across_runs(self, desk):
        ds = desk.dataset
        idx = ds.val_indices[:5]
        images = np.stack([ds.image(i).pixels for i in idx])
        a = run_counterfactual_batch(desk.stack, desk.classifiers["full"], images, FAST)
        b = run_counterfactual_batch(desk.stack, desk.classifiers["full"], images, FAST)
        assert [result_digest(r) for r in a] == [result_digest(r) for r in b]


class TestResultPersistence:
    def test_directory_round_trip(self, desk, tmp_path):
        request = _request(desk, steps=15)
        result = generate_counterfactual(desk.stack, desk.classifiers["full"], request)
        out = save_result_dir(result, tmp_path / "r", query_image=request.query_image)
        assert (out / "counterfactual.png").exists()
        assert (out / "trajectory.csv").exists()
        loaded = load_result_dir(out)
        assert loaded.success == result.success
        assert loaded.counter_class == result.counter_class
        assert np.allclose(loaded.delta_norms, result.delta_norms, atol=1e-12)
        assert np.allclose(loaded.final_codes.codes, result.final_codes.codes, atol=1e-6)
        assert loaded.loss_trajectory == result.loss_trajectory
        png_step = 2 / 255
        assert np.max(np.abs(loaded.counterfactual_image.pixels
                             - result.counterfactual_image.pixels)) <= png_step

    def test_trajectory_csv_has_step_rows(self, desk, tmp_path):
        import csv

        request = _request(desk, steps=8)
        result = generate_counterfactual(desk.stack, desk.classifiers["full"], request)
        out = save_result_dir(result, tmp_path / "r")
        with open(out / "trajectory.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8
        assert set(rows[0]) == {"step", "decision_loss", "distance_loss", "counter_prob"}
