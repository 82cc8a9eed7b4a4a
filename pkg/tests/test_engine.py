import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from steexlab.engine import (
    PROB_FLOOR,
    decision_loss,
    distance_loss,
    optimize_style_codes,
    total_objective,
)
from steexlab.errors import NumericalFailureError, ShapeError
from steexlab.types import OptimizerConfig, RegionTargetSpec, StyleCodeSet

from toyproblem import (
    TOY_B,
    TOY_LAMBDA,
    TOY_OPTIMUM,
    TOY_OPTIMUM_OBJECTIVE,
    TOY_W,
    TOY_Z_INIT,
    toy_closed_form,
    toy_gd_oracle,
    toy_render,
    toy_scores,
)


class TestDecisionLoss:
    def test_perfect_confidence_is_zero(self):
        assert decision_loss(np.array([0.0, 1.0]), 2) == 0.0

    def test_half_confidence_is_ln2(self):
        assert decision_loss(np.array([0.5, 0.5]), 1) == pytest.approx(math.log(2), abs=1e-9)

    def test_clamp_engages_below_floor(self):
        assert decision_loss(np.array([1 - 1e-13, 1e-13]), 2) == pytest.approx(
            -math.log(PROB_FLOOR), abs=1e-9
        )


def _codes(arr, present=None):
    arr = np.asarray(arr, dtype=np.float32)
    present = present if present is not None else frozenset(range(1, arr.shape[0] + 1))
    return StyleCodeSet(codes=arr, present_classes=present)


class TestDistanceLoss:
    def test_zero_displacement(self):
        z = _codes(np.random.default_rng(0).normal(size=(4, 3)))
        assert distance_loss(z, z) == 0.0

    def test_hand_computed(self):
        z0 = _codes([[0.0, 0.0], [0.0, 0.0]])
        z1 = _codes([[3.0, 4.0], [0.0, 1.0]])
        assert distance_loss(z0, z1) == pytest.approx(26.0, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            distance_loss(_codes(np.zeros((2, 2))), _codes(np.zeros((3, 2))))

    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(min_value=1, max_value=5),
        st.integers(min_value=1, max_value=5),
        st.integers(min_value=0, max_value=2**32 - 1),
    )
    def test_masked_delta_equals_targeted_sum(self, n, d, seed):
        """Full-class sum equals the sum restricted to C when deltas are masked to C."""
        rng = np.random.default_rng(seed)
        base = rng.normal(size=(n, d)).astype(np.float32)
        z0 = _codes(base)
        targets = frozenset(int(c) for c in rng.choice(n, size=rng.integers(0, n + 1), replace=False) + 1)
        delta = rng.normal(size=(n, d)).astype(np.float32)
        mask = np.zeros((n, 1), dtype=np.float32)
        for c in targets:
            mask[c - 1] = 1.0
        z1 = z0.with_codes(base + delta * mask)

        full_sum = distance_loss(z0, z1)
        loop_sum = sum(
            float(np.sum((z1.codes[c - 1] - z0.codes[c - 1]) ** 2)) for c in targets
        )
        assert full_sum == pytest.approx(loop_sum, rel=1e-5, abs=1e-5)


class TestTotalObjective:
    def test_matches_closed_form_to_1e8(self):
        z_pt = np.array([[-0.3], [0.2]], dtype=np.float64)
        value, grad = total_objective(
            toy_render, toy_scores, TOY_Z_INIT.astype(np.float64), z_pt,
            counter_class=2, lambda_weight=TOY_LAMBDA,
            target_mask=np.array([True, True]),
        )
        want_value, want_grad = toy_closed_form(z_pt.ravel())
        assert value == pytest.approx(want_value, abs=1e-8)
        assert np.max(np.abs(grad.ravel() - want_grad)) < 1e-8

    def test_non_targeted_gradient_exactly_zero(self):
        z_pt = np.array([[-0.1], [0.3]], dtype=np.float64)
        _, grad = total_objective(
            toy_render, toy_scores, TOY_Z_INIT.astype(np.float64), z_pt,
            counter_class=2, lambda_weight=TOY_LAMBDA,
            target_mask=np.array([False, True]),
        )
        assert np.all(grad[0] == 0.0)
        assert np.any(grad[1] != 0.0)


def _run_toy(target_mask=(True, True), steps=100, lr=0.01, lam=TOY_LAMBDA):
    return optimize_style_codes(
        toy_render,
        toy_scores,
        TOY_Z_INIT[None].astype(np.float64),
        np.array([2]),
        np.array([list(target_mask)]),
        OptimizerConfig(lambda_weight=lam, learning_rate=lr, num_steps=steps, seed=0),
    )


class TestOptimizeStyleCodes:
    def test_trajectory_has_exactly_num_steps_entries(self):
        run = _run_toy(steps=37)
        assert run.decision_trajectory.shape == (1, 37)
        assert run.prob_trajectory.shape == (1, 37)

    def test_gd_oracle_reproduces_frozen_optimum(self):
        z_star = toy_gd_oracle()
        assert np.max(np.abs(z_star - TOY_OPTIMUM)) < 1e-7
        assert toy_closed_form(z_star)[0] == pytest.approx(TOY_OPTIMUM_OBJECTIVE, abs=1e-10)

    def test_engine_reaches_oracle_optimum(self):
        run = _run_toy(steps=2000, lr=0.01)
        z_final = run.final_codes[0].ravel()
        assert np.linalg.norm(z_final - TOY_OPTIMUM) < 1e-3
        assert toy_closed_form(z_final)[0] - TOY_OPTIMUM_OBJECTIVE < 1e-6

    def test_targeting_invariance_bit_exact(self):
        run = _run_toy(target_mask=(False, True), steps=300)
        assert run.final_codes[0, 0, 0] == TOY_Z_INIT[0, 0]
        assert run.final_codes[0, 1, 0] != TOY_Z_INIT[1, 0]

    def test_empty_target_set_keeps_codes_and_probes_reconstruction(self):
        run = _run_toy(target_mask=(False, False), steps=50)
        assert np.array_equal(run.final_codes[0], TOY_Z_INIT)
        # initial P(class 2) at z_init: sigmoid(1.7*-0.8 - 1.1*0.6 + 0.4) < 0.5
        assert run.final_probs[0, 1] < 0.5

    def test_first_flip_step_recorded(self):
        run = _run_toy(steps=2000, lr=0.01)
        flips = np.nonzero(run.prob_trajectory[0] > 0.5)[0]
        assert run.first_flip_step(0) == flips[0] + 1

    def test_batch_items_are_independent(self):
        """Batched optimization must equal per-item runs exactly (elementwise Adam)."""
        z0 = np.stack([TOY_Z_INIT, TOY_Z_INIT + 0.25])
        run_batch = optimize_style_codes(
            toy_render, toy_scores, z0.astype(np.float64), np.array([2, 2]),
            np.array([[True, True], [True, True]]),
            OptimizerConfig(num_steps=50),
        )
        for i in range(2):
            run_one = optimize_style_codes(
                toy_render, toy_scores, z0[i][None].astype(np.float64), np.array([2]),
                np.array([[True, True]]),
                OptimizerConfig(num_steps=50),
            )
            assert np.array_equal(run_batch.final_codes[i], run_one.final_codes[0])

    def test_numerical_failure_carries_step_and_partial_trajectory(self):
        calls = {"n": 0}

        def scores_poisoned(x):
            calls["n"] += 1
            probs, log_probs = toy_scores(x)
            if calls["n"] >= 3:
                return probs * torch.nan, log_probs * torch.nan
            return probs, log_probs

        with pytest.raises(NumericalFailureError) as err:
            optimize_style_codes(
                toy_render, scores_poisoned, TOY_Z_INIT[None].astype(np.float64),
                np.array([2]), np.array([[True, True]]), OptimizerConfig(num_steps=50),
            )
        assert err.value.step == 3
        assert len(err.value.trajectory[0]) == 2

    def test_determinism_same_inputs_bit_identical(self):
        a = _run_toy(steps=200)
        b = _run_toy(steps=200)
        assert np.array_equal(a.final_codes, b.final_codes)
        assert np.array_equal(a.prob_trajectory, b.prob_trajectory)
