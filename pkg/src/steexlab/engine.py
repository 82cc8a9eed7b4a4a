"""Counterfactual search: Adam on per-region style codes under a frozen stack.

The optimization state is a single code tensor plus the optimizer's moment
buffers.  Codes start at the query's own codes; each step renders the
current codes under the *one* precomputed layout, scores the counter class,
and updates only the targeted rows (non-targeted gradients are zeroed
before the update, which leaves those codes bit-identical forever).  The
loop always runs the configured number of steps; the first step at which
the decision flipped is recorded for diagnostics only.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .autoencoder import SemanticStack, as_tensor, masks_to_onehot
from .classifiers import DecisionModel
from .errors import CounterClassError, NumericalFailureError, ShapeError
from .imaging import read_image_png, write_image_png
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

#: Probability floor inside the decision loss; caps the loss at -log(1e-12).
PROB_FLOOR = 1e-12
#: The corresponding cap on reported decision-loss values.
DECISION_LOSS_CAP = -float(np.log(PROB_FLOOR))

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def decision_loss(model_output: np.ndarray, counter_class: int) -> float:
    """Negative log-likelihood of the counter class, clamped below 1e-12."""
    probs = np.asarray(model_output, dtype=np.float64)
    p = max(float(probs[counter_class - 1]), PROB_FLOOR)
    return -float(np.log(p))


def distance_loss(
    original: StyleCodeSet,
    current: StyleCodeSet,
    targets: Optional[RegionTargetSpec] = None,
) -> float:
    """Sum over all classes of squared L2 code displacement.

    The sum runs over every class; under targeting the non-targeted terms
    are zero, so restricting the sum to the targeted set gives the same
    value (asserted as a property in the tests rather than special-cased).
    """
    if original.codes.shape != current.codes.shape:
        raise ShapeError("code sets have different shapes")
    if targets is not None:
        targets.validate_for(original.num_classes)
    diff = current.codes.astype(np.float64) - original.codes.astype(np.float64)
    return float(np.sum(diff * diff))


def as_score_fn(predict_fn: Callable[[torch.Tensor], torch.Tensor]):
    """Adapt a probabilities-only model to the (probs, log_probs) contract.

    Prefer a native log-probability path (e.g. log-softmax over logits):
    deriving logs from probabilities reintroduces the underflow the clamp
    guards against, and gradients die wherever the clamp engages.
    """

    def score_fn(images: torch.Tensor):
        probs = predict_fn(images)
        return probs, torch.log(probs.clamp(min=PROB_FLOOR))

    return score_fn


@dataclass
class EngineRun:
    """Raw per-item outputs of one batched optimization."""

    final_codes: np.ndarray        # (B, N, D)
    final_images: np.ndarray       # (B, H, W, C) in [-1, 1]
    final_probs: np.ndarray        # (B, K)
    decision_trajectory: np.ndarray  # (B, steps)
    distance_trajectory: np.ndarray  # (B, steps)
    prob_trajectory: np.ndarray      # (B, steps)

    def first_flip_step(self, item: int) -> Optional[int]:
        flipped = np.nonzero(self.prob_trajectory[item] > 0.5)[0]
        return int(flipped[0]) + 1 if flipped.size else None


def optimize_style_codes(
    render_fn: Callable[[torch.Tensor], torch.Tensor],
    score_fn: Callable[[torch.Tensor], tuple[torch.Tensor, torch.Tensor]],
    initial_codes: np.ndarray,
    counter_classes: np.ndarray,
    target_masks: np.ndarray,
    config: OptimizerConfig,
) -> EngineRun:
    """Run the fixed-length Adam loop on a batch of independent queries.

    ``render_fn`` maps codes (B, N, D) to images (B, C, H, W); ``score_fn``
    maps images to (probabilities, log-probabilities).  ``target_masks`` is
    (B, N) boolean; rows outside it never change.

    Descent uses the raw negative log-likelihood (finite and informative
    even where the probability underflows); the *recorded* decision losses
    are capped at -log(1e-12) per the decision-loss contract.  The two
    objectives coincide wherever the cap is inactive, and the capped one is
    constant-flat where it is, so every useful optimum is shared.  Raises
    NumericalFailureError carrying the partial trajectory if the objective
    stops being finite.
    """
    z0 = as_tensor(np.asarray(initial_codes)).detach().clone()
    z = z0.clone().requires_grad_(True)
    optimizer = torch.optim.Adam([z], lr=config.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS)
    tmask = as_tensor(np.asarray(target_masks, dtype=bool)).to(z.dtype).unsqueeze(-1)
    counter_idx = torch.as_tensor(np.asarray(counter_classes, dtype=np.int64) - 1)

    dec_hist, dist_hist, p_hist = [], [], []
    for step in range(1, config.num_steps + 1):
        optimizer.zero_grad()
        images = render_fn(z)
        probs, log_probs = score_fn(images)
        p = probs.gather(1, counter_idx.view(-1, 1)).squeeze(1)
        nll = -log_probs.gather(1, counter_idx.view(-1, 1)).squeeze(1)
        dist = ((z - z0) ** 2).sum(dim=tuple(range(1, z.dim())))
        objective = (nll + config.lambda_weight * dist).sum()
        if not torch.isfinite(objective):
            partial = []
            if dec_hist:
                dec_arr, dist_arr = np.stack(dec_hist, axis=1), np.stack(dist_hist, axis=1)
                partial = [
                    list(zip(dec_arr[i].tolist(), dist_arr[i].tolist()))
                    for i in range(dec_arr.shape[0])
                ]
            raise NumericalFailureError(
                f"non-finite objective at step {step}", step=step, trajectory=partial
            )
        objective.backward()
        with torch.no_grad():
            z.grad.mul_(tmask)
        optimizer.step()
        dec_hist.append(nll.detach().clamp(max=DECISION_LOSS_CAP).to(torch.float64).numpy())
        dist_hist.append(dist.detach().to(torch.float64).numpy())
        p_hist.append(p.detach().to(torch.float64).numpy())

    with torch.no_grad():
        final_images = render_fn(z.detach()).detach()
        final_probs = score_fn(final_images)[0].detach()

    return EngineRun(
        final_codes=z.detach().numpy(),
        final_images=final_images.permute(0, 2, 3, 1).numpy()
        if final_images.dim() == 4
        else final_images.numpy(),
        final_probs=final_probs.numpy(),
        decision_trajectory=np.stack(dec_hist, axis=1),
        distance_trajectory=np.stack(dist_hist, axis=1),
        prob_trajectory=np.stack(p_hist, axis=1),
    )


def total_objective(
    render_fn: Callable[[torch.Tensor], torch.Tensor],
    score_fn: Callable[[torch.Tensor], tuple[torch.Tensor, torch.Tensor]],
    initial_codes: np.ndarray,
    codes: np.ndarray,
    counter_class: int,
    lambda_weight: float,
    target_mask: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Objective value and its gradient w.r.t. the codes at one point.

    The value applies the decision-loss cap; the gradient is that of the
    uncapped objective (what the optimizer descends).  Gradient rows of
    non-targeted classes are exactly zero.  Dtype follows the input arrays,
    so double-precision checks are possible.
    """
    z0 = as_tensor(np.asarray(initial_codes))
    z = as_tensor(np.asarray(codes)).requires_grad_(True)
    _, log_probs = score_fn(render_fn(z.unsqueeze(0)))
    nll = -log_probs[0, counter_class - 1]
    dist = ((z - z0) ** 2).sum()
    objective = nll + lambda_weight * dist
    if not torch.isfinite(objective):
        raise NumericalFailureError("non-finite objective", step=0)
    objective.backward()
    grad = z.grad.numpy().copy()
    grad[~np.asarray(target_mask, dtype=bool)] = 0.0
    value = float(min(nll.detach().item(), DECISION_LOSS_CAP) + lambda_weight * dist.detach().item())
    return value, grad


def generate_counterfactual(
    stack: SemanticStack,
    model: DecisionModel,
    request: CounterfactualRequest,
    mask_override: Optional[SemanticMask] = None,
) -> CounterfactualResult:
    """End-to-end counterfactual for one query.

    The layout is computed once (or taken from ``mask_override``, e.g. a
    ground-truth mask) and reused at every step.  Runs exactly
    ``request.optimizer.num_steps`` updates; success means the final image's
    counter-class probability exceeds 0.5.
    """
    profile = stack.profile
    image = request.query_image
    if image.height != profile.height or image.width != profile.width:
        raise ShapeError("query image does not match the stack profile")
    if model.profile.height != profile.height or model.profile.width != profile.width:
        raise ShapeError("decision model and stack have incompatible profiles")
    request.target_regions.validate_for(profile.num_classes)

    probs0 = model.predict(image)
    counter = resolve_counter_class(probs0, request)
    mask = mask_override if mask_override is not None else stack.segment(image)
    codes0 = stack.encode(image, mask)
    reconstruction = stack.generate(mask, codes0)

    # One onehot tensor shared by every step: the layout is fixed.
    onehot = masks_to_onehot(as_tensor(mask.labels[None]), profile.num_classes)
    render_fn = lambda z: stack.generator.generate_t(onehot, z)  # noqa: E731

    run = optimize_style_codes(
        render_fn=render_fn,
        score_fn=model.scores_t,
        initial_codes=codes0.codes[None],
        counter_classes=np.array([counter]),
        target_masks=request.target_regions.row_mask(profile.num_classes)[None],
        config=request.optimizer,
    )
    return _assemble_result(run, 0, codes0, reconstruction, counter, request)


def _assemble_result(
    run: EngineRun,
    item: int,
    codes0: StyleCodeSet,
    reconstruction: ImageTensor,
    counter: int,
    request: CounterfactualRequest,
) -> CounterfactualResult:
    final_codes = codes0.with_codes(run.final_codes[item])
    final_p = float(run.final_probs[item, counter - 1])
    return CounterfactualResult(
        counterfactual_image=ImageTensor(pixels=run.final_images[item]),
        reconstruction_image=reconstruction,
        final_codes=final_codes,
        query_codes=codes0,
        delta_norms=final_codes.delta_norms(codes0),
        loss_trajectory=tuple(
            zip(run.decision_trajectory[item].tolist(), run.distance_trajectory[item].tolist())
        ),
        prob_trajectory=tuple(run.prob_trajectory[item].tolist()),
        success=bool(final_p > 0.5),
        counter_class=counter,
        final_counter_prob=final_p,
        first_flip_step=run.first_flip_step(item),
        model_id=request.model_id,
        optimizer=request.optimizer,
        target_regions=request.target_regions,
    )


def region_targeted_sweep(
    stack: SemanticStack,
    model: DecisionModel,
    request: CounterfactualRequest,
    region_sets: Sequence[RegionTargetSpec],
) -> list[CounterfactualResult]:
    """One independent search per region set, each starting from the query codes."""
    return [
        generate_counterfactual(stack, model, replace(request, target_regions=spec))
        for spec in region_sets
    ]


def run_counterfactual_batch(
    stack: SemanticStack,
    model: DecisionModel,
    images: np.ndarray,
    config: OptimizerConfig,
    targets: Optional[RegionTargetSpec] = None,
    gt_masks: Optional[np.ndarray] = None,
    batch_size: int = 50,
    model_id: str = "",
) -> list[CounterfactualResult]:
    """Vectorized auto-flip sweep over many queries.

    Functionally the per-query pipeline, batched for CPU throughput; results
    are deterministic for a fixed batch size.  ``gt_masks`` replaces the
    segmenter when given (the ground-truth-mask evaluation condition).
    """
    profile = stack.profile
    images = np.asarray(images, dtype=np.float32)
    n = images.shape[0]
    targets = targets if targets is not None else RegionTargetSpec.all_classes(profile.num_classes)
    targets.validate_for(profile.num_classes)
    results: list[CounterfactualResult] = []

    for start in range(0, n, batch_size):
        chunk = images[start : start + batch_size]
        probs0 = model.predict_batch(chunk)
        if probs0.shape[1] != 2:
            raise CounterClassError("batched auto-flip requires a binary model")
        predicted = np.argmax(probs0, axis=1) + 1
        counters = np.where(predicted == 1, 2, 1)

        if gt_masks is not None:
            labels = np.asarray(gt_masks[start : start + batch_size], dtype=np.uint8)
        else:
            labels = stack.segmenter.segment_batch(chunk)
        codes0_arr = stack.encoder.encode_batch(chunk, labels)
        recons = stack.generator.generate_batch(labels, codes0_arr)

        onehot = masks_to_onehot(as_tensor(labels), profile.num_classes)
        render_fn = lambda z: stack.generator.generate_t(onehot, z)  # noqa: E731
        b = chunk.shape[0]
        run = optimize_style_codes(
            render_fn=render_fn,
            score_fn=model.scores_t,
            initial_codes=codes0_arr,
            counter_classes=counters,
            target_masks=np.repeat(targets.row_mask(profile.num_classes)[None], b, axis=0),
            config=config,
        )
        for i in range(b):
            present = frozenset(int(c) for c in np.unique(labels[i]))
            codes0 = StyleCodeSet(codes=codes0_arr[i], present_classes=present)
            request = CounterfactualRequest(
                query_image=ImageTensor(pixels=chunk[i]),
                target_regions=targets,
                optimizer=config,
                counter_class=int(counters[i]),
                model_id=model_id,
            )
            results.append(
                _assemble_result(run, i, codes0, ImageTensor(pixels=recons[i]),
                                 int(counters[i]), request)
            )
    return results


# --------------------------------------------------------------------------
# Result persistence: a directory with result.json, PNGs and trajectory.csv.
# --------------------------------------------------------------------------

RESULT_JSON = "result.json"
COUNTERFACTUAL_PNG = "counterfactual.png"
RECONSTRUCTION_PNG = "reconstruction.png"
QUERY_PNG = "query.png"
TRAJECTORY_CSV = "trajectory.csv"


def save_result_dir(
    result: CounterfactualResult,
    out_dir: str | Path,
    query_image: Optional[ImageTensor] = None,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_image_png(out / COUNTERFACTUAL_PNG, result.counterfactual_image)
    write_image_png(out / RECONSTRUCTION_PNG, result.reconstruction_image)
    artifacts = {
        "counterfactual_image": COUNTERFACTUAL_PNG,
        "reconstruction_image": RECONSTRUCTION_PNG,
        "trajectory_csv": TRAJECTORY_CSV,
    }
    if query_image is not None:
        write_image_png(out / QUERY_PNG, query_image)
        artifacts["query_image"] = QUERY_PNG
    payload = result.to_jsonable()
    payload["artifacts"] = artifacts
    (out / RESULT_JSON).write_text(json.dumps(payload, indent=2))
    with open(out / TRAJECTORY_CSV, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "decision_loss", "distance_loss", "counter_prob"])
        for i, ((dec, dist), p) in enumerate(zip(result.loss_trajectory, result.prob_trajectory), 1):
            writer.writerow([i, repr(dec), repr(dist), repr(p)])
    return out


def load_result_dir(result_dir: str | Path) -> CounterfactualResult:
    root = Path(result_dir)
    payload = json.loads((root / RESULT_JSON).read_text())
    artifacts = payload.get("artifacts", {})
    return CounterfactualResult.from_jsonable(
        payload,
        counterfactual_image=read_image_png(root / artifacts.get("counterfactual_image", COUNTERFACTUAL_PNG)),
        reconstruction_image=read_image_png(root / artifacts.get("reconstruction_image", RECONSTRUCTION_PNG)),
    )


def result_digest(result: CounterfactualResult) -> str:
    """Stable digest over the numeric payload and the final code bytes."""
    import hashlib

    digest = hashlib.sha256()
    digest.update(json.dumps(result.to_jsonable(), sort_keys=True).encode())
    digest.update(np.ascontiguousarray(result.final_codes.codes).tobytes())
    digest.update(np.ascontiguousarray(result.counterfactual_image.pixels).tobytes())
    return digest.hexdigest()
