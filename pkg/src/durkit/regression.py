"""Regression duration models: baseline, target-aware (tda), and tda_e2e.

All variants predict log-domain durations for every position and are trained
with MSE over the masked positions. The tda variants receive the target-total
track as an extra input; tda_e2e additionally rescales its masked outputs
inside the forward pass so their real-valued sum matches the requested total
without any post-processing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from .core import (
    DurationContext,
    DurationSequence,
    MaskSequence,
    PhonemeSequence,
    TargetTrack,
    build_target_track,
    log_transform,
)
from .errors import DegenerateInputError, DurkitError, LengthMismatchError
from .nnet import DurationTransformer
from .regulator import length_regulate

# keeps the in-graph normalization well defined when outputs collapse to zero
_E2E_FLOOR = 1e-6


@dataclass(frozen=True)
class PredictOutput:
    """Length-regulated integer durations plus the raw model output."""

    durations: DurationSequence
    alpha: float
    raw: DurationSequence


def _check_variant(model: DurationTransformer, target: TargetTrack | None) -> None:
    if model.family != "regression":
        raise DurkitError(f"expected a regression model, got {model.family}")
    if model.variant == "baseline" and target is not None:
        raise DurkitError("baseline regression does not accept a target track")
    if model.variant != "baseline" and target is None:
        raise DurkitError(f"regression/{model.variant} requires a target track")


def _fused_inputs(
    phonemes: PhonemeSequence,
    context: DurationContext,
    target: TargetTrack | None,
    dtype: torch.dtype,
):
    if len(phonemes) != len(context) or (target is not None and len(target) != len(context)):
        raise LengthMismatchError("phonemes, context, and target track lengths differ")
    phones = torch.as_tensor(phonemes.array).unsqueeze(0)
    ctx = torch.as_tensor(log_transform(context.array), dtype=dtype).unsqueeze(0)
    track = None
    if target is not None:
        track = torch.as_tensor(log_transform(target.array), dtype=dtype).unsqueeze(0)
    return phones, ctx, track


def regression_log_outputs(
    phonemes: PhonemeSequence,
    context: DurationContext,
    target: TargetTrack | None,
    model: DurationTransformer,
) -> Tensor:
    """Differentiable log-domain predictions for all positions, shape [N].

    For tda_e2e the masked outputs are normalized in the linear domain so
    their real-valued sum equals target.total, then mapped back to log.
    """
    _check_variant(model, target)
    dtype = next(model.parameters()).dtype
    phones, ctx, track = _fused_inputs(phonemes, context, target, dtype)
    out = model(phones, ctx, track)[0]
    if model.variant != "tda_e2e":
        return out
    mask = torch.as_tensor(context.mask.array, dtype=torch.bool)
    if not mask.any():
        raise DegenerateInputError("tda_e2e normalization needs at least one masked position")
    linear = torch.expm1(out).clamp_min(0.0)
    masked_vals = linear[mask].clamp_min(_E2E_FLOOR)
    scale = float(target.total) / masked_vals.sum()
    normalized = linear.masked_scatter(mask, masked_vals * scale)
    return torch.log1p(normalized)


def regression_forward(
    phonemes: PhonemeSequence,
    context: DurationContext,
    target: TargetTrack | None,
    model: DurationTransformer,
) -> DurationSequence:
    """Real-valued duration predictions (inverse log transform, clamped >= 0)."""
    with torch.no_grad():
        log_out = regression_log_outputs(phonemes, context, target, model)
    vals = torch.expm1(log_out.double()).clamp_min(0.0).numpy()
    return DurationSequence(vals.tolist())


def regression_loss(pred_log, truth: DurationSequence, mask: MaskSequence):
    """Mean squared log-domain error over masked positions.

    Accepts a torch tensor (stays differentiable) or any array-like.
    """
    is_tensor = torch.is_tensor(pred_log)
    pred = pred_log if is_tensor else torch.as_tensor(np.asarray(pred_log, dtype=np.float64))
    if pred.shape[-1] != len(truth) or len(truth) != len(mask):
        raise LengthMismatchError("prediction, truth, and mask lengths differ")
    mask.require_any()
    flags = torch.as_tensor(mask.array, dtype=torch.bool)
    target = torch.as_tensor(log_transform(truth.array), dtype=pred.dtype)
    loss = ((pred[flags] - target[flags]) ** 2).mean()
    return loss if is_tensor else float(loss)


def regression_training_step(
    truth: DurationSequence,
    phonemes: PhonemeSequence,
    context: DurationContext,
    target: TargetTrack | None,
    mask: MaskSequence,
    model: DurationTransformer,
) -> Tensor:
    """Differentiable masked MSE loss for one utterance."""
    pred_log = regression_log_outputs(phonemes, context, target, model)
    return regression_loss(pred_log, truth, mask)


def predict_with_lr(
    phonemes: PhonemeSequence,
    context: DurationContext,
    mask: MaskSequence,
    d_tgt: int,
    model: DurationTransformer,
) -> PredictOutput:
    """Forward pass followed by exact length regulation of the masked positions.

    Unmasked positions keep their known context durations; masked positions
    are integer-apportioned so their sum equals d_tgt exactly.
    """
    mask.require_any()
    target = None
    if model.variant != "baseline":
        target = build_target_track(mask, d_tgt)
    raw = regression_forward(phonemes, context, target, model)
    merged = DurationSequence(
        [r if m else c for r, c, m in zip(raw.frames, context.values, mask.flags)]
    )
    result = length_regulate(merged, mask, d_tgt)
    return PredictOutput(durations=result.durations, alpha=result.alpha, raw=raw)
