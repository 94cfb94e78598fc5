"""Flow-matching duration models (baseline and target-aware).

Training regresses the optimal-transport conditional vector field on
log-domain durations at the masked positions; sampling integrates the learned
field with uniform Euler steps and classifier-free guidance, then averages
several independent samples. The unconditional branch mirrors the
mask-everything training draw: an all-zero duration context (and an all-zero
target track for the tda variant).
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
from .errors import DomainError, DurkitError, LengthMismatchError
from .nnet import DurationTransformer
from .regulator import length_regulate
from .regression import PredictOutput

SIGMA_MIN = 1e-5


@dataclass(frozen=True)
class FMSampleConfig:
    """Euler sampler settings."""

    nfe: int = 32
    guidance_strength: float = 0.7
    num_samples: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.nfe < 1 or self.num_samples < 1:
            raise DomainError("nfe and num_samples must be >= 1")
        if self.guidance_strength < 0:
            raise DomainError("guidance strength must be >= 0")


def _check_model(model: DurationTransformer, target: TargetTrack | None) -> None:
    if model.family != "fm":
        raise DurkitError(f"expected a flow-matching model, got {model.family}")
    if model.variant == "baseline" and target is not None:
        raise DurkitError("baseline flow model does not accept a target track")
    if model.variant == "tda" and target is None:
        raise DurkitError("fm/tda requires a target track")


def _batched_inputs(
    phonemes: PhonemeSequence,
    context: DurationContext,
    target: TargetTrack | None,
    batch: int,
    dtype: torch.dtype,
):
    if len(phonemes) != len(context) or (target is not None and len(target) != len(context)):
        raise LengthMismatchError("phonemes, context, and target track lengths differ")
    phones = torch.as_tensor(phonemes.array).unsqueeze(0).expand(batch, -1)
    ctx = (
        torch.as_tensor(log_transform(context.array), dtype=dtype)
        .unsqueeze(0)
        .expand(batch, -1)
    )
    track = None
    if target is not None:
        track = (
            torch.as_tensor(log_transform(target.array), dtype=dtype)
            .unsqueeze(0)
            .expand(batch, -1)
        )
    return phones, ctx, track


def fm_training_step(
    truth: DurationSequence,
    phonemes: PhonemeSequence,
    context: DurationContext,
    target: TargetTrack | None,
    mask: MaskSequence,
    rng: np.random.Generator,
    model: DurationTransformer,
) -> Tensor:
    """Conditional flow-matching loss for one utterance.

    Draws t ~ U[0,1] and per-masked-position noise, forms the interpolated
    state x_t = (1-(1-sigma)t) x0 + t x1 with x1 the log-domain truth, and
    regresses the field toward x1 - (1-sigma) x0 at the masked positions.
    """
    _check_model(model, target)
    mask.require_any()
    dtype = next(model.parameters()).dtype
    phones, ctx, track = _batched_inputs(phonemes, context, target, 1, dtype)
    flags = torch.as_tensor(mask.array, dtype=torch.bool)

    t = float(rng.random())
    x0 = torch.as_tensor(rng.standard_normal(int(flags.sum())), dtype=dtype)
    x1 = torch.as_tensor(log_transform(truth.array), dtype=dtype)[flags]
    xt = (1.0 - (1.0 - SIGMA_MIN) * t) * x0 + t * x1
    target_field = x1 - (1.0 - SIGMA_MIN) * x0

    state = torch.zeros(1, len(mask), dtype=dtype)
    state[0, flags] = xt
    v = model(phones, ctx, track, state=state, t=t)[0]
    return ((v[flags] - target_field) ** 2).mean()


def fm_sample(
    phonemes: PhonemeSequence,
    context: DurationContext,
    target: TargetTrack | None,
    mask: MaskSequence,
    cfg: FMSampleConfig,
    model: DurationTransformer,
) -> DurationSequence:
    """Euler-integrate the guided field and average num_samples draws.

    Returns real-valued durations for the whole sequence: masked positions
    carry the sample mean (inverse log transform, clamped >= 0), unmasked
    positions keep their known context values.
    """
    _check_model(model, target)
    mask.require_any()
    dtype = next(model.parameters()).dtype
    rng = np.random.default_rng(cfg.seed)
    s = cfg.num_samples
    w = cfg.guidance_strength
    flags = torch.as_tensor(mask.array, dtype=torch.bool)
    n = len(mask)

    phones, ctx, track = _batched_inputs(phonemes, context, target, s, dtype)
    if w > 0:
        # unconditional branch: all-masked zero context, zero track for tda
        phones = torch.cat([phones, phones], dim=0)
        ctx = torch.cat([ctx, torch.zeros_like(ctx)], dim=0)
        if track is not None:
            track = torch.cat([track, torch.zeros_like(track)], dim=0)

    x = torch.as_tensor(rng.standard_normal((s, int(flags.sum()))), dtype=dtype)
    dt = 1.0 / cfg.nfe
    with torch.no_grad():
        for i in range(cfg.nfe):
            t = i * dt
            state = torch.zeros(s, n, dtype=dtype)
            state[:, flags] = x
            if w > 0:
                state = torch.cat([state, state], dim=0)
                v_all = model(phones, ctx, track, state=state, t=t)[:, flags]
                v_cond, v_uncond = v_all[:s], v_all[s:]
                v = (1.0 + w) * v_cond - w * v_uncond
            else:
                v = model(phones, ctx, track, state=state, t=t)[:, flags]
            x = x + dt * v

    mean_log = x.double().mean(dim=0)
    vals = torch.expm1(mean_log).clamp_min(0.0).numpy()
    out = list(context.values)
    for j, i in enumerate(np.flatnonzero(mask.array)):
        out[int(i)] = float(vals[j])
    return DurationSequence(out)


def fm_predict_with_lr(
    phonemes: PhonemeSequence,
    context: DurationContext,
    mask: MaskSequence,
    d_tgt: int,
    cfg: FMSampleConfig,
    model: DurationTransformer,
) -> PredictOutput:
    """Sample durations, then length-regulate the masked positions to d_tgt."""
    target = None
    if model.variant == "tda":
        target = build_target_track(mask, d_tgt)
    raw = fm_sample(phonemes, context, target, mask, cfg, model)
    result = length_regulate(raw, mask, d_tgt)
    return PredictOutput(durations=result.durations, alpha=result.alpha, raw=raw)
