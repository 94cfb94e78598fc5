"""Discrete duration model with iterative confidence-based decoding.

Durations are treated as tokens (frame counts up to max_duration, plus a MASK
token on the input side). Training is masked cross-entropy; decoding samples
every masked position, normalizes the samples so they sum to the remaining
target, keeps the most confident fills per step under the cosine schedule,
and repeats until nothing is masked. The per-step normalization makes the
final masked sum equal the requested total exactly, for the target-aware and
the target-blind variant alike.
"""

from __future__ import annotations

import logging
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
    masked_sum,
)
from .errors import DomainError, DurkitError, InfeasibleTargetError, LengthMismatchError
from .masking import cosine_schedule
from .nnet import DurationTransformer
from .regulator import uniform_normalize_integer

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 1.0
DEFAULT_CONFIDENCE_NOISE = 4.5


@dataclass(frozen=True)
class DurationVocab:
    """Token layout: ids 0..max_duration are frame counts, MASK follows."""

    max_duration: int = 256

    def __post_init__(self):
        if self.max_duration < 1:
            raise DomainError("max_duration must be >= 1")

    @property
    def mask_id(self) -> int:
        return self.max_duration + 1

    @property
    def num_input_tokens(self) -> int:
        return self.max_duration + 2

    @property
    def num_output_tokens(self) -> int:
        return self.max_duration + 1


@dataclass(frozen=True)
class DecodeState:
    """Snapshot of the decoder after one step."""

    step: int
    total_steps: int
    context_values: tuple
    mask_flags: tuple
    remaining_target: int
    temperature: float

    @property
    def masked_remaining(self) -> int:
        return sum(self.mask_flags)


def _check_model(model: DurationTransformer, target: TargetTrack | None) -> None:
    if model.family != "maskgit":
        raise DurkitError(f"expected a maskgit model, got {model.family}")
    if model.variant == "baseline" and target is not None:
        raise DurkitError("baseline maskgit does not accept a target track")
    if model.variant == "tda" and target is None:
        raise DurkitError("maskgit/tda requires a target track")


def _context_tokens(values, flags, model: DurationTransformer) -> Tensor:
    tokens = [
        model.mask_token if m else min(int(v), model.max_duration)
        for v, m in zip(values, flags)
    ]
    return torch.as_tensor(tokens, dtype=torch.int64).unsqueeze(0)


def _logits(
    phonemes: PhonemeSequence,
    values,
    flags,
    target: TargetTrack | None,
    model: DurationTransformer,
) -> Tensor:
    dtype = next(model.parameters()).dtype
    phones = torch.as_tensor(phonemes.array).unsqueeze(0)
    ctx = _context_tokens(values, flags, model)
    track = None
    if target is not None:
        track = torch.as_tensor(log_transform(target.array), dtype=dtype).unsqueeze(0)
    return model(phones, ctx, track)[0]


def maskgit_training_step(
    truth: DurationSequence,
    phonemes: PhonemeSequence,
    context: DurationContext,
    target: TargetTrack | None,
    mask: MaskSequence,
    model: DurationTransformer,
) -> Tensor:
    """Mean cross-entropy over masked positions against the true duration tokens."""
    _check_model(model, target)
    mask.require_any()
    if len(truth) != len(mask):
        raise LengthMismatchError("truth and mask lengths differ")
    labels = np.asarray([int(f) for f in truth.frames], dtype=np.int64)
    if labels.max() > model.max_duration:
        logger.warning(
            "durations above max_duration=%d clamped for training", model.max_duration
        )
        labels = np.minimum(labels, model.max_duration)
    logits = _logits(phonemes, context.values, mask.flags, target, model)
    flags = torch.as_tensor(mask.array, dtype=torch.bool)
    return torch.nn.functional.cross_entropy(
        logits[flags], torch.as_tensor(labels)[flags]
    )


def sample_with_confidence(
    logits: np.ndarray,
    temperature: float,
    noise_scale: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample one token per row and score it.

    Tokens are drawn from softmax(logits / temperature); the confidence is
    the sampled token's log-probability plus Gumbel noise scaled by
    ``noise_scale`` (the annealed exploration term of the decoder).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if np.isnan(logits).any() or np.isposinf(logits).any():
        raise DomainError("logits must not contain NaN or +inf")
    if np.isneginf(logits).all(axis=1).any():
        raise DomainError("every row needs at least one admissible token")
    tau = max(float(temperature), 1e-12)
    z = logits / tau
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    probs = np.exp(logp)
    cum = np.cumsum(probs, axis=1)
    u = rng.random((logits.shape[0], 1)) * cum[:, -1:]
    idx = (cum < u).sum(axis=1).clip(0, logits.shape[1] - 1)
    conf = logp[np.arange(logits.shape[0]), idx]
    if noise_scale > 0:
        gumbel = -np.log(-np.log(rng.random(logits.shape[0])))
        conf = conf + noise_scale * gumbel
    return idx.astype(np.int64), conf


def remaining_masked_schedule(n0: int, total_steps: int) -> list[int]:
    """Planned count of still-masked positions after each step.

    floor(gamma(t/T) * n0), clamped so every step fills at least one position
    and the final step leaves zero.
    """
    counts = []
    cur = n0
    for t in range(1, total_steps + 1):
        if cur == 0:
            counts.append(0)
            continue
        if t == total_steps:
            keep = 0
        else:
            keep = int(np.floor(cosine_schedule(t / total_steps) * n0))
            keep = max(0, min(keep, cur - 1))
        counts.append(keep)
        cur = keep
    return counts


def maskgit_decode(
    phonemes: PhonemeSequence,
    context: DurationContext,
    mask: MaskSequence,
    d_tgt: int,
    total_steps: int,
    model: DurationTransformer,
    rng: np.random.Generator,
    temperature: float = DEFAULT_TEMPERATURE,
    confidence_noise: float = DEFAULT_CONFIDENCE_NOISE,
    return_trace: bool = False,
):
    """Iteratively fill all masked durations so they sum to d_tgt exactly.

    Each step samples every still-masked position, integer-normalizes the
    samples to the remaining target, fills the most confident ones per the
    cosine schedule, and subtracts the filled frames from the target. The
    tda variant re-derives its target track from the remaining total before
    every forward pass.
    """
    if model.family != "maskgit":
        raise DurkitError(f"expected a maskgit model, got {model.family}")
    mask.require_any()
    if total_steps < 1:
        raise DomainError("need at least one decode step")
    n0 = mask.count()
    if d_tgt < n0:
        raise InfeasibleTargetError(f"target {d_tgt} below {n0} masked phonemes")
    cap = model.max_duration
    if d_tgt > n0 * cap:
        logger.warning(
            "target %d exceeds %d masked positions x max_duration %d; "
            "fills may exceed the vocabulary range",
            d_tgt,
            n0,
            cap,
        )
        cap = None  # conservation of the total wins over the vocabulary bound

    values = list(context.values)
    flags = list(mask.flags)
    remaining = int(d_tgt)
    plan = remaining_masked_schedule(n0, total_steps)
    trace: list[DecodeState] = []

    for t in range(1, total_steps + 1):
        masked_idx = [i for i, m in enumerate(flags) if m]
        if not masked_idx:
            break
        if remaining < len(masked_idx):
            # unreachable under the schedule (every unfilled sample keeps >= 1
            # frame of the target); kept as a guarded fallback
            logger.warning("remaining target fell below the masked count; renormalizing")
            remaining = len(masked_idx)
        track = None
        if model.variant == "tda":
            track = build_target_track(MaskSequence(flags), remaining)
        with torch.no_grad():
            logits = _logits(phonemes, values, flags, track, model).double().numpy()
        logits = logits[masked_idx]
        logits[:, 0] = -np.inf  # a filled phoneme always gets at least one frame
        noise = confidence_noise * (1.0 - t / total_steps)
        sampled, conf = sample_with_confidence(logits, temperature, noise, rng)
        normalized = uniform_normalize_integer(sampled.astype(np.float64), remaining, cap=cap)

        keep = plan[t - 1]
        n_fill = len(masked_idx) - keep
        order = sorted(range(len(masked_idx)), key=lambda j: (-conf[j], masked_idx[j]))
        fill_local = order[:n_fill]
        filled_total = 0
        for j in fill_local:
            pos = masked_idx[j]
            values[pos] = int(normalized[j])
            flags[pos] = 0
            filled_total += int(normalized[j])
        remaining -= filled_total
        trace.append(
            DecodeState(
                step=t,
                total_steps=total_steps,
                context_values=tuple(values),
                mask_flags=tuple(flags),
                remaining_target=remaining,
                temperature=temperature,
            )
        )

    result = DurationSequence(values)
    assert masked_sum(result, mask) == d_tgt
    return (result, trace) if return_trace else result


def maskgit_raw_sample(
    phonemes: PhonemeSequence,
    context: DurationContext,
    mask: MaskSequence,
    d_tgt: int,
    model: DurationTransformer,
    rng: np.random.Generator,
    temperature: float = DEFAULT_TEMPERATURE,
) -> DurationSequence:
    """One-shot sample of all masked positions without any normalization.

    This is the decoder's first-pass output before length regulation; its
    masked sum measures how target-aware the model itself is.
    """
    target = None
    if model.variant == "tda":
        target = build_target_track(mask, d_tgt)
    _check_model(model, target)
    mask.require_any()
    with torch.no_grad():
        logits = _logits(phonemes, context.values, mask.flags, target, model).double().numpy()
    masked_idx = np.flatnonzero(mask.array)
    logits = logits[masked_idx]
    logits[:, 0] = -np.inf
    sampled, _ = sample_with_confidence(logits, temperature, 0.0, rng)
    values = list(context.values)
    for j, i in enumerate(masked_idx):
        values[int(i)] = int(sampled[j])
    return DurationSequence(values)
