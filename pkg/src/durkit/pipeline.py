"""Prediction and evaluation runs over alignment files.

Wires the corpus protocol (prompt-prefix context, rate-derived targets) to the
model families and the metrics. Used by the CLI; kept separate so runs are
testable in-process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DurationSequence
from .corpus import AlignmentRecord, prompt_context
from .errors import DomainError
from .flowmatch import FMSampleConfig, fm_predict_with_lr
from .maskgit import (
    DEFAULT_CONFIDENCE_NOISE,
    DEFAULT_TEMPERATURE,
    maskgit_decode,
    maskgit_raw_sample,
)
from .metrics import fdd, pre_lr_deviation, total_duration_error
from .nnet import ModelCheckpoint, build_module, split_family_tag
from .regression import predict_with_lr


@dataclass(frozen=True)
class PredictSettings:
    """Shared knobs for prediction runs."""

    rate: float | None = 1.0
    target_frames: int | None = None
    prompt_frames: int = 40
    seed: int = 0
    nfe: int = 32
    guidance_strength: float = 0.7
    num_samples: int = 8
    decode_steps: int = 8
    temperature: float = DEFAULT_TEMPERATURE
    confidence_noise: float = DEFAULT_CONFIDENCE_NOISE
    final_lr: bool = True

    def __post_init__(self):
        if self.rate is None and self.target_frames is None:
            raise DomainError("either a rate or a target frame count is required")
        if self.rate is not None and self.rate <= 0:
            raise DomainError("rate must be positive")


@dataclass(frozen=True)
class UtteranceStats:
    """Per-utterance prediction telemetry."""

    utt_id: str
    d_tgt: int
    masked: int
    alpha: float
    pre_lr_deviation: float
    total_duration_error: float


@dataclass(frozen=True)
class SkippedRecord:
    utt_id: str
    reason: str


def target_frames_for(record: AlignmentRecord, gt_masked: int, settings: PredictSettings) -> int:
    """Requested masked total: explicit frames, or ground truth / rate."""
    if settings.target_frames is not None:
        return int(settings.target_frames)
    return int(round(gt_masked / settings.rate))


def _utt_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def predict_records(
    ckpt: ModelCheckpoint,
    records: list[AlignmentRecord],
    settings: PredictSettings,
) -> tuple[list[AlignmentRecord], list[UtteranceStats], list[SkippedRecord]]:
    """Predict masked durations for every record under the prompt protocol.

    Returns predicted records (sorted by id), per-utterance stats, and the
    records skipped for infeasible targets.
    """
    family, variant = split_family_tag(ckpt.family)
    if not settings.final_lr and (family, variant) != ("regression", "tda_e2e"):
        raise DomainError("skipping the final regulation is only meaningful for regression/tda_e2e")
    model = build_module(ckpt)
    model.eval()

    predicted: list[AlignmentRecord] = []
    stats: list[UtteranceStats] = []
    skipped: list[SkippedRecord] = []
    for index, rec in enumerate(sorted(records, key=lambda r: r.utt_id)):
        context, mask, gt_masked = prompt_context(rec, settings.prompt_frames)
        d_tgt = target_frames_for(rec, gt_masked, settings)
        if d_tgt < mask.count():
            skipped.append(
                SkippedRecord(rec.utt_id, f"target {d_tgt} below {mask.count()} masked phonemes")
            )
            continue
        seed = _utt_seed(settings.seed, index)

        if family == "regression":
            out = predict_with_lr(rec.phonemes, context, mask, d_tgt, model)
            raw, alpha, final = out.raw, out.alpha, out.durations
            if not settings.final_lr:
                frames = [
                    max(1, int(round(r))) if m else c
                    for r, c, m in zip(raw.frames, context.values, mask.flags)
                ]
                final = DurationSequence(frames)
                alpha = 1.0
        elif family == "fm":
            cfg = FMSampleConfig(
                nfe=settings.nfe,
                guidance_strength=settings.guidance_strength,
                num_samples=settings.num_samples,
                seed=seed,
            )
            out = fm_predict_with_lr(rec.phonemes, context, mask, d_tgt, cfg, model)
            raw, alpha, final = out.raw, out.alpha, out.durations
        else:
            raw_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
            raw = maskgit_raw_sample(
                rec.phonemes, context, mask, d_tgt, model, raw_rng, settings.temperature
            )
            decode_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
            final = maskgit_decode(
                rec.phonemes,
                context,
                mask,
                d_tgt,
                settings.decode_steps,
                model,
                decode_rng,
                settings.temperature,
                settings.confidence_noise,
            )
            alpha = math.nan

        predicted.append(AlignmentRecord(rec.utt_id, rec.phonemes, final))
        stats.append(
            UtteranceStats(
                utt_id=rec.utt_id,
                d_tgt=d_tgt,
                masked=mask.count(),
                alpha=alpha,
                pre_lr_deviation=pre_lr_deviation(raw, mask, d_tgt),
                total_duration_error=total_duration_error(final, mask, d_tgt),
            )
        )
    return predicted, stats, skipped


@dataclass(frozen=True)
class EvalRow:
    utt_id: str
    fdd: float  # NaN when a side has < 2 usable samples
    total_duration_error: float
    pre_lr_deviation: float  # NaN when no stats are supplied


@dataclass(frozen=True)
class EvalSummary:
    pooled_fdd: float
    mean_total_duration_error: float
    mean_pre_lr_deviation: float
    rows: list[EvalRow] = field(default_factory=list)
    exclusions: list[str] = field(default_factory=list)


def evaluate_records(
    reference: list[AlignmentRecord],
    predicted: list[AlignmentRecord],
    silence_ids: frozenset[int] = frozenset({0}),
    prompt_frames: int = 40,
    rate: float = 1.0,
    stats: dict[str, float] | None = None,
) -> EvalSummary:
    """Compare predicted against reference alignments.

    The masked region is re-derived from the reference with the same prompt
    rule prediction used; FDD pools the masked non-silence durations of both
    sides. ``stats`` optionally maps utterance ids to pre-regulation
    deviations recorded at prediction time.
    """
    if rate <= 0:
        raise DomainError("rate must be positive")
    ref_by_id = {r.utt_id: r for r in reference}
    pred_by_id = {r.utt_id: r for r in predicted}
    exclusions = sorted(set(ref_by_id) ^ set(pred_by_id))

    rows: list[EvalRow] = []
    ref_pool: list[int] = []
    gen_pool: list[int] = []
    errors: list[float] = []
    devs: list[float] = []
    for utt_id in sorted(set(ref_by_id) & set(pred_by_id)):
        ref, pred = ref_by_id[utt_id], pred_by_id[utt_id]
        if len(ref.durations) != len(pred.durations) or ref.phonemes != pred.phonemes:
            exclusions.append(utt_id)
            continue
        _, mask, gt_masked = prompt_context(ref, prompt_frames)
        d_tgt = int(round(gt_masked / rate))
        r_samples = [
            f
            for f, m, p in zip(ref.durations.frames, mask.flags, ref.phonemes.tokens)
            if m and p not in silence_ids
        ]
        g_samples = [
            f
            for f, m, p in zip(pred.durations.frames, mask.flags, pred.phonemes.tokens)
            if m and p not in silence_ids
        ]
        ref_pool.extend(r_samples)
        gen_pool.extend(g_samples)
        utt_fdd = (
            fdd(r_samples, g_samples) if len(r_samples) >= 2 and len(g_samples) >= 2 else math.nan
        )
        err = total_duration_error(pred.durations, mask, d_tgt) if d_tgt > 0 else math.nan
        dev = stats.get(utt_id, math.nan) if stats else math.nan
        rows.append(EvalRow(utt_id, utt_fdd, err, dev))
        if not math.isnan(err):
            errors.append(err)
        if not math.isnan(dev):
            devs.append(dev)

    pooled = fdd(ref_pool, gen_pool) if len(ref_pool) >= 2 and len(gen_pool) >= 2 else math.nan
    return EvalSummary(
        pooled_fdd=pooled,
        mean_total_duration_error=float(np.mean(errors)) if errors else math.nan,
        mean_pre_lr_deviation=float(np.mean(devs)) if devs else math.nan,
        rows=rows,
        exclusions=sorted(set(exclusions)),
    )


@dataclass(frozen=True)
class SweepRow:
    model: str
    rate: float
    seed: str  # seed index, or "mean"/"std" for the aggregate rows
    fdd: float
    pre_lr_deviation: float
    total_duration_error: float


def sweep_models(
    checkpoints: list[tuple[str, ModelCheckpoint]],
    records: list[AlignmentRecord],
    rates: list[float],
    n_seeds: int = 3,
    base: PredictSettings = PredictSettings(),
) -> tuple[list[SweepRow], list[SkippedRecord]]:
    """Rate sweep: one row per (model, rate, seed) plus mean/std aggregates."""
    if any(r <= 0 or r > 4 for r in rates):
        raise DomainError("rates must lie in (0, 4]")
    rows: list[SweepRow] = []
    all_skipped: list[SkippedRecord] = []
    for name, ckpt in checkpoints:
        for rate in rates:
            per_seed: list[tuple[float, float, float]] = []
            for seed_idx in range(n_seeds):
                settings = PredictSettings(
                    rate=rate,
                    target_frames=None,
                    prompt_frames=base.prompt_frames,
                    seed=_utt_seed(base.seed, seed_idx),
                    nfe=base.nfe,
                    guidance_strength=base.guidance_strength,
                    num_samples=base.num_samples,
                    decode_steps=base.decode_steps,
                    temperature=base.temperature,
                    confidence_noise=base.confidence_noise,
                )
                predicted, stats, skipped = predict_records(ckpt, records, settings)
                all_skipped.extend(skipped)
                summary = evaluate_records(
                    records,
                    predicted,
                    prompt_frames=base.prompt_frames,
                    rate=rate,
                    stats={s.utt_id: s.pre_lr_deviation for s in stats},
                )
                per_seed.append(
                    (summary.pooled_fdd, summary.mean_pre_lr_deviation, summary.mean_total_duration_error)
                )
                rows.append(SweepRow(name, rate, str(seed_idx), *per_seed[-1]))
            arr = np.asarray(per_seed, dtype=np.float64)
            rows.append(SweepRow(name, rate, "mean", *(float(v) for v in arr.mean(axis=0))))
            rows.append(SweepRow(name, rate, "std", *(float(v) for v in arr.std(axis=0))))
    return rows, all_skipped
