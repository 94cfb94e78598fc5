"""Seeded training loops for all model families.

One step is one Adam update over a mini-batch of utterances. Masks follow the
family's sampler: contiguous spans (with the mask-everything branch) for the
continuous models, cosine-scheduled random subsets for the discrete one. The
target track fed to tda variants always carries the ground-truth masked total;
the tda flow model zeroes it on mask-everything draws, which doubles as the
classifier-free-guidance unconditional signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .core import build_context, build_target_track, masked_sum
from .corpus import AlignmentRecord, prompt_context
from .errors import DomainError
from .flowmatch import fm_training_step
from .masking import MaskPolicy, RATIO_FAMILY, sample_ratio_mask, sample_span_mask
from .maskgit import maskgit_training_step
from .nnet import (
    AdamState,
    ModelCheckpoint,
    TransformerConfig,
    adam_step,
    build_module,
    gradients,
    new_checkpoint,
    snapshot_params,
    split_family_tag,
)
from .regression import regression_log_outputs, regression_loss, regression_training_step


@dataclass(frozen=True)
class TrainSettings:
    """Everything a training run depends on besides the corpus itself."""

    family_tag: str = "regression/baseline"
    config: TransformerConfig = field(default_factory=TransformerConfig)
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    mask_policy: MaskPolicy = field(default_factory=MaskPolicy)
    max_duration: int = 256

    def __post_init__(self):
        split_family_tag(self.family_tag)
        if self.steps < 1 or self.batch_size < 1:
            raise DomainError("steps and batch_size must be >= 1")
        if self.lr <= 0:
            raise DomainError("learning rate must be positive")


def _sample_mask(n, family, policy, rng):
    if family == "maskgit":
        return sample_ratio_mask(n, rng)
    if policy.family == RATIO_FAMILY:
        return sample_ratio_mask(n, rng)
    return sample_span_mask(n, policy, rng)


def _utterance_loss(record, family, variant, model, policy, rng):
    mask = _sample_mask(len(record.phonemes), family, policy, rng)
    context = build_context(record.durations, mask)
    target = None
    if variant != "baseline":
        d_tgt = masked_sum(record.durations, mask)
        if family == "fm" and mask.count() == len(mask):
            # mask-everything draw doubles as the CFG unconditional signal
            d_tgt = 0
        target = build_target_track(mask, d_tgt)
    if family == "regression":
        return regression_training_step(
            record.durations, record.phonemes, context, target, mask, model
        )
    if family == "fm":
        return fm_training_step(
            record.durations, record.phonemes, context, target, mask, rng, model
        )
    return maskgit_training_step(
        record.durations, record.phonemes, context, target, mask, model
    )


def train_model(
    records: list[AlignmentRecord],
    settings: TrainSettings,
    resume: ModelCheckpoint | None = None,
) -> tuple[ModelCheckpoint, list[tuple[int, float]]]:
    """Train (or continue training) a model; returns checkpoint and loss log.

    Deterministic in settings.seed: initialization, batch order, masks, and
    flow noise all derive from it. Step numbering continues across resumes.
    """
    if not records:
        raise DomainError("training corpus is empty")
    family, variant = split_family_tag(settings.family_tag)
    phone_vocab_size = max(max(r.phonemes.tokens) for r in records) + 1
    max_duration = settings.max_duration if family == "maskgit" else None

    if resume is not None:
        ckpt = resume
        if ckpt.family != settings.family_tag:
            raise DomainError(
                f"resume checkpoint is {ckpt.family}, settings ask for {settings.family_tag}"
            )
    else:
        ckpt = new_checkpoint(
            settings.family_tag,
            settings.config,
            phone_vocab_size,
            max_duration,
            seed=settings.seed,
        )

    model = build_module(ckpt)
    model.train()
    params = dict(model.named_parameters())
    opt_state = AdamState()
    rng = np.random.default_rng(np.random.SeedSequence([settings.seed, ckpt.steps, 0x7D]))

    log: list[tuple[int, float]] = []
    start = ckpt.steps
    for step in range(start + 1, start + settings.steps + 1):
        idxs = rng.integers(0, len(records), size=settings.batch_size)
        losses = [
            _utterance_loss(records[int(i)], family, variant, model, settings.mask_policy, rng)
            for i in idxs
        ]
        loss = torch.stack(losses).mean()
        grads = gradients(loss, model)
        adam_step(params, grads, opt_state, settings.lr)
        log.append((step, float(loss.detach())))

    model.eval()
    out = replace_checkpoint_params(ckpt, model, steps=start + settings.steps)
    return out, log


def replace_checkpoint_params(
    ckpt: ModelCheckpoint, model: torch.nn.Module, steps: int
) -> ModelCheckpoint:
    return ModelCheckpoint(
        family=ckpt.family,
        config=ckpt.config,
        phone_vocab_size=ckpt.phone_vocab_size,
        max_duration=ckpt.max_duration,
        seed=ckpt.seed,
        steps=steps,
        params=snapshot_params(model),
    )


def eval_masked_mse(
    ckpt: ModelCheckpoint,
    records: list[AlignmentRecord],
    prompt_frames: int = 40,
    limit: int | None = None,
) -> float:
    """Log-domain masked MSE under the prompt-prefix evaluation protocol."""
    family, variant = split_family_tag(ckpt.family)
    if family != "regression":
        raise DomainError("masked-MSE evaluation is defined for regression models")
    model = build_module(ckpt)
    model.eval()
    total = 0.0
    count = 0
    with torch.no_grad():
        for rec in records[:limit]:
            context, mask, gt_masked = prompt_context(rec, prompt_frames)
            target = None
            if variant != "baseline":
                target = build_target_track(mask, gt_masked)
            pred_log = regression_log_outputs(rec.phonemes, context, target, model)
            total += float(regression_loss(pred_log, rec.durations, mask))
            count += 1
    return total / max(count, 1)
