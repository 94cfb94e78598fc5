import math

import numpy as np
import pytest
import torch

from durkit.core import (
    DurationSequence,
    MaskSequence,
    PhonemeSequence,
    build_context,
    masked_sum,
)
from durkit.errors import DomainError, DurkitError, InfeasibleTargetError
from durkit.maskgit import (
    DurationVocab,
    maskgit_decode,
    maskgit_raw_sample,
    maskgit_training_step,
    remaining_masked_schedule,
    sample_with_confidence,
)
from durkit.nnet import build_module

from conftest import make_checkpoint


def _example(n=12, seed=0, max_dur=32):
    rng = np.random.default_rng(seed)
    phones = PhonemeSequence(rng.integers(0, 16, size=n).tolist())
    durations = DurationSequence(rng.integers(1, max_dur + 1, size=n).tolist())
    flags = [1 if i >= n // 3 else 0 for i in range(n)]
    mask = MaskSequence(flags)
    return phones, durations, mask, build_context(durations, mask)


def test_vocab_layout():
    vocab = DurationVocab(max_duration=2048)
    assert vocab.mask_id == 2049
    assert vocab.num_input_tokens == 2050
    assert vocab.num_output_tokens == 2049
    with pytest.raises(DomainError):
        DurationVocab(max_duration=0)


def test_training_loss_uniform_logits_is_log_vocab():
    phones, durations, mask, ctx = _example(seed=1)
    model = build_module(make_checkpoint("maskgit/baseline", seed=1))
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.zero_()  # uniform logits over V tokens
    loss = maskgit_training_step(durations, phones, ctx, None, mask, model)
    assert float(loss.detach()) == pytest.approx(math.log(model.max_duration + 1), rel=1e-6)


def test_training_loss_one_hot_correct_goes_to_zero():
    phones, durations, mask, ctx = _example(seed=2)
    vocab_logits = np.full((len(phones), 33), -1e4)
    for i, d in enumerate(durations.frames):
        vocab_logits[i, int(d)] = 1e4
    flags = torch.as_tensor(mask.array, dtype=torch.bool)
    loss = torch.nn.functional.cross_entropy(
        torch.as_tensor(vocab_logits, dtype=torch.float64)[flags],
        torch.as_tensor([int(d) for d in durations.frames])[flags],
    )
    assert float(loss) == pytest.approx(0.0, abs=1e-8)


def test_training_gradient_only_through_masked_logits():
    phones, durations, mask, ctx = _example(n=8, seed=3)
    model = build_module(make_checkpoint("maskgit/baseline", seed=3))
    from durkit.maskgit import _logits

    logits = _logits(phones, ctx.values, mask.flags, None, model)
    leaf = logits.detach().requires_grad_()
    flags = torch.as_tensor(mask.array, dtype=torch.bool)
    labels = torch.as_tensor([int(f) for f in durations.frames])
    loss = torch.nn.functional.cross_entropy(leaf[flags], labels[flags])
    loss.backward()
    for i, m in enumerate(mask.flags):
        if not m:
            assert torch.all(leaf.grad[i] == 0)


def test_training_clamps_overlong_durations(caplog):
    phones, durations, mask, ctx = _example(seed=4)
    big = DurationSequence([1000] * len(phones))
    model = build_module(make_checkpoint("maskgit/baseline", seed=4))
    with caplog.at_level("WARNING"):
        loss = maskgit_training_step(big, phones, ctx, None, mask, model)
    assert math.isfinite(float(loss.detach()))
    assert any("clamped" in r.message for r in caplog.records)


def test_sample_with_confidence_deterministic():
    rng_logits = np.random.default_rng(0).normal(size=(6, 9))
    s1, c1 = sample_with_confidence(rng_logits, 1.0, 2.0, np.random.default_rng(42))
    s2, c2 = sample_with_confidence(rng_logits, 1.0, 2.0, np.random.default_rng(42))
    np.testing.assert_array_equal(s1, s2)
    np.testing.assert_array_equal(c1, c2)


def test_sample_with_confidence_one_hot():
    logits = np.full((4, 7), -1e6)
    targets = [2, 5, 0, 3]
    for i, t in enumerate(targets):
        logits[i, t] = 0.0
    sampled, conf = sample_with_confidence(logits, 1.0, 0.0, np.random.default_rng(1))
    np.testing.assert_array_equal(sampled, targets)
    np.testing.assert_allclose(conf, 0.0, atol=1e-9)


def test_sample_with_confidence_zero_temperature_argmax():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(10, 8))
    sampled, conf = sample_with_confidence(logits, 1e-9, 0.0, np.random.default_rng(3))
    np.testing.assert_array_equal(sampled, logits.argmax(axis=1))
    # with zero annealing noise, confidence ordering equals probability ordering
    probs = np.exp(conf)
    assert np.all(np.argsort(conf) == np.argsort(probs))


def test_sample_with_confidence_rejects_nan():
    logits = np.zeros((2, 3))
    logits[0, 1] = np.nan
    with pytest.raises(DomainError):
        sample_with_confidence(logits, 1.0, 0.0, np.random.default_rng(0))


def test_remaining_masked_schedule_example():
    assert remaining_masked_schedule(10, 4) == [9, 7, 3, 0]


def test_remaining_masked_schedule_always_terminates():
    for n0 in range(1, 40):
        for t in range(1, 12):
            plan = remaining_masked_schedule(n0, t)
            assert plan[-1] == 0
            assert all(a > b or a == b == 0 for a, b in zip([n0] + plan, plan))


def test_decode_single_step_degenerates_to_one_shot():
    phones, durations, mask, ctx = _example(seed=5)
    model = build_module(make_checkpoint("maskgit/baseline", seed=5))
    out = maskgit_decode(phones, ctx, mask, 60, 1, model, np.random.default_rng(0))
    assert masked_sum(out, mask) == 60


def test_decode_conservation_and_monotone_unmasking():
    phones, durations, mask, ctx = _example(n=14, seed=6)
    model = build_module(make_checkpoint("maskgit/tda", seed=6))
    for seed in range(30):
        d_tgt = int(np.random.default_rng(seed).integers(mask.count(), 200))
        out, trace = maskgit_decode(
            phones, ctx, mask, d_tgt, 5, model, np.random.default_rng(seed), return_trace=True
        )
        assert masked_sum(out, mask) == d_tgt
        counts = [t.masked_remaining for t in trace]
        assert all(a > b for a, b in zip([mask.count()] + counts, counts))
        assert counts[-1] == 0
        remaining = [t.remaining_target for t in trace]
        assert all(a >= b for a, b in zip([d_tgt] + remaining, remaining))
        assert remaining[-1] == 0
        for f, m in zip(out.frames, mask.flags):
            if m:
                assert 1 <= f <= model.max_duration


def test_decode_deterministic():
    phones, durations, mask, ctx = _example(seed=7)
    model = build_module(make_checkpoint("maskgit/baseline", seed=7))
    a = maskgit_decode(phones, ctx, mask, 75, 4, model, np.random.default_rng(9))
    b = maskgit_decode(phones, ctx, mask, 75, 4, model, np.random.default_rng(9))
    assert a.frames == b.frames


def test_decode_infeasible_target():
    phones, durations, mask, ctx = _example(seed=8)
    model = build_module(make_checkpoint("maskgit/baseline", seed=8))
    with pytest.raises(InfeasibleTargetError):
        maskgit_decode(phones, ctx, mask, mask.count() - 1, 4, model, np.random.default_rng(0))


def test_baseline_decode_ignores_target_track_but_meets_sum():
    # same rng, contexts differing only in known (unmasked) values: outputs may
    # differ; but the baseline has no track input at all, so the target enters
    # only through the per-step normalization
    phones, durations, mask, ctx = _example(seed=9)
    model = build_module(make_checkpoint("maskgit/baseline", seed=9))
    for d_tgt in (40, 80, 160):
        out = maskgit_decode(phones, ctx, mask, d_tgt, 4, model, np.random.default_rng(1))
        assert masked_sum(out, mask) == d_tgt
    assert not hasattr(model, "track_proj")


def test_raw_sample_is_unnormalized():
    phones, durations, mask, ctx = _example(seed=10)
    model = build_module(make_checkpoint("maskgit/baseline", seed=10))
    raw = maskgit_raw_sample(phones, ctx, mask, 77, model, np.random.default_rng(4))
    assert all(1 <= f <= model.max_duration for f, m in zip(raw.frames, mask.flags) if m)
    for f, c, m in zip(raw.frames, ctx.values, mask.flags):
        if not m:
            assert f == c


def test_decode_tda_variant_requires_model_tag():
    phones, durations, mask, ctx = _example(seed=11)
    reg = build_module(make_checkpoint("regression/baseline", seed=11))
    with pytest.raises(DurkitError):
        maskgit_decode(phones, ctx, mask, 50, 2, reg, np.random.default_rng(0))
