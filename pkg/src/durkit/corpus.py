"""Synthetic alignment corpus with known per-phone duration statistics.

Stands in for a forced-alignment pipeline: each phone id draws its frame
count from a log-normal distribution, modulated by a per-utterance rate
factor, so the true moments behind every duration are recoverable for metric
oracles. Real alignments can be ingested through the same JSONL format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import DurationContext, DurationSequence, MaskSequence, PhonemeSequence, build_context
from .errors import DomainError, DurkitError

FORMAT_FIELDS = ("id", "phones", "durations")


@dataclass(frozen=True)
class SyntheticSpec:
    """Generation parameters for the synthetic corpus."""

    phone_vocab_size: int = 16
    log_mu: tuple[float, ...] = ()
    log_sigma: tuple[float, ...] = ()
    rate_log_sigma: float = 0.1
    silence_id: int = 0
    silence_prob: float = 0.08
    min_length: int = 12
    max_length: int = 24
    seed: int = 0

    def __post_init__(self):
        if self.phone_vocab_size < 2:
            raise DomainError("need at least two phones (silence + one speech phone)")
        if not (1 <= self.min_length <= self.max_length):
            raise DomainError("utterance length bounds must satisfy 1 <= min <= max")
        if not (0 <= self.silence_id < self.phone_vocab_size):
            raise DomainError("silence id out of range")
        if not self.log_mu:
            object.__setattr__(self, "log_mu", self._default_mu())
        if not self.log_sigma:
            object.__setattr__(self, "log_sigma", (0.35,) * self.phone_vocab_size)
        if len(self.log_mu) != self.phone_vocab_size or len(self.log_sigma) != self.phone_vocab_size:
            raise DomainError("per-phone parameter lists must match phone_vocab_size")
        if any(s <= 0 for s in self.log_sigma):
            raise DomainError("per-phone log-sigma must be positive")
        if not (0 <= self.silence_id < self.phone_vocab_size):
            raise DomainError("silence id out of range")

    def _default_mu(self) -> tuple[float, ...]:
        # spread per-phone median durations over roughly 3..14 frames,
        # with a slow 6-frame silence phone
        lo, hi = math.log(3.0), math.log(14.0)
        mus = [
            lo + (hi - lo) * i / max(1, self.phone_vocab_size - 1)
            for i in range(self.phone_vocab_size)
        ]
        mus[self.silence_id] = math.log(6.0)
        return tuple(mus)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        data = json.loads(text)
        for key in ("log_mu", "log_sigma"):
            if key in data and data[key] is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticSpec":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class AlignmentRecord:
    """One utterance: id, phoneme ids, and integer frame durations."""

    utt_id: str
    phonemes: PhonemeSequence
    durations: DurationSequence

    def __post_init__(self):
        if len(self.phonemes) != len(self.durations):
            raise DurkitError(
                f"record {self.utt_id}: {len(self.phonemes)} phones vs "
                f"{len(self.durations)} durations"
            )
        if not self.durations.is_integral() or any(f < 1 for f in self.durations.frames):
            raise DomainError(f"record {self.utt_id}: durations must be integers >= 1")


def generate_corpus(spec: SyntheticSpec, n_utterances: int) -> list[AlignmentRecord]:
    """Draw a deterministic synthetic corpus from the spec's seed."""
    if n_utterances < 1:
        raise DomainError("need at least one utterance")
    rng = np.random.default_rng(spec.seed)
    speech_ids = [p for p in range(spec.phone_vocab_size) if p != spec.silence_id]
    mu = np.asarray(spec.log_mu)
    sigma = np.asarray(spec.log_sigma)
    records = []
    for i in range(n_utterances):
        n = int(rng.integers(spec.min_length, spec.max_length + 1))
        phones = [
            spec.silence_id
            if rng.random() < spec.silence_prob
            else int(rng.choice(speech_ids))
            for _ in range(n)
        ]
        rate = math.exp(rng.normal(0.0, spec.rate_log_sigma))
        raw = rate * np.exp(rng.normal(mu[phones], sigma[phones]))
        frames = np.maximum(1, np.rint(raw)).astype(np.int64)
        records.append(
            AlignmentRecord(
                utt_id=f"utt-{i:05d}",
                phonemes=PhonemeSequence(phones),
                durations=DurationSequence(frames.tolist()),
            )
        )
    return records


def write_alignments(records: Iterable[AlignmentRecord], path: str | Path) -> None:
    """Write records as one JSON object per line (UTF-8)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "id": rec.utt_id,
                "phones": list(rec.phonemes.tokens),
                "durations": [int(f) for f in rec.durations.frames],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_alignments(path: str | Path) -> list[AlignmentRecord]:
    """Read a JSONL alignment file, reporting the line number of any bad record."""
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DurkitError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            missing = [k for k in FORMAT_FIELDS if k not in obj]
            if missing:
                raise DurkitError(f"{path}:{lineno}: missing fields {missing}")
            try:
                records.append(
                    AlignmentRecord(
                        utt_id=str(obj["id"]),
                        phonemes=PhonemeSequence(obj["phones"]),
                        durations=DurationSequence(obj["durations"]),
                    )
                )
            except DurkitError as exc:
                raise DurkitError(f"{path}:{lineno}: {exc}") from exc
    return records


def split_corpus(
    records: Sequence[AlignmentRecord], train_fraction: float, seed: int
) -> tuple[list[AlignmentRecord], list[AlignmentRecord]]:
    """Deterministic disjoint train/eval split."""
    if not (0.0 < train_fraction < 1.0):
        raise DomainError("train fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    k = int(round(train_fraction * len(records)))
    train = [records[i] for i in sorted(order[:k])]
    evals = [records[i] for i in sorted(order[k:])]
    return train, evals


def prompt_context(
    record: AlignmentRecord, prompt_frames: int
) -> tuple[DurationContext, MaskSequence, int]:
    """Build the evaluation context: a known prompt prefix, the rest masked.

    The prompt covers the shortest phoneme prefix whose duration reaches
    ``prompt_frames``, clamped so at least one position stays masked. Returns
    the context, the mask, and the ground-truth masked frame total.
    """
    n = len(record.durations)
    cum = 0
    k = 0
    for f in record.durations.frames:
        if cum >= prompt_frames:
            break
        cum += f
        k += 1
    k = min(k, n - 1)
    mask = MaskSequence([1 if i >= k else 0 for i in range(n)])
    context = build_context(record.durations, mask)
    gt_masked = sum(record.durations.frames[k:])
    return context, mask, int(gt_masked)
