"""Domain types for masked phoneme-duration prediction, plus log-domain transforms.

Durations are measured in integer frame counts for data and non-negative reals
for intermediate model outputs; the wall-clock length of a frame is metadata
that never enters the math.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np

from .errors import DegenerateInputError, DomainError, LengthMismatchError

Number = Union[int, float]


@dataclass(frozen=True)
class PhonemeSequence:
    """Integer phoneme ids for one utterance."""

    tokens: tuple[int, ...]

    def __init__(self, tokens: Iterable[int], vocab_size: int | None = None):
        tokens = tuple(int(t) for t in tokens)
        if len(tokens) == 0:
            raise DegenerateInputError("phoneme sequence must have length >= 1")
        if any(t < 0 for t in tokens):
            raise DomainError("phoneme ids must be non-negative")
        if vocab_size is not None and any(t >= vocab_size for t in tokens):
            raise DomainError(f"phoneme id out of range for vocab_size={vocab_size}")
        object.__setattr__(self, "tokens", tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.tokens, dtype=np.int64)


@dataclass(frozen=True)
class DurationSequence:
    """Per-phoneme durations in frames.

    Ground-truth data carries integer counts >= 1; model outputs may be
    non-negative reals.
    """

    frames: tuple[Number, ...]

    def __init__(self, frames: Iterable[Number]):
        frames = tuple(int(f) if float(f).is_integer() else float(f) for f in frames)
        if len(frames) == 0:
            raise DegenerateInputError("duration sequence must have length >= 1")
        if any(f < 0 for f in frames):
            raise DomainError("durations must be non-negative")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.frames, dtype=np.float64)

    def is_integral(self) -> bool:
        return all(isinstance(f, int) for f in self.frames)


@dataclass(frozen=True)
class MaskSequence:
    """Binary flags; 1 marks a position whose duration must be predicted."""

    flags: tuple[int, ...]

    def __init__(self, flags: Iterable[Number]):
        flags = tuple(int(bool(f)) for f in flags)
        if len(flags) == 0:
            raise DegenerateInputError("mask sequence must have length >= 1")
        object.__setattr__(self, "flags", flags)

    def __len__(self) -> int:
        return len(self.flags)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.flags, dtype=np.int64)

    def count(self) -> int:
        return sum(self.flags)

    def require_any(self) -> None:
        if self.count() == 0:
            raise DegenerateInputError("prediction requested but no position is masked")


@dataclass(frozen=True)
class DurationContext:
    """Masked duration sequence: zeros where unknown, true durations where known."""

    values: tuple[Number, ...]
    mask: MaskSequence

    def __post_init__(self):
        if len(self.values) != len(self.mask):
            raise LengthMismatchError("context values and mask lengths differ")
        for v, m in zip(self.values, self.mask.flags):
            if m and v != 0:
                raise DomainError("masked context positions must hold 0")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class TargetTrack:
    """Total-duration conditioning: the scalar target and its per-position track."""

    total: Number
    track: tuple[Number, ...] = field(default=())

    def __post_init__(self):
        if self.total < 0:
            raise DomainError("target total duration must be >= 0")

    def __len__(self) -> int:
        return len(self.track)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.track, dtype=np.float64)


def build_context(durations: DurationSequence, mask: MaskSequence) -> DurationContext:
    """Zero out the masked positions of a duration sequence.

    The returned context keeps known durations and holds 0 wherever the mask
    marks a position as unknown.
    """
    if len(durations) != len(mask):
        raise LengthMismatchError(
            f"durations ({len(durations)}) and mask ({len(mask)}) lengths differ"
        )
    values = tuple(0 if m else d for d, m in zip(durations.frames, mask.flags))
    return DurationContext(values=values, mask=mask)


def build_target_track(mask: MaskSequence, total: Number) -> TargetTrack:
    """Spread the scalar target total over the masked positions.

    track[n] = total where mask[n] = 1 and 0 elsewhere.
    """
    if total < 0:
        raise DomainError("target total duration must be >= 0")
    track = tuple(total if m else 0 for m in mask.flags)
    return TargetTrack(total=total, track=track)


def log_transform(x):
    """log(1 + x), elementwise for sequences; the +1 keeps zero durations finite."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0):
        raise DomainError("log transform requires non-negative input")
    out = np.log1p(arr)
    return float(out) if np.isscalar(x) or out.ndim == 0 else out


def inverse_log_transform(x):
    """Inverse of :func:`log_transform`: exp(x) - 1."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.expm1(arr)
    return float(out) if np.isscalar(x) or out.ndim == 0 else out


def masked_sum(durations: DurationSequence, mask: MaskSequence) -> Number:
    """Sum of durations over masked positions."""
    if len(durations) != len(mask):
        raise LengthMismatchError(
            f"durations ({len(durations)}) and mask ({len(mask)}) lengths differ"
        )
    return sum(d * m for d, m in zip(durations.frames, mask.flags))
