"""Training-time mask samplers and the cosine schedule for iterative decoding.

Two families of masks are used during training: contiguous spans (with an
occasional mask-everything draw) for the continuous models, and non-contiguous
random subsets whose size follows the cosine schedule for the discrete model.
All randomness flows through an explicit numpy Generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import MaskSequence
from .errors import DomainError

SPAN_FAMILY = "contiguous-span"
RATIO_FAMILY = "random-ratio"


@dataclass(frozen=True)
class MaskPolicy:
    """Parameters of the training mask distribution."""

    mask_all_probability: float = 0.2
    span_fraction_range: tuple[float, float] = (0.1, 1.0)
    family: str = SPAN_FAMILY

    def __post_init__(self):
        lo, hi = self.span_fraction_range
        if not (0.0 < lo <= hi <= 1.0):
            raise DomainError("span fraction range must satisfy 0 < lo <= hi <= 1")
        if not (0.0 <= self.mask_all_probability <= 1.0):
            raise DomainError("mask_all_probability must lie in [0, 1]")
        if self.family not in (SPAN_FAMILY, RATIO_FAMILY):
            raise DomainError(f"unknown mask family: {self.family}")


def cosine_schedule(r: float) -> float:
    """Masking-ratio schedule gamma(r) = cos(pi * r / 2), decreasing from 1 to 0."""
    if not (0.0 <= r <= 1.0):
        raise DomainError(f"schedule argument must lie in [0, 1], got {r}")
    return math.cos(math.pi * r / 2.0)


def sample_span_mask(n: int, policy: MaskPolicy, rng: np.random.Generator) -> MaskSequence:
    """Draw a contiguous-span training mask.

    With probability ``policy.mask_all_probability`` every position is masked;
    otherwise a single span of length round(f * n) is placed at a uniform
    start, with f uniform in the policy's fraction range.
    """
    if n < 1:
        raise DomainError("sequence length must be >= 1")
    if rng.random() < policy.mask_all_probability:
        return MaskSequence([1] * n)
    lo, hi = policy.span_fraction_range
    f = rng.uniform(lo, hi)
    span = int(math.floor(f * n + 0.5))  # round half up
    span = min(max(span, 1), n)
    start = int(rng.integers(0, n - span + 1))
    flags = [0] * n
    for i in range(start, start + span):
        flags[i] = 1
    return MaskSequence(flags)


def sample_ratio_mask(n: int, rng: np.random.Generator) -> MaskSequence:
    """Draw a non-contiguous mask whose size follows the cosine schedule.

    r is uniform in (0, 1]; ceil(gamma(r) * n) positions are masked, clamped
    to at least one.
    """
    if n < 1:
        raise DomainError("sequence length must be >= 1")
    r = 1.0 - rng.random()  # uniform in (0, 1]
    k = int(math.ceil(cosine_schedule(r) * n))
    k = min(max(k, 1), n)
    chosen = rng.choice(n, size=k, replace=False)
    flags = [0] * n
    for i in chosen:
        flags[int(i)] = 1
    return MaskSequence(flags)
