"""Length regulation: scale predicted durations so their masked sum hits a target.

Real-valued scaling is followed by an exact integer apportionment (largest
remainder with a one-frame floor), so the output always satisfies the total
duration constraint exactly while staying as close as possible to the scaled
real values in L1 distance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DurationSequence, MaskSequence, masked_sum
from .errors import (
    DegenerateInputError,
    DomainError,
    InfeasibleTargetError,
    LengthMismatchError,
)


@dataclass(frozen=True)
class RegulationResult:
    """Adjusted durations together with the real scaling factor applied."""

    durations: DurationSequence
    alpha: float


def scaling_factor(predicted: DurationSequence, mask: MaskSequence, target: float) -> float:
    """alpha = target / (masked sum of predictions)."""
    if target <= 0:
        raise DomainError(f"target must be positive, got {target}")
    s = masked_sum(predicted, mask)
    if s <= 0:
        raise DegenerateInputError("masked sum of predictions is zero")
    return target / s


def uniform_normalize_integer(
    values: Sequence[float], target: int, cap: int | None = None
) -> list[int]:
    """Apportion ``target`` frames over entries proportionally to ``values``.

    Entries are scaled by target/sum(values), floored with a one-frame
    minimum, and leftover units are assigned one each by decreasing fractional
    part (ties to the lower index). When the one-frame floor overshoots the
    target, units are taken back from the highest-index entries still above
    one frame. Both phases pick the move with the smallest L1 cost against
    the scaled reals, so the result is a minimal-L1 integer apportionment.

    Args:
        values: non-negative weights with a positive sum.
        target: total frames to distribute; must be >= len(values).
        cap: optional per-entry maximum (the discrete decoder's vocabulary
            bound); requires target <= len(values) * cap.

    Returns:
        Integers in [1, cap] summing exactly to ``target``.
    """
    vals = np.asarray(values, dtype=np.float64)
    n = vals.size
    if n == 0:
        raise DegenerateInputError("cannot apportion over an empty sequence")
    if np.any(vals < 0):
        raise DomainError("apportionment weights must be non-negative")
    total = float(vals.sum())
    if total <= 0:
        raise DegenerateInputError("apportionment weights sum to zero")
    if float(target) != int(target):
        raise DomainError(f"target must be an integer frame count, got {target}")
    target = int(target)
    if target < n:
        raise InfeasibleTargetError(
            f"target {target} cannot give {n} phonemes one frame each"
        )
    hi = np.inf if cap is None else int(cap)
    if cap is not None and target > n * cap:
        raise InfeasibleTargetError(
            f"target {target} exceeds {n} entries at {cap} frames each"
        )

    scaled = vals * (target / total)
    out = np.clip(np.floor(scaled), 1, hi).astype(np.int64)
    rem = target - int(out.sum())

    while rem > 0:
        # cost of granting one more frame; entries at the cap are frozen
        cost = np.where(
            out < hi, np.abs(out + 1 - scaled) - np.abs(out - scaled), np.inf
        )
        idx = int(np.argmin(cost))  # ties resolve to the lower index
        if not np.isfinite(cost[idx]):
            raise InfeasibleTargetError("all entries are at the per-entry cap")
        out[idx] += 1
        rem -= 1
    while rem < 0:
        # the one-frame floor overshot: reclaim from entries above one frame
        cost = np.where(out >= 2, np.abs(out - 1 - scaled) - np.abs(out - scaled), np.inf)
        rev = int(np.argmin(cost[::-1]))  # ties resolve to the higher index
        idx = n - 1 - rev
        if not np.isfinite(cost[idx]):
            raise InfeasibleTargetError("cannot reduce below one frame per phoneme")
        out[idx] -= 1
        rem += 1

    return [int(x) for x in out]


def length_regulate(
    predicted: DurationSequence, mask: MaskSequence, target: float
) -> RegulationResult:
    """Rescale the masked predictions so they sum to ``target`` exactly.

    Masked entries are multiplied by the scaling factor and integer-apportioned;
    unmasked entries pass through untouched.
    """
    if len(predicted) != len(mask):
        raise LengthMismatchError("predictions and mask lengths differ")
    mask.require_any()
    if target < mask.count():
        raise InfeasibleTargetError(
            f"target {target} is below the {mask.count()} masked phonemes"
        )
    alpha = scaling_factor(predicted, mask, target)
    masked_vals = [f * alpha for f, m in zip(predicted.frames, mask.flags) if m]
    apportioned = uniform_normalize_integer(masked_vals, int(target))
    frames = list(predicted.frames)
    it = iter(apportioned)
    for i, m in enumerate(mask.flags):
        if m:
            frames[i] = next(it)
    return RegulationResult(durations=DurationSequence(frames), alpha=alpha)
