"""Distribution-quality and constraint metrics for predicted durations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DurationSequence, MaskSequence, log_transform, masked_sum
from .errors import DegenerateInputError, DomainError


@dataclass(frozen=True)
class GaussianSummary:
    """Moments of log-domain durations: mean, population stddev, sample count."""

    mean: float
    stddev: float
    count: int

    @classmethod
    def fit(cls, samples: Sequence[float]) -> "GaussianSummary":
        arr = np.asarray(samples, dtype=np.float64)
        if arr.size < 2:
            raise DegenerateInputError("need at least 2 samples to fit moments")
        logs = log_transform(arr)
        return cls(mean=float(np.mean(logs)), stddev=float(np.std(logs)), count=int(arr.size))


def fdd(reference: Sequence[float], generated: Sequence[float]) -> float:
    """Frechet distance between Gaussians fitted to log(1+d) of each sample set.

    Returns (mu_ref - mu_gen)^2 + (sigma_ref - sigma_gen)^2. Silence-phoneme
    durations are expected to be excluded by the caller.
    """
    ref = GaussianSummary.fit(reference)
    gen = GaussianSummary.fit(generated)
    return (ref.mean - gen.mean) ** 2 + (ref.stddev - gen.stddev) ** 2


def total_duration_error(
    predicted: DurationSequence, mask: MaskSequence, d_tgt: float
) -> float:
    """Relative gap between the masked sum and the requested target."""
    if d_tgt == 0:
        raise DomainError("target duration must be nonzero")
    return abs(masked_sum(predicted, mask) - d_tgt) / d_tgt


def pre_lr_deviation(
    raw_predicted: DurationSequence, mask: MaskSequence, d_tgt: float
) -> float:
    """Relative target gap of the raw model output, before length regulation.

    Low values mean the model itself is aware of the target total rather than
    relying on the regulator to fix the sum.
    """
    return total_duration_error(raw_predicted, mask, d_tgt)
