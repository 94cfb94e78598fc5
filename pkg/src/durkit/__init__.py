"""durkit: total-duration-aware phoneme duration modeling for TTS front-ends."""

from .core import (
    DurationContext,
    DurationSequence,
    MaskSequence,
    PhonemeSequence,
    TargetTrack,
    build_context,
    build_target_track,
    inverse_log_transform,
    log_transform,
    masked_sum,
)
from .errors import (
    DegenerateInputError,
    DomainError,
    DurkitError,
    InfeasibleTargetError,
    LengthMismatchError,
)
from .masking import MaskPolicy, cosine_schedule, sample_ratio_mask, sample_span_mask
from .metrics import GaussianSummary, fdd, pre_lr_deviation, total_duration_error
from .nnet import (
    DurationTransformer,
    ModelCheckpoint,
    TransformerConfig,
    load_checkpoint,
    save_checkpoint,
)
from .regulator import RegulationResult, length_regulate, scaling_factor, uniform_normalize_integer

__version__ = "0.1.0"

__all__ = [
    "DurationContext",
    "DurationSequence",
    "MaskSequence",
    "PhonemeSequence",
    "TargetTrack",
    "build_context",
    "build_target_track",
    "inverse_log_transform",
    "log_transform",
    "masked_sum",
    "DegenerateInputError",
    "DomainError",
    "DurkitError",
    "InfeasibleTargetError",
    "LengthMismatchError",
    "MaskPolicy",
    "cosine_schedule",
    "sample_ratio_mask",
    "sample_span_mask",
    "GaussianSummary",
    "fdd",
    "pre_lr_deviation",
    "total_duration_error",
    "DurationTransformer",
    "ModelCheckpoint",
    "TransformerConfig",
    "load_checkpoint",
    "save_checkpoint",
    "RegulationResult",
    "length_regulate",
    "scaling_factor",
    "uniform_normalize_integer",
    "__version__",
]
