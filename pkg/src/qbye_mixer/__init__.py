"""Query-by-example keyword spotting with a feature/time-mixing MLP encoder.

Pipeline: 1 s windows -> 81x81 MFCC + CMVN -> stacked mixing blocks ->
time-averaged 81-dim embedding -> cosine matching against enrollments.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .frontend import AudioClip, FrontendConfig, apply_cmvn, compute_mfcc, featurize, load_wav
from .mixer import REFERENCE_CONFIG, ActivationKind, InputMode, MixerConfig, count_macs, count_params, encoder_forward
from .runtime import EmbeddingSequence, EnrollmentProfile, detect, embed_utterance, enroll, match_score

__version__ = "0.1.0"

__all__ = [
    "REFERENCE_CONFIG",
    "ActivationKind",
    "AudioClip",
    "Checkpoint",
    "EmbeddingSequence",
    "EnrollmentProfile",
    "FrontendConfig",
    "InputMode",
    "MixerConfig",
    "apply_cmvn",
    "compute_mfcc",
    "count_macs",
    "count_params",
    "detect",
    "embed_utterance",
    "encoder_forward",
    "enroll",
    "featurize",
    "load_checkpoint",
    "load_wav",
    "match_score",
    "save_checkpoint",
]
