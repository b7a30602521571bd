"""Small end-to-end speech recognition toolkit: log-spectrogram features,
convolutional front ends, bidirectional GRUs, CTC training and decoding,
Kneser-Ney language models, and WER/CER scoring. Everything numerical is
plain numpy so the whole pipeline stays inspectable."""

__version__ = "0.1.0"

from .alphabet import Alphabet, build_alphabet
from .errors import (
    ConfigError,
    ContractViolation,
    CtcAsrError,
    DataError,
    FormatError,
    InfeasibleTargetError,
    ShapeError,
    UsageError,
)
from .model import MODEL_CONFIGS, ModelConfig, Network, build_model

__all__ = [
    "Alphabet",
    "build_alphabet",
    "ConfigError",
    "ContractViolation",
    "CtcAsrError",
    "DataError",
    "FormatError",
    "InfeasibleTargetError",
    "ShapeError",
    "UsageError",
    "MODEL_CONFIGS",
    "ModelConfig",
    "Network",
    "build_model",
    "__version__",
]
