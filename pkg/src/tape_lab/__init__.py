"""tape-lab: compaction simulation and latent roughness descriptors for composite tapes."""

__version__ = "0.1.0"

from . import compaction, latent, metrics, profile, synth
from .errors import (
    DegenerateInputError,
    DegenerateTargetError,
    InvalidArgumentError,
    InvalidDataError,
    NumericError,
    ParseError,
    ResourceLimitError,
    TapeLabError,
    TerminalState,
)

__all__ = [
    "__version__",
    "compaction",
    "latent",
    "metrics",
    "profile",
    "synth",
    "TapeLabError",
    "InvalidArgumentError",
    "InvalidDataError",
    "DegenerateInputError",
    "DegenerateTargetError",
    "ParseError",
    "ResourceLimitError",
    "NumericError",
    "TerminalState",
]
