"""Utility modules for simevade."""

from .exceptions import (
    AsmSyntaxError,
    EmptyCandidatesError,
    GenerationRetryExceededError,
    NoCandidatesError,
    NoExitError,
    PoolTooSmallError,
    ReportInvariantError,
    SimEvadeError,
    UncorrectableError,
    UnknownGroundTruthError,
    UnknownOpcodeError,
    UnresolvedLabelError,
)
from .hashing import derive_seed, hash64

__all__ = [
    # Exceptions
    "AsmSyntaxError",
    "EmptyCandidatesError",
    "GenerationRetryExceededError",
    "NoCandidatesError",
    "NoExitError",
    "PoolTooSmallError",
    "ReportInvariantError",
    "SimEvadeError",
    "UncorrectableError",
    "UnknownGroundTruthError",
    "UnknownOpcodeError",
    "UnresolvedLabelError",
    # Hashing
    "derive_seed",
    "hash64",
]
