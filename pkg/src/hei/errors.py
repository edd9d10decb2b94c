"""Exception types shared across the package."""

from hei.ckks.params import ParameterError

__all__ = [
    "HeError",
    "ParameterError",
    "CapacityError",
    "LevelError",
    "ScaleError",
    "MissingKeyError",
    "IncompatibleError",
    "FormatError",
    "ProtocolError",
]


class HeError(Exception):
    """Base class for homomorphic-pipeline errors."""


class CapacityError(HeError):
    """Input does not fit in the available ciphertext slots."""


class LevelError(HeError):
    """Modulus chain exhausted or operand levels cannot be aligned."""


class ScaleError(HeError):
    """Operand scales differ and cannot be aligned."""


class MissingKeyError(HeError):
    """A required Galois or relinearization key is not present."""


class IncompatibleError(HeError):
    """Objects built under different parameter sets or keys."""


class FormatError(HeError):
    """Malformed serialized object or weight file."""


class ProtocolError(HeError):
    """Malformed or out-of-order protocol frame."""
