"""
Exception hierarchy for drdpo
"""

from typing import Any, Optional, Tuple


class DrDPOError(Exception):
    """Base class for every error raised by the library."""


class ConfigError(DrDPOError, ValueError):
    """Invalid hyper-parameter, empty dataset or malformed configuration."""


class DomainError(DrDPOError, ValueError):
    """Argument outside the mathematical domain of a function."""


class RangeError(DrDPOError, IndexError):
    """Prompt or completion index out of range."""


class ShapeError(DrDPOError, ValueError):
    """Tables or distributions with incompatible shapes."""


class InfiniteDivergenceError(DrDPOError, ArithmeticError):
    """The divergence is +inf (q puts mass where q0 has none)."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"q0[{index}] = 0 while q[{index}] > 0: divergence is infinite")


class ConvergenceError(DrDPOError, RuntimeError):
    """An iterative oracle stopped short of its tolerance."""

    def __init__(self, message: str, best: Any = None, gap: Optional[float] = None):
        self.best = best
        self.gap = gap
        super().__init__(message)


class NonFiniteLossError(DrDPOError, FloatingPointError):
    """A loss evaluated to nan or inf.

    ``where`` is the training step (int) or the logit coordinate (tuple)
    at which the value appeared.
    """

    def __init__(self, where: Any, value: float):
        self.where = where
        self.value = value
        super().__init__(f"non-finite loss {value!r} at {where}")


class StorageError(DrDPOError, OSError):
    """Reading or writing an artifact failed."""


__all__: Tuple[str, ...] = (
    "DrDPOError",
    "ConfigError",
    "DomainError",
    "RangeError",
    "ShapeError",
    "InfiniteDivergenceError",
    "ConvergenceError",
    "NonFiniteLossError",
    "StorageError",
)
