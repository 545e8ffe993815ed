"""Exception types shared across the package."""

from __future__ import annotations


class ShapeError(ValueError):
    """Array shapes do not line up."""


class NumericError(FloatingPointError):
    """A NaN or infinity showed up where finite values are required."""


class FrozenModelError(RuntimeError):
    """Gradient work was requested on a frozen model."""


class DataError(ValueError):
    """Training data does not satisfy a precondition (e.g. a missing class)."""


class DegenerateProfileError(ValueError):
    """Pre-training signals cannot produce a usable user profile."""


class DegenerateDensityError(ValueError):
    """Too few or constant samples for density estimation."""


class PreconditionError(RuntimeError):
    """An operation was called before its required setup step."""


class BufferNotReady(RuntimeError):
    """Replay buffer holds fewer transitions than the requested batch."""


class SilentSignalError(ValueError):
    """A signal has no usable (non-DC) content for spectral analysis."""
