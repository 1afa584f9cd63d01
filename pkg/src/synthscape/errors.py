"""Exception types shared across the pipeline."""

from __future__ import annotations


class SynthscapeError(Exception):
    """Base class for all errors raised by this package."""


class AudioFormatError(SynthscapeError):
    """A WAV file could not be decoded (bad container, encoding or truncation)."""


class DataError(SynthscapeError):
    """Inputs are inconsistent: unknown ids, malformed catalogs, join failures."""


class ConstraintError(SynthscapeError):
    """A sampling constraint could not be satisfied within the retry budget."""

    def __init__(self, constraint: str, message: str):
        super().__init__(f"{constraint}: {message}")
        self.constraint = constraint
        self._message = message

    def __reduce__(self):
        return type(self), (self.constraint, self._message)


class IsolationRejected(SynthscapeError):
    """An isolation candidate was discarded; ``reason`` is a short machine tag."""

    def __init__(self, reason: str, message: str = ""):
        super().__init__(f"{reason}: {message}" if message else reason)
        self.reason = reason
        self._message = message

    def __reduce__(self):
        return type(self), (self.reason, self._message)


class SceneRejected(SynthscapeError):
    """A realized scene violated a post-condition and must be resampled."""

    def __init__(self, reason: str, value: float):
        super().__init__(f"{reason} ({value:.4g})")
        self.reason = reason
        self.value = value

    def __reduce__(self):
        return type(self), (self.reason, self.value)
