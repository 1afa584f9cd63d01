"""Waveform container and the sample-domain operations used by the pipeline.

Every function here is pure: inputs are never mutated and randomness comes
only from the generator handed in by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import signal

from . import wavio

__all__ = [
    "AudioClip",
    "NormalizeResult",
    "SAMPLE_RATE",
    "read_audio",
    "write_audio",
    "resample",
    "rms_dbfs",
    "normalize_rms",
    "add_gaussian_noise",
    "mix",
    "seconds_to_samples",
]

SAMPLE_RATE = 48000
REFERENCE_DBFS = -10.0

# resampling kernel
_TAPS_PER_PHASE = 64
_KAISER_BETA = 8.0
# cutoff as a fraction of the lower Nyquist; places the Kaiser transition band
# below Nyquist so nothing images above it
_CUTOFF_RATIO = 0.92


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono waveform.

    ``samples`` is stored as a read-only float64 array. ``freq_bounds`` is the
    optional ``(f_lo, f_hi)`` band in Hz that the recording is valid over.
    """

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""
    freq_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"AudioClip is mono; got array of shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        if self.freq_bounds is not None:
            lo, hi = (float(v) for v in self.freq_bounds)
            if not 0.0 <= lo < hi <= self.sample_rate / 2:
                raise ValueError(
                    f"freq_bounds {self.freq_bounds} outside [0, {self.sample_rate / 2}] or empty"
                )
            object.__setattr__(self, "freq_bounds", (lo, hi))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "AudioClip":
        return replace(self, samples=samples)

    def segment(self, start: int, stop: int) -> "AudioClip":
        """Sub-clip by sample index, keeping provenance."""
        return replace(self, samples=self.samples[start:stop])


class NormalizeResult(NamedTuple):
    clip: AudioClip
    gain: float
    clip_fraction: float


def seconds_to_samples(seconds: float, rate: int) -> int:
    return int(round(seconds * rate))


def read_audio(path: str | Path, source_id: str | None = None) -> AudioClip:
    """Load a WAV file as a mono clip (channels averaged)."""
    frames, rate = wavio.read_wav(path)
    mono = frames.mean(axis=1) if frames.shape[1] > 1 else frames[:, 0]
    return AudioClip(mono, rate, source_id if source_id is not None else Path(path).stem)


def write_audio(clip: AudioClip, path: str | Path, encoding: str = "float32") -> None:
    if len(clip) == 0:
        raise ValueError("cannot write an empty clip")
    wavio.write_wav(path, clip.samples, clip.sample_rate, encoding)


@lru_cache(maxsize=16)
def _resample_filter(up: int, down: int) -> np.ndarray:
    max_rate = max(up, down)
    numtaps = _TAPS_PER_PHASE * max_rate + 1
    return signal.firwin(numtaps, _CUTOFF_RATIO / max_rate, window=("kaiser", _KAISER_BETA))


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase windowed-sinc resampling (Kaiser, beta 8, 64 taps per phase)."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    g = math.gcd(clip.sample_rate, int(target_rate))
    up, down = int(target_rate) // g, clip.sample_rate // g
    h = _resample_filter(up, down)
    y = signal.resample_poly(clip.samples, up, down, window=h)
    bounds = clip.freq_bounds
    if bounds is not None and bounds[1] > target_rate / 2:
        hi = target_rate / 2
        bounds = (bounds[0], hi) if bounds[0] < hi else None
    return replace(clip, samples=y, sample_rate=int(target_rate), freq_bounds=bounds)


def rms_dbfs(clip: AudioClip) -> float:
    """RMS level in dBFS; ``-inf`` for digital silence."""
    if len(clip) == 0:
        raise ValueError("rms of an empty clip is undefined")
    ms = float(np.mean(np.square(clip.samples)))
    if ms == 0.0:
        return -math.inf
    return 10.0 * math.log10(ms)


def normalize_rms(clip: AudioClip, target_dbfs: float = REFERENCE_DBFS) -> NormalizeResult:
    """Scale to ``target_dbfs`` RMS, hard-clipping anything beyond full scale."""
    level = rms_dbfs(clip)
    if level == -math.inf:
        raise ValueError(f"cannot normalize silent clip {clip.source_id!r}")
    gain = 10.0 ** ((target_dbfs - level) / 20.0)
    y = clip.samples * gain
    over = np.abs(y) > 1.0
    clip_fraction = float(np.count_nonzero(over)) / y.size
    if clip_fraction:
        y = np.clip(y, -1.0, 1.0)
    return NormalizeResult(clip.with_samples(y), gain, clip_fraction)


def add_gaussian_noise(clip: AudioClip, sigma: float, rng: np.random.Generator) -> AudioClip:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    noise = rng.normal(0.0, sigma, size=len(clip))
    return clip.with_samples(clip.samples + noise)


def mix(base: AudioClip, overlay: AudioClip, offset: float, gain: float = 1.0) -> AudioClip:
    """Add ``gain * overlay`` into ``base`` starting ``offset`` seconds in."""
    if base.sample_rate != overlay.sample_rate:
        raise ValueError(
            f"sample rate mismatch: base {base.sample_rate} Hz, overlay {overlay.sample_rate} Hz"
        )
    if offset < 0:
        raise ValueError("offset must be non-negative")
    start = seconds_to_samples(offset, base.sample_rate)
    stop = start + len(overlay)
    if stop > len(base):
        raise ValueError(
            f"overlay {overlay.source_id!r} ends at sample {stop}, past base length {len(base)}"
        )
    out = base.samples.copy()
    out[start:stop] += gain * overlay.samples
    return base.with_samples(out)
