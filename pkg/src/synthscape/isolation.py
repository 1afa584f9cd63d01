"""Isolated source preparation.

A raw recording goes through: noise-profile estimation on a call-free
interval, spectral subtraction, a relative-threshold mask inside a crop box,
masked resynthesis, and an RMS gate. The result keeps the cleaned audio and
the time-frequency mask that later drives SNR targeting and labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .audio import SAMPLE_RATE, AudioClip, rms_dbfs
from .errors import IsolationRejected
from .spectral import (
    DEFAULT_STFT,
    ComplexSpectrogram,
    PowerSpectrogram,
    StftParams,
    istft,
    num_frames,
    stft_complex,
    stft_power,
)

__all__ = [
    "NoiseProfile",
    "IsolatedVocalisation",
    "estimate_noise_profile",
    "spectral_subtract",
    "extract_mask",
    "mask_freq_extent",
    "isolate",
    "gate_rms",
    "GATE_DBFS",
]

GATE_DBFS = -70.0
MASK_THRESHOLD_DB = -45.0
MIN_COMPONENT_FRACTION = 1e-3
MAX_OVER_SUBTRACTION = 2.0
# residues this close to the profile are float rounding of an exact cancellation
_CANCEL_RTOL = 1e-9

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class NoiseProfile:
    mean_power: np.ndarray
    params: StftParams
    interval: tuple[float, float]


def mask_freq_extent(mask: np.ndarray, sample_rate: int, params: StftParams = DEFAULT_STFT) -> tuple[float, float]:
    """Tight frequency span in Hz of a (frames, bins) mask, using half-bin cell edges."""
    cols = np.flatnonzero(np.asarray(mask).any(axis=0))
    if cols.size == 0:
        raise ValueError("empty mask has no frequency extent")
    bin_hz = sample_rate / params.fft_size
    lo = max(0.0, (cols[0] - 0.5) * bin_hz)
    hi = min(sample_rate / 2, (cols[-1] + 0.5) * bin_hz)
    return float(lo), float(hi)


@dataclass(frozen=True, eq=False)
class IsolatedVocalisation:
    """Cleaned source sound plus its mask over its own default-params spectrogram."""

    clip: AudioClip
    source_mask: np.ndarray
    class_label: str
    freq_extent: tuple[float, float]
    rms: float
    source_start: float = 0.0

    def __post_init__(self):
        mask = np.array(self.source_mask, dtype=bool)
        expected = (num_frames(len(self.clip)), DEFAULT_STFT.num_bins)
        if mask.shape != expected:
            raise ValueError(f"mask shape {mask.shape} does not match clip spectrogram {expected}")
        if not mask.any():
            raise ValueError("source mask is empty")
        mask.flags.writeable = False
        object.__setattr__(self, "source_mask", mask)

    @property
    def id(self) -> str:
        return self.clip.source_id

    @cached_property
    def power(self) -> PowerSpectrogram:
        return stft_power(self.clip)

    @cached_property
    def mask_power(self) -> float:
        return float(self.power.values[self.source_mask].sum())


def estimate_noise_profile(
    clip: AudioClip,
    interval: tuple[float, float],
    params: StftParams = DEFAULT_STFT,
) -> NoiseProfile:
    """Mean power per bin over the frames lying wholly inside ``interval`` (seconds)."""
    t0, t1 = interval
    if not 0.0 <= t0 < t1 or t1 > clip.duration + 1e-9:
        raise ValueError(f"noise interval {interval} outside clip of {clip.duration:.3f} s")
    s0 = int(round(t0 * clip.sample_rate))
    s1 = min(int(round(t1 * clip.sample_rate)), len(clip))
    first = -(-s0 // params.hop)
    last = (s1 - params.window_size) // params.hop
    if last < first:
        raise ValueError(f"noise interval {interval} is shorter than one analysis window")
    seg = clip.segment(first * params.hop, last * params.hop + params.window_size)
    spec = stft_power(seg, params)
    return NoiseProfile(spec.values.mean(axis=0), params, (float(t0), float(t1)))


def spectral_subtract(spec: ComplexSpectrogram, profile: NoiseProfile, over_k: float = 1.0) -> ComplexSpectrogram:
    """Power subtraction with a zero floor; phases are left untouched."""
    if profile.params != spec.params or profile.mean_power.shape[0] != spec.values.shape[1]:
        raise ValueError("noise profile and spectrogram use different STFT grids")
    if not 0.0 <= over_k <= MAX_OVER_SUBTRACTION:
        raise ValueError(f"over_k must lie in [0, {MAX_OVER_SUBTRACTION}]")
    X = spec.values
    power = X.real * X.real + X.imag * X.imag
    noise = over_k * profile.mean_power[None, :]
    residual = power - noise
    keep = residual > _CANCEL_RTOL * noise
    scale = np.zeros_like(power)
    np.divide(residual, power, out=scale, where=keep & (power > 0))
    return spec.with_values(X * np.sqrt(scale))


def _crop_slices(spec: PowerSpectrogram, crop_box) -> tuple[slice, slice]:
    t0, t1, f0, f1 = (float(v) for v in crop_box)
    if t0 >= t1 or f0 >= f1:
        raise ValueError(f"degenerate crop box {crop_box}")
    times = spec.frame_centers()
    freqs = spec.bin_freqs()
    rows = np.flatnonzero((times >= t0) & (times <= t1))
    cols = np.flatnonzero((freqs >= f0) & (freqs <= f1))
    if rows.size == 0 or cols.size == 0:
        raise ValueError(f"crop box {crop_box} contains no spectrogram cells")
    return slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1)


def extract_mask(
    spec: PowerSpectrogram,
    crop_box: tuple[float, float, float, float],
    threshold_db: float = MASK_THRESHOLD_DB,
    min_component_fraction: float = MIN_COMPONENT_FRACTION,
) -> np.ndarray:
    """Cells inside ``crop_box`` (t0, t1 seconds; f0, f1 Hz) within ``threshold_db`` of the crop peak.

    Cells are selected by frame centre time and bin centre frequency. After
    thresholding, 8-connected components carrying less than
    ``min_component_fraction`` of the crop's total energy are dropped.
    May return an all-False mask; deciding what to do with that is up to
    the caller.
    """
    rows, cols = _crop_slices(spec, crop_box)
    sub = spec.values[rows, cols]
    mask = np.zeros(spec.values.shape, dtype=bool)

    if threshold_db == -math.inf:
        keep = np.ones(sub.shape, dtype=bool)
    else:
        peak = sub.max()
        if peak <= 0:
            return mask
        keep = sub >= peak * 10.0 ** (threshold_db / 10.0)

    if min_component_fraction > 0 and keep.any():
        labels, count = ndimage.label(keep, structure=_EIGHT_CONNECTED)
        if count:
            energy = ndimage.sum_labels(sub, labels, index=np.arange(1, count + 1))
            small = np.flatnonzero(energy < min_component_fraction * sub.sum()) + 1
            keep &= ~np.isin(labels, small)

    mask[rows, cols] = keep
    return mask


def gate_rms(voc: IsolatedVocalisation, threshold_dbfs: float = GATE_DBFS) -> bool:
    return rms_dbfs(voc.clip) >= threshold_dbfs


def isolate(
    clip: AudioClip,
    vocal_interval: tuple[float, float],
    noise_interval: tuple[float, float],
    crop_box: tuple[float, float, float, float] | None = None,
    threshold_db: float = MASK_THRESHOLD_DB,
    class_label: str = "",
    over_k: float = 1.0,
    gate_dbfs: float = GATE_DBFS,
    source_id: str | None = None,
) -> IsolatedVocalisation:
    """Extract one sound from a 48 kHz recording.

    ``crop_box`` limits the mask in time and frequency; its time span is
    intersected with ``vocal_interval``. When omitted the crop covers the
    vocal interval over the full band.

    Raises
    ------
    IsolationRejected
        ``reason == "empty_mask"`` if nothing survives subtraction and
        thresholding, ``"rms_gate"`` if the result is too quiet.
    """
    if clip.sample_rate != SAMPLE_RATE:
        raise ValueError(f"isolate expects {SAMPLE_RATE} Hz audio, got {clip.sample_rate}")
    params = DEFAULT_STFT
    v0, v1 = vocal_interval
    if crop_box is None:
        crop = (v0, v1, 0.0, clip.sample_rate / 2)
    else:
        t0, t1, f0, f1 = crop_box
        crop = (max(t0, v0), min(t1, v1), f0, f1)

    profile = estimate_noise_profile(clip, noise_interval, params)
    cleaned = spectral_subtract(stft_complex(clip, params), profile, over_k)
    mask = extract_mask(cleaned.power(), crop, threshold_db)
    if not mask.any():
        raise IsolationRejected("empty_mask", f"nothing within {threshold_db} dB of the crop peak")

    audio = istft(cleaned.with_values(np.where(mask, cleaned.values, 0.0)))
    rows = np.flatnonzero(mask.any(axis=1))
    first, last = int(rows[0]), int(rows[-1])
    start, stop = first * params.hop, last * params.hop + params.window_size
    out = AudioClip(audio.samples[start:stop], clip.sample_rate, source_id or clip.source_id)
    level = rms_dbfs(out)
    if not level >= gate_dbfs:
        raise IsolationRejected("rms_gate", f"{level:.2f} dBFS below {gate_dbfs} dBFS")

    trimmed = mask[first : last + 1]
    return IsolatedVocalisation(
        clip=out,
        source_mask=trimmed,
        class_label=class_label,
        freq_extent=mask_freq_extent(trimmed, clip.sample_rate, params),
        rms=level,
        source_start=start / clip.sample_rate,
    )
