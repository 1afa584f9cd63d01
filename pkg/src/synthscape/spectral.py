"""Time-frequency analysis and image rendering.

Spectrogram matrices are laid out ``(frames, bins)``: time runs down the
rows, frequency across the columns. Frames are not centre-padded, so frame
``t`` covers samples ``[t*hop, t*hop + window_size)``.

The rendered image flips this around into the usual picture orientation:
rows are frequency (low frequencies at the bottom) and columns are time.
:class:`ImageAxes` holds the forward and inverse maps between physical
units (seconds, Hz), spectrogram cells and image pixels.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image
from scipy import signal

from .audio import AudioClip

__all__ = [
    "StftParams",
    "DEFAULT_STFT",
    "PowerSpectrogram",
    "ComplexSpectrogram",
    "PcenParams",
    "ImageAxes",
    "SpectroImage",
    "num_frames",
    "stft_power",
    "stft_complex",
    "istft",
    "pcen",
    "log_freq_centers",
    "log_freq_remap",
    "lanczos_resize",
    "render_image",
    "write_matrix",
    "read_matrix",
]

IMAGE_SIZE = 256
DEFAULT_F_MIN = 40.0
DEFAULT_LOG_BINS = 256


@dataclass(frozen=True)
class StftParams:
    fft_size: int = 2048
    window_size: int = 2048
    hop: int = 512
    window_kind: str = "hann"

    def __post_init__(self):
        if min(self.fft_size, self.window_size, self.hop) <= 0:
            raise ValueError("STFT sizes must be positive")
        if self.fft_size < self.window_size:
            raise ValueError("fft_size must be >= window_size")
        if self.hop > self.window_size:
            raise ValueError("hop must be <= window_size")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window(self) -> np.ndarray:
        return _window(self.window_kind, self.window_size)


DEFAULT_STFT = StftParams()


@lru_cache(maxsize=8)
def _window(kind: str, size: int) -> np.ndarray:
    # periodic form: Hann at hop = size/4 overlap-adds to a constant
    w = signal.get_window(kind, size, fftbins=True).astype(np.float64)
    w.flags.writeable = False
    return w


def num_frames(num_samples: int, params: StftParams = DEFAULT_STFT) -> int:
    if num_samples < params.window_size:
        return 0
    return 1 + (num_samples - params.window_size) // params.hop


@dataclass(frozen=True, eq=False)
class PowerSpectrogram:
    values: np.ndarray
    params: StftParams
    sample_rate: int

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_bins(self) -> int:
        return self.values.shape[1]

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.params.fft_size

    def frame_centers(self) -> np.ndarray:
        p = self.params
        return (np.arange(self.num_frames) * p.hop + p.window_size / 2) / self.sample_rate

    def bin_freqs(self) -> np.ndarray:
        return np.arange(self.num_bins) * self.bin_hz


@dataclass(frozen=True, eq=False)
class ComplexSpectrogram:
    values: np.ndarray
    params: StftParams
    sample_rate: int
    num_samples: int

    def power(self) -> PowerSpectrogram:
        v = self.values
        return PowerSpectrogram(v.real * v.real + v.imag * v.imag, self.params, self.sample_rate)

    def with_values(self, values: np.ndarray) -> "ComplexSpectrogram":
        return ComplexSpectrogram(values, self.params, self.sample_rate, self.num_samples)


def _frame_matrix(samples: np.ndarray, params: StftParams) -> np.ndarray:
    if samples.size < params.window_size:
        raise ValueError(
            f"clip of {samples.size} samples is shorter than one window ({params.window_size})"
        )
    frames = sliding_window_view(samples, params.window_size)[:: params.hop]
    return frames * params.window()


def stft_complex(clip: AudioClip, params: StftParams = DEFAULT_STFT) -> ComplexSpectrogram:
    coeffs = np.fft.rfft(_frame_matrix(clip.samples, params), n=params.fft_size, axis=1)
    return ComplexSpectrogram(coeffs, params, clip.sample_rate, len(clip))


def stft_power(clip: AudioClip, params: StftParams = DEFAULT_STFT) -> PowerSpectrogram:
    """Power spectrogram ``|DFT(window * frame)|**2``, shape ``(frames, fft_size//2 + 1)``."""
    return stft_complex(clip, params).power()


def istft(spec: ComplexSpectrogram) -> AudioClip:
    """Weighted overlap-add inverse of :func:`stft_complex`.

    Each frame is windowed again on synthesis and the sum is divided by the
    overlap-added squared window, which inverts the analysis exactly wherever
    that sum is non-zero.
    """
    p = spec.params
    w = p.window()
    n_frames = spec.values.shape[0]
    span = (n_frames - 1) * p.hop + p.window_size if n_frames else 0
    length = max(span, spec.num_samples)

    wsq = np.zeros(length)
    for t in range(n_frames):
        wsq[t * p.hop : t * p.hop + p.window_size] += w * w
    interior = wsq[p.window_size : span - p.window_size]
    if interior.size and interior.min() <= 1e-10 * wsq.max():
        raise ValueError(
            f"window {p.window_kind!r} with hop {p.hop} does not satisfy overlap-add reconstruction"
        )

    frames = np.fft.irfft(spec.values, n=p.fft_size, axis=1)[:, : p.window_size] * w
    y = np.zeros(length)
    for t in range(n_frames):
        y[t * p.hop : t * p.hop + p.window_size] += frames[t]
    covered = wsq > 1e-10 * (wsq.max() if wsq.size else 1.0)
    y[covered] /= wsq[covered]
    y[~covered] = 0.0
    return AudioClip(y[: spec.num_samples] if spec.num_samples else y, spec.sample_rate)


@dataclass(frozen=True)
class PcenParams:
    smoothing_s: float = 0.025
    alpha: float = 0.98
    delta: float = 2.0
    r: float = 0.5
    eps: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.smoothing_s <= 1.0:
            raise ValueError("smoothing_s must lie in (0, 1]")
        if self.eps <= 0 or self.r <= 0:
            raise ValueError("eps and r must be positive")


def pcen(values: np.ndarray | PowerSpectrogram, params: PcenParams = PcenParams()) -> np.ndarray:
    """Per-channel energy normalization along the time axis.

    The smoother is a one-pole IIR filter per frequency bin, initialised so
    that its first output equals the first input frame.
    """
    E = np.asarray(values.values if isinstance(values, PowerSpectrogram) else values, dtype=np.float64)
    if E.size == 0:
        raise ValueError("pcen of an empty spectrogram")
    s = params.smoothing_s
    zi = (1.0 - s) * E[:1]
    M, _ = signal.lfilter([s], [1.0, s - 1.0], E, axis=0, zi=zi)
    gain = (params.eps + M) ** (-params.alpha)
    return (E * gain + params.delta) ** params.r - params.delta ** params.r


def log_freq_centers(f_min: float, f_max: float, out_bins: int) -> np.ndarray:
    j = np.arange(out_bins)
    return f_min * (f_max / f_min) ** (j / (out_bins - 1))


def log_freq_remap(
    values: np.ndarray,
    f_min: float,
    f_max: float,
    out_bins: int,
    nyquist: float,
) -> np.ndarray:
    """Resample the frequency axis (last axis, linear ``0..nyquist``) onto log-spaced centres."""
    values = np.asarray(values, dtype=np.float64)
    if not 0.0 < f_min < f_max <= nyquist:
        raise ValueError(f"need 0 < f_min < f_max <= nyquist, got {f_min}, {f_max}, {nyquist}")
    if out_bins < 2:
        raise ValueError("out_bins must be >= 2")
    n_src = values.shape[-1]
    pos = log_freq_centers(f_min, f_max, out_bins) / nyquist * (n_src - 1)
    i0 = np.minimum(np.floor(pos).astype(np.intp), n_src - 2)
    frac = pos - i0
    return values[..., i0] * (1.0 - frac) + values[..., i0 + 1] * frac


def _lanczos_kernel(x: np.ndarray, a: int) -> np.ndarray:
    return np.where(np.abs(x) < a, np.sinc(x) * np.sinc(x / a), 0.0)


@lru_cache(maxsize=32)
def _lanczos_taps(n_in: int, n_out: int, a: int) -> tuple[np.ndarray, np.ndarray]:
    scale = n_in / n_out
    stretch = max(scale, 1.0)  # widen the kernel when shrinking (anti-aliasing)
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    radius = a * stretch
    k = int(math.ceil(2 * radius)) + 1
    start = np.floor(centers - radius).astype(np.intp) + 1
    src = start[:, None] + np.arange(k)[None, :]
    w = _lanczos_kernel((src - centers[:, None]) / stretch, a)
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(src, 0, n_in - 1)
    return idx, w


def _resize_axis0(m: np.ndarray, n_out: int, a: int) -> np.ndarray:
    idx, w = _lanczos_taps(m.shape[0], n_out, a)
    out = np.zeros((n_out,) + m.shape[1:])
    # fixed summation order keeps the result bit-stable
    for j in range(idx.shape[1]):
        out += w[:, j, None] * m[idx[:, j]]
    return out


def lanczos_resize(matrix: np.ndarray, out_h: int, out_w: int, a: int = 3) -> np.ndarray:
    """Separable Lanczos resampling with clamped edges and unit-sum kernels."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or min(m.shape) < 1 or out_h < 1 or out_w < 1:
        raise ValueError("lanczos_resize needs a non-empty 2-D matrix and positive sizes")
    m = _resize_axis0(m, out_h, a)
    return _resize_axis0(m.T, out_w, a).T


@dataclass(frozen=True)
class ImageAxes:
    """Coordinate maps for one rendered scene.

    Pixel coordinates are continuous edge coordinates: ``x`` runs 0..width
    left to right in time, ``y`` runs 0..height top to bottom, so high
    frequencies have small ``y``.
    """

    sample_rate: int
    num_frames: int
    f_min: float
    f_max: float
    params: StftParams = DEFAULT_STFT
    log_bins: int = DEFAULT_LOG_BINS
    width: int = IMAGE_SIZE
    height: int = IMAGE_SIZE

    @property
    def num_bins(self) -> int:
        return self.params.num_bins

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.params.fft_size

    def frame_center(self, t):
        p = self.params
        return (np.asarray(t) * p.hop + p.window_size / 2) / self.sample_rate

    def frame_extent(self, t: int) -> tuple[float, float]:
        """Time span in seconds that cell row ``t`` stands for (one hop wide)."""
        c = float(self.frame_center(t))
        half = self.params.hop / 2 / self.sample_rate
        return c - half, c + half

    def bin_extent(self, k: int) -> tuple[float, float]:
        lo = max(0.0, (k - 0.5) * self.bin_hz)
        hi = min(self.nyquist, (k + 0.5) * self.bin_hz)
        return lo, hi

    def time_to_x(self, time):
        p = self.params
        u = (np.asarray(time, dtype=np.float64) * self.sample_rate - p.window_size / 2) / p.hop
        return (u + 0.5) * self.width / self.num_frames

    def x_to_time(self, x):
        p = self.params
        u = np.asarray(x, dtype=np.float64) * self.num_frames / self.width - 0.5
        return (u * p.hop + p.window_size / 2) / self.sample_rate

    def freq_to_y(self, freq):
        f = np.maximum(np.asarray(freq, dtype=np.float64), 1e-9)
        j = (self.log_bins - 1) * np.log(f / self.f_min) / math.log(self.f_max / self.f_min)
        return self.height - (j + 0.5) * self.height / self.log_bins

    def y_to_freq(self, y):
        j = (self.height - np.asarray(y, dtype=np.float64)) * self.log_bins / self.height - 0.5
        return self.f_min * (self.f_max / self.f_min) ** (j / (self.log_bins - 1))

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "num_frames": self.num_frames,
            "num_bins": self.num_bins,
            "fft_size": self.params.fft_size,
            "window_size": self.params.window_size,
            "hop": self.params.hop,
            "window": self.params.window_kind,
            "f_min": self.f_min,
            "f_max": self.f_max,
            "log_bins": self.log_bins,
            "width": self.width,
            "height": self.height,
        }


@dataclass(frozen=True, eq=False)
class SpectroImage:
    pixels: np.ndarray  # (height, width) uint8, row 0 = highest frequency
    axes: ImageAxes = field(repr=False)

    def rgb(self) -> np.ndarray:
        return np.repeat(self.pixels[:, :, None], 3, axis=2)

    def save_png(self, path: str | Path, channels: int = 3) -> None:
        if channels == 1:
            Image.fromarray(self.pixels, mode="L").save(path, format="PNG")
        elif channels == 3:
            Image.fromarray(self.rgb(), mode="RGB").save(path, format="PNG")
        else:
            raise ValueError("channels must be 1 or 3")


def render_image(
    spec: PowerSpectrogram,
    pcen_params: PcenParams = PcenParams(),
    f_min: float = DEFAULT_F_MIN,
    f_max: float | None = None,
    log_bins: int = DEFAULT_LOG_BINS,
    size: tuple[int, int] = (IMAGE_SIZE, IMAGE_SIZE),
) -> SpectroImage:
    """PCEN, log-frequency remap, Lanczos resize and min-max quantisation to 8 bits."""
    nyquist = spec.sample_rate / 2
    f_max = nyquist if f_max is None else f_max
    height, width = size
    normed = pcen(spec.values, pcen_params)
    logf = log_freq_remap(normed, f_min, f_max, log_bins, nyquist)
    resized = lanczos_resize(logf, width, height)  # (time, freq)
    img = resized.T[::-1]
    lo, hi = img.min(), img.max()
    if hi > lo:
        pixels = np.round((img - lo) * (255.0 / (hi - lo))).astype(np.uint8)
    else:
        pixels = np.zeros(img.shape, dtype=np.uint8)
    axes = ImageAxes(spec.sample_rate, spec.num_frames, f_min, f_max, spec.params, log_bins, width, height)
    return SpectroImage(np.ascontiguousarray(pixels), axes)


_MATRIX_MAGIC = b"SSMX"


def write_matrix(path: str | Path, matrix: np.ndarray, axes: dict | None = None) -> None:
    """Dump a 2-D matrix as little-endian float32, row-major, behind a JSON header."""
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ValueError("write_matrix expects a 2-D matrix")
    header = json.dumps({"rows": m.shape[0], "cols": m.shape[1], "axes": axes or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MATRIX_MAGIC + struct.pack("<I", len(header)) + header)
        fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def read_matrix(path: str | Path) -> tuple[np.ndarray, dict]:
    blob = Path(path).read_bytes()
    if blob[:4] != _MATRIX_MAGIC:
        raise ValueError(f"{path}: not a matrix dump")
    (hlen,) = struct.unpack_from("<I", blob, 4)
    header = json.loads(blob[8 : 8 + hlen])
    data = np.frombuffer(blob, dtype="<f4", offset=8 + hlen)
    return data.reshape(header["rows"], header["cols"]).astype(np.float64), header["axes"]
