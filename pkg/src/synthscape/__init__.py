"""Synthetic bioacoustic soundscapes with box and mask labels.

Modules
-------
audio      clip container, WAV I/O, resampling, levels and mixing
spectral   STFT/iSTFT, PCEN, log-frequency images and pixel coordinate maps
isolation  noise-profile subtraction, masks and gating of source sounds
synthesis  scene recipes and their deterministic realization
labelling  dynamic masks, boxes, box merging and the dataset manifest
metrics    AUC and F1 for scene-level detection scores
dataset    on-disk dataset builds, resume and sweeps
cli        the ``synthscape`` command
"""

from __future__ import annotations

from .audio import AudioClip, mix, normalize_rms, read_audio, resample, rms_dbfs, write_audio
from .errors import AudioFormatError, ConstraintError, DataError, IsolationRejected, SceneRejected, SynthscapeError
from .isolation import IsolatedVocalisation, isolate
from .spectral import DEFAULT_STFT, PcenParams, PowerSpectrogram, StftParams, istft, pcen, render_image, stft_power
from .synthesis import DatasetConfig, SceneRecipe, SourcePools, build_scene, realize_scene, sample_recipe

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "mix", "normalize_rms", "read_audio", "resample", "rms_dbfs", "write_audio",
    "AudioFormatError", "ConstraintError", "DataError", "IsolationRejected", "SceneRejected", "SynthscapeError",
    "IsolatedVocalisation", "isolate",
    "DEFAULT_STFT", "PcenParams", "PowerSpectrogram", "StftParams", "istft", "pcen", "render_image", "stft_power",
    "DatasetConfig", "SceneRecipe", "SourcePools", "build_scene", "realize_scene", "sample_recipe",
]
