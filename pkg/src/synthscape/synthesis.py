"""Scene recipes and their deterministic realization.

A :class:`SceneRecipe` fully describes one synthetic soundscape. Sampling a
recipe is the only step that consumes the scene's random stream; realizing
it is a pure function of the recipe and the source pools (gaussian noise is
drawn from a generator seeded by ``recipe.seed``).

Vocalisation offsets are drawn on the STFT hop grid, so a vocalisation's
source mask translates onto the scene spectrogram by a whole number of
frames and its in-mask power is reproduced exactly after placement.
"""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .audio import (
    REFERENCE_DBFS,
    SAMPLE_RATE,
    AudioClip,
    add_gaussian_noise,
    mix,
    normalize_rms,
    rms_dbfs,
    seconds_to_samples,
)
from .errors import ConstraintError, DataError, SceneRejected
from .isolation import IsolatedVocalisation
from .spectral import DEFAULT_STFT, PowerSpectrogram, stft_power

__all__ = [
    "DatasetConfig",
    "SourcePools",
    "ContaminantPlacement",
    "VocalPlacement",
    "SceneRecipe",
    "PlacementRecord",
    "RealizedScene",
    "derive_seed",
    "scene_rng",
    "vocal_subset",
    "sample_recipe",
    "check_band",
    "frame_shift",
    "translated_rows",
    "gain_for_snr",
    "realize_scene",
    "build_scene",
]

log = logging.getLogger(__name__)

_SCENE_STREAM = 0x5CE7E
_SUBSET_STREAM = 0x5B5E7


@dataclass(frozen=True)
class DatasetConfig:
    """Everything that shapes a synthetic dataset apart from the source pools."""

    n: int = 1000
    s: int = 30
    snr_range: tuple[float, float] = (0.1, 1.0)
    density_choices: tuple[int, ...] = (0, 1, 2)
    contaminant_count_choices: tuple[int, ...] = (0, 1, 2)
    gaussian_sigma_range: tuple[float, float] = (0.0, 0.005)
    contaminant_gain_range: tuple[float, float] = (0.25, 1.0)
    master_seed: int = 0
    classes: tuple[str, ...] = ()
    duration: float = 10.0
    sample_rate: int = SAMPLE_RATE
    target_dbfs: float = REFERENCE_DBFS
    max_clip_fraction: float = 0.01
    max_retries: int = 16
    beta: float = 1.0
    iou_threshold: float = 0.25
    irs_threshold: float = 0.9

    def __post_init__(self):
        for name in ("snr_range", "density_choices", "contaminant_count_choices",
                     "gaussian_sigma_range", "contaminant_gain_range", "classes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        lo, hi = self.snr_range
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.s < 1:
            raise ValueError("s must be >= 1")
        if not 0 < lo <= hi:
            raise ValueError(f"snr_range must satisfy 0 < lo <= hi, got {self.snr_range}")
        if not self.density_choices or any(not 0 <= d <= 2 for d in self.density_choices):
            raise ValueError("density_choices must be a non-empty subset of {0, 1, 2}")
        if not self.contaminant_count_choices or min(self.contaminant_count_choices) < 0:
            raise ValueError("contaminant_count_choices must be non-empty and non-negative")
        if not 0 <= self.gaussian_sigma_range[0] <= self.gaussian_sigma_range[1]:
            raise ValueError("gaussian_sigma_range must satisfy 0 <= lo <= hi")
        if self.master_seed < 0:
            raise ValueError("master_seed must be non-negative")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")

    @property
    def num_samples(self) -> int:
        return seconds_to_samples(self.duration, self.sample_rate)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown dataset config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SourcePools:
    """Read-only source material: backgrounds (A), vocalisations (B), contaminants (C)."""

    backgrounds: list[AudioClip]
    vocalisations: list[IsolatedVocalisation]
    contaminants: list[AudioClip] = field(default_factory=list)

    def __post_init__(self):
        self._bg = _index(self.backgrounds, lambda c: c.source_id, "background")
        self._voc = _index(self.vocalisations, lambda v: v.id, "vocalisation")
        self._con = _index(self.contaminants, lambda c: c.source_id, "contaminant")

    def background(self, source_id: str) -> AudioClip:
        return _lookup(self._bg, source_id, "background")

    def vocalisation(self, source_id: str) -> IsolatedVocalisation:
        return _lookup(self._voc, source_id, "vocalisation")

    def contaminant(self, source_id: str) -> AudioClip:
        return _lookup(self._con, source_id, "contaminant")


def _index(items, key, kind):
    out = {}
    for item in items:
        k = key(item)
        if k in out:
            raise DataError(f"duplicate {kind} id {k!r}")
        out[k] = item
    return out


def _lookup(table, source_id, kind):
    try:
        return table[source_id]
    except KeyError:
        raise DataError(f"unknown {kind} id {source_id!r}") from None


@dataclass(frozen=True)
class ContaminantPlacement:
    contaminant_id: str
    offset: float
    gain: float


@dataclass(frozen=True)
class VocalPlacement:
    vocalisation_id: str
    offset: float
    target_snr: float


@dataclass(frozen=True)
class SceneRecipe:
    scene_id: str
    scene_index: int
    seed: int
    background_id: str
    crop_offset: float
    gaussian_sigma: float
    contaminants: tuple[ContaminantPlacement, ...] = ()
    vocalisations: tuple[VocalPlacement, ...] = ()
    band: tuple[float, float] | None = None
    duration: float = 10.0
    sample_rate: int = SAMPLE_RATE
    attempt: int = 0

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "scene_index": self.scene_index,
            "attempt": self.attempt,
            "seed": self.seed,
            "duration": self.duration,
            "sample_rate": self.sample_rate,
            "background_id": self.background_id,
            "crop_offset": self.crop_offset,
            "band": list(self.band) if self.band is not None else None,
            "gaussian_sigma": self.gaussian_sigma,
            "contaminants": [asdict(c) for c in self.contaminants],
            "vocalisations": [asdict(v) for v in self.vocalisations],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneRecipe":
        return cls(
            scene_id=d["scene_id"],
            scene_index=int(d["scene_index"]),
            seed=int(d["seed"]),
            background_id=d["background_id"],
            crop_offset=float(d["crop_offset"]),
            gaussian_sigma=float(d["gaussian_sigma"]),
            contaminants=tuple(ContaminantPlacement(**c) for c in d.get("contaminants", [])),
            vocalisations=tuple(VocalPlacement(**v) for v in d.get("vocalisations", [])),
            band=tuple(d["band"]) if d.get("band") is not None else None,
            duration=float(d.get("duration", 10.0)),
            sample_rate=int(d.get("sample_rate", SAMPLE_RATE)),
            attempt=int(d.get("attempt", 0)),
        )


@dataclass(frozen=True)
class PlacementRecord:
    vocalisation_id: str
    offset: float
    gain: float
    target_snr: float


@dataclass(frozen=True, eq=False)
class RealizedScene:
    recipe: SceneRecipe
    audio: AudioClip
    placements: tuple[PlacementRecord, ...]
    background: AudioClip  # augmented background before vocalisations, pre-normalization scale
    background_power: PowerSpectrogram
    norm_gain: float
    clip_fraction: float


def _seed_word(part) -> int:
    if isinstance(part, (int, np.integer)) and part >= 0:
        return int(part)
    return zlib.crc32(repr(part).encode())


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a tuple of ints/strings/floats (order-sensitive)."""
    ss = np.random.SeedSequence([_seed_word(p) for p in parts])
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return int((int(hi) << 32 | int(lo)) & ((1 << 63) - 1))


def scene_rng(master_seed: int, scene_index: int, attempt: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, _SCENE_STREAM, scene_index, attempt]))


def scene_name(index: int) -> str:
    return f"scene_{index:06d}"


def vocal_subset(config: DatasetConfig, pools: SourcePools) -> list[str]:
    """Ids of the ``s`` vocalisations this dataset may draw from.

    The eligible pool (restricted to ``config.classes`` when given) is
    sorted by id, shuffled with a dataset-level seed, and truncated.
    """
    eligible = sorted(
        v.id for v in pools.vocalisations if not config.classes or v.class_label in config.classes
    )
    if config.s > len(eligible):
        raise ConstraintError(
            "unique_vocalisations", f"s={config.s} exceeds the {len(eligible)} eligible vocalisations"
        )
    rng = np.random.default_rng(np.random.SeedSequence([config.master_seed, _SUBSET_STREAM]))
    order = rng.permutation(len(eligible))
    return [eligible[i] for i in order[: config.s]]


def check_band(voc: IsolatedVocalisation, bg: AudioClip) -> bool:
    if bg.freq_bounds is None:
        return True
    lo, hi = bg.freq_bounds
    return lo <= voc.freq_extent[0] and voc.freq_extent[1] <= hi


def sample_recipe(
    config: DatasetConfig,
    pools: SourcePools,
    scene_index: int,
    rng: np.random.Generator,
    vocal_ids: Sequence[str] | None = None,
    attempt: int = 0,
) -> SceneRecipe:
    """Draw one scene description.

    Draw order is fixed (seed, vocal count, background, crop, noise level,
    contaminants, vocalisations) so a recipe depends only on the generator
    state handed in.
    """
    sr = config.sample_rate
    n = config.num_samples
    hop = DEFAULT_STFT.hop
    if vocal_ids is None:
        vocal_ids = vocal_subset(config, pools)
    vocs = [pools.vocalisation(v) for v in vocal_ids]
    backgrounds = [b for b in pools.backgrounds if len(b) >= n]
    if not backgrounds:
        raise ConstraintError("background_length", f"no background is at least {config.duration} s long")

    seed = int(rng.integers(0, 2**63 - 1))
    count = int(rng.choice(config.density_choices))

    for _ in range(config.max_retries):
        bg = backgrounds[int(rng.integers(len(backgrounds)))]
        usable = [v for v in vocs if len(v.clip) <= n and check_band(v, bg)]
        if count == 0 or usable:
            break
    else:
        raise ConstraintError(
            "band_compatibility",
            f"scene {scene_index}: no vocalisation fits any sampled background band "
            f"after {config.max_retries} draws",
        )

    crop = int(rng.integers(0, len(bg) - n + 1))
    sigma = float(rng.uniform(*config.gaussian_sigma_range))

    contaminants = []
    fitting = [c for c in pools.contaminants if len(c) <= n]
    k = int(rng.choice(config.contaminant_count_choices)) if fitting else 0
    for _ in range(k):
        c = fitting[int(rng.integers(len(fitting)))]
        off = int(rng.integers(0, n - len(c) + 1))
        gain = float(rng.uniform(*config.contaminant_gain_range))
        contaminants.append(ContaminantPlacement(c.source_id, off / sr, gain))

    placements = []
    for _ in range(count):
        v = usable[int(rng.integers(len(usable)))]
        snr = float(rng.uniform(*config.snr_range))
        frame = int(rng.integers(0, (n - len(v.clip)) // hop + 1))
        placements.append(VocalPlacement(v.id, frame * hop / sr, snr))

    return SceneRecipe(
        scene_id=scene_name(scene_index),
        scene_index=scene_index,
        seed=seed,
        background_id=bg.source_id,
        crop_offset=crop / sr,
        gaussian_sigma=sigma,
        contaminants=tuple(contaminants),
        vocalisations=tuple(placements),
        band=bg.freq_bounds,
        duration=config.duration,
        sample_rate=sr,
        attempt=attempt,
    )


def frame_shift(offset: float, sample_rate: int, hop: int = DEFAULT_STFT.hop) -> int:
    """Whole-frame shift for a hop-aligned offset in seconds."""
    start = seconds_to_samples(offset, sample_rate)
    if start % hop:
        raise ValueError(f"offset {offset} s ({start} samples) is not on the {hop}-sample hop grid")
    return start // hop


def translated_rows(voc: IsolatedVocalisation, offset: float, total_frames: int, sample_rate: int) -> slice:
    shift = frame_shift(offset, sample_rate)
    rows = slice(shift, shift + voc.source_mask.shape[0])
    if shift < 0 or rows.stop > total_frames:
        raise ValueError(f"placement at {offset} s runs past the scene's {total_frames} frames")
    return rows


def gain_for_snr(
    voc: IsolatedVocalisation,
    bg_spec: PowerSpectrogram,
    offset: float,
    target_snr: float,
) -> float:
    """Amplitude gain making in-mask vocalisation power ``target_snr`` times the background's."""
    p_sig = voc.mask_power
    if p_sig <= 0:
        raise ValueError(f"vocalisation {voc.id!r} has no power inside its mask")
    rows = translated_rows(voc, offset, bg_spec.num_frames, bg_spec.sample_rate)
    p_bg = float(bg_spec.values[rows][voc.source_mask].sum())
    if p_bg <= 0:
        raise ValueError(f"background is silent under the mask of {voc.id!r} at {offset} s")
    return math.sqrt(target_snr * p_bg / p_sig)


def _level_factor(clip: AudioClip, dbfs: float) -> float:
    level = rms_dbfs(clip)
    return 1.0 if level == -math.inf else 10.0 ** ((dbfs - level) / 20.0)


def realize_scene(
    recipe: SceneRecipe,
    pools: SourcePools,
    gains: Sequence[float] | None = None,
    target_dbfs: float = REFERENCE_DBFS,
    max_clip_fraction: float = 0.01,
) -> RealizedScene:
    """Render a recipe to audio.

    Order: crop the background (levelled to the reference RMS), add gaussian
    noise, overlay contaminants, take the augmented background's power
    spectrogram, SNR-scale and add each vocalisation, then RMS-normalize.
    Passing ``gains`` skips the SNR computation and uses those amplitudes.

    Raises
    ------
    SceneRejected
        When more than ``max_clip_fraction`` of samples clip on normalization,
        or a vocalisation lands on silent background.
    """
    sr = recipe.sample_rate
    n = seconds_to_samples(recipe.duration, sr)
    bg = pools.background(recipe.background_id)
    if bg.sample_rate != sr:
        raise DataError(f"background {bg.source_id!r} is {bg.sample_rate} Hz, scene is {sr} Hz")
    start = seconds_to_samples(recipe.crop_offset, sr)
    crop = bg.segment(start, start + n)
    if len(crop) != n:
        raise DataError(f"background {bg.source_id!r} too short for crop at {recipe.crop_offset} s")
    crop = crop.with_samples(crop.samples * _level_factor(crop, target_dbfs))

    noise_rng = np.random.default_rng(recipe.seed)
    scene = add_gaussian_noise(crop, recipe.gaussian_sigma, noise_rng)
    for cp in recipe.contaminants:
        src = pools.contaminant(cp.contaminant_id)
        scene = mix(scene, src, cp.offset, cp.gain * _level_factor(src, target_dbfs))
    background = scene
    bg_power = stft_power(background)

    if gains is not None and len(gains) != len(recipe.vocalisations):
        raise ValueError("need one gain per vocal placement")
    records = []
    for i, vp in enumerate(recipe.vocalisations):
        voc = pools.vocalisation(vp.vocalisation_id)
        if gains is None:
            try:
                g = gain_for_snr(voc, bg_power, vp.offset, vp.target_snr)
            except ValueError as exc:
                raise SceneRejected("silent_background", 0.0) from exc
        else:
            g = float(gains[i])
        scene = mix(scene, voc.clip, vp.offset, g)
        records.append(PlacementRecord(vp.vocalisation_id, vp.offset, g, vp.target_snr))

    if rms_dbfs(scene) == -math.inf:
        norm_gain, clip_fraction = 1.0, 0.0
    else:
        scene, norm_gain, clip_fraction = normalize_rms(scene, target_dbfs)
        if clip_fraction > max_clip_fraction:
            raise SceneRejected("clip_fraction", clip_fraction)

    audio = AudioClip(scene.samples, sr, recipe.scene_id)
    return RealizedScene(recipe, audio, tuple(records), background, bg_power, norm_gain, clip_fraction)


def build_scene(
    config: DatasetConfig,
    pools: SourcePools,
    scene_index: int,
    vocal_ids: Sequence[str] | None = None,
) -> RealizedScene:
    """Sample and realize scene ``scene_index``, resampling rejected recipes.

    Attempt ``k`` uses its own seed derived from (master seed, index, k), so
    the outcome never depends on other scenes.
    """
    if vocal_ids is None:
        vocal_ids = vocal_subset(config, pools)
    last = None
    for attempt in range(config.max_retries):
        rng = scene_rng(config.master_seed, scene_index, attempt)
        recipe = sample_recipe(config, pools, scene_index, rng, vocal_ids, attempt)
        try:
            return realize_scene(recipe, pools, None, config.target_dbfs, config.max_clip_fraction)
        except SceneRejected as exc:
            log.info("scene %d attempt %d rejected: %s", scene_index, attempt, exc)
            last = exc
    raise ConstraintError(
        last.reason, f"scene {scene_index} rejected on all {config.max_retries} attempts ({last})"
    )
