"""Building datasets on disk: run configuration, per-scene jobs, resume, sweeps.

Run config (JSON)::

    {
      "pools": {"backgrounds": "bg.csv", "vocalisations": "pool/pool.json",
                "contaminants": "contaminants.csv"},
      "dataset": {... DatasetConfig fields ...},
      "render": {"pcen": {...}, "f_min": 40.0, "f_max": null, "log_bins": 256,
                 "width": 256, "height": 256, "channels": 3},
      "out": "dataset", "workers": 1, "labels_only": false
    }

Relative paths resolve against the config file. ``contaminants`` may be a
background-style CSV catalog or a pool index; it may also be omitted.

Output layout::

    <out>/audio/scene_NNNNNN.wav     float32
    <out>/images/scene_NNNNNN.png    8-bit RGB spectrogram
    <out>/scenes/scene_NNNNNN.json   per-scene sidecar, written last
    <out>/recipes.txt                one JSON recipe per line, by scene index
    <out>/manifest.txt               JSON dataset manifest
    <out>/config.json                fully resolved run config

A scene counts as done once its sidecar exists, which is what makes an
interrupted build resumable.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import write_audio
from .errors import ConstraintError, DataError, SceneRejected
from .labelling import dumps, emit_manifest, label_scene, scene_entry
from .pools import load_backgrounds, load_pool
from .spectral import DEFAULT_F_MIN, DEFAULT_STFT, IMAGE_SIZE, ImageAxes, PcenParams, num_frames, render_image, stft_power
from .synthesis import (
    DatasetConfig,
    RealizedScene,
    SceneRecipe,
    SourcePools,
    build_scene,
    derive_seed,
    realize_scene,
    scene_name,
    vocal_subset,
)

__all__ = [
    "RenderConfig",
    "RunConfig",
    "load_run_config",
    "load_pools",
    "build_dataset",
    "regenerate",
    "sweep",
    "SWEEP_AXES",
]

log = logging.getLogger(__name__)

SWEEP_AXES = ("n", "s", "snr_min")


@dataclass(frozen=True)
class RenderConfig:
    pcen: PcenParams = PcenParams()
    f_min: float = DEFAULT_F_MIN
    f_max: float | None = None
    log_bins: int = 256
    width: int = IMAGE_SIZE
    height: int = IMAGE_SIZE
    channels: int = 3

    def axes(self, sample_rate: int, frames: int) -> ImageAxes:
        f_max = sample_rate / 2 if self.f_max is None else self.f_max
        return ImageAxes(sample_rate, frames, self.f_min, f_max, DEFAULT_STFT, self.log_bins, self.width, self.height)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RenderConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown render config keys: {sorted(unknown)}")
        if "pcen" in d:
            d["pcen"] = PcenParams(**d["pcen"])
        return cls(**d)


@dataclass(frozen=True)
class RunConfig:
    backgrounds: Path
    vocalisations: Path
    contaminants: Path | None = None
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    out: Path = Path("dataset")
    workers: int = 1
    labels_only: bool = False

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def check_paths(self) -> None:
        for p in (self.backgrounds, self.vocalisations, self.contaminants):
            if p is not None and not Path(p).exists():
                raise DataError(f"source path {p} does not exist")

    def provenance(self) -> dict:
        """What determines the dataset's bytes (output dir and worker count excluded)."""
        return {
            "pools": {
                "backgrounds": str(self.backgrounds),
                "vocalisations": str(self.vocalisations),
                "contaminants": str(self.contaminants) if self.contaminants else None,
            },
            "dataset": self.dataset.to_dict(),
            "render": self.render.to_dict(),
            "labels_only": self.labels_only,
        }

    def to_dict(self) -> dict:
        return {**self.provenance(), "out": str(self.out), "workers": self.workers}


def _resolve(base: Path, p) -> Path | None:
    if p is None or p == "":
        return None
    p = Path(p).expanduser()
    return p if p.is_absolute() else (base / p).resolve()


def load_run_config(path: str | Path | None = None, overrides: dict | None = None, base: str | Path = ".") -> RunConfig:
    """Read a run config and apply flat overrides.

    Recognised override keys: ``seed``, ``n``, ``s``, ``snr_lo``, ``snr_hi``,
    ``workers``, ``out``, ``labels_only``, ``backgrounds``, ``vocalisations``,
    ``contaminants``. ``None`` values are ignored.
    """
    doc: dict = {}
    if path is not None:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        base = path.parent
    base = Path(base).resolve()
    unknown = set(doc) - {"pools", "dataset", "render", "out", "workers", "labels_only"}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    pools = dict(doc.get("pools", {}))
    ds = dict(doc.get("dataset", {}))
    top = {k: doc[k] for k in ("out", "workers", "labels_only") if k in doc}
    o = {k: v for k, v in (overrides or {}).items() if v is not None}
    for key in ("backgrounds", "vocalisations", "contaminants"):
        if key in o:
            pools[key] = str(Path(o[key]).resolve())
    if "seed" in o:
        ds["master_seed"] = o["seed"]
    for key in ("n", "s"):
        if key in o:
            ds[key] = o[key]
    if "snr_lo" in o or "snr_hi" in o:
        lo, hi = ds.get("snr_range", DatasetConfig.snr_range)
        ds["snr_range"] = [o.get("snr_lo", lo), o.get("snr_hi", hi)]
    if "out" in o:
        top["out"] = str(Path(o["out"]).resolve())
    for key in ("workers", "labels_only"):
        if key in o:
            top[key] = o[key]

    if not pools.get("backgrounds") or not pools.get("vocalisations"):
        raise ValueError("config must name pools.backgrounds and pools.vocalisations")
    return RunConfig(
        backgrounds=_resolve(base, pools["backgrounds"]),
        vocalisations=_resolve(base, pools["vocalisations"]),
        contaminants=_resolve(base, pools.get("contaminants")),
        dataset=DatasetConfig.from_dict(ds),
        render=RenderConfig.from_dict(doc.get("render", {})),
        out=_resolve(base, top.get("out", "dataset")),
        workers=int(top.get("workers", 1)),
        labels_only=bool(top.get("labels_only", False)),
    )


def load_pools(run: RunConfig) -> SourcePools:
    run.check_paths()
    sr = run.dataset.sample_rate
    backgrounds = load_backgrounds(run.backgrounds, sr)
    vocalisations = load_pool(run.vocalisations)
    contaminants = []
    if run.contaminants is not None:
        if run.contaminants.suffix == ".json":
            contaminants = [v.clip for v in load_pool(run.contaminants)]
        else:
            contaminants = load_backgrounds(run.contaminants, sr)
    return SourcePools(backgrounds, vocalisations, contaminants)


# ---------------------------------------------------------------- scene jobs

_WORKER: dict = {}


def _init_worker(run: RunConfig, pools: SourcePools, vocal_ids: list[str] | None) -> None:
    _WORKER.update(run=run, pools=pools, vocal_ids=vocal_ids)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _finish_scene(realized: RealizedScene, run: RunConfig, pools: SourcePools, out: Path) -> dict:
    name = realized.recipe.scene_id
    frames = num_frames(len(realized.audio))
    if run.labels_only:
        axes = run.render.axes(realized.audio.sample_rate, frames)
        audio_rel = image_rel = None
    else:
        r = run.render
        image = render_image(stft_power(realized.audio), r.pcen, r.f_min, r.f_max, r.log_bins, (r.height, r.width))
        axes = image.axes
        audio_rel, image_rel = f"audio/{name}.wav", f"images/{name}.png"
        write_audio(realized.audio, out / audio_rel, "float32")
        image.save_png(out / image_rel, r.channels)
    ds = run.dataset
    label = label_scene(realized, pools, axes, ds.beta, ds.iou_threshold, ds.irs_threshold)
    sidecar = {"entry": scene_entry(label, audio_rel, image_rel, axes), "recipe": realized.recipe.to_dict()}
    _atomic_write(out / "scenes" / f"{name}.json", json.dumps(sidecar, indent=1, allow_nan=False) + "\n")
    return sidecar


def _scene_job(index: int) -> int:
    run, pools = _WORKER["run"], _WORKER["pools"]
    realized = build_scene(run.dataset, pools, index, _WORKER["vocal_ids"])
    _finish_scene(realized, run, pools, run.out)
    return index


def _recipe_job(recipe: SceneRecipe) -> int:
    run, pools = _WORKER["run"], _WORKER["pools"]
    ds = run.dataset
    try:
        realized = realize_scene(recipe, pools, None, ds.target_dbfs, ds.max_clip_fraction)
    except SceneRejected as exc:
        raise ConstraintError(exc.reason, f"recipe {recipe.scene_id} no longer realizes: {exc}") from exc
    _finish_scene(realized, run, pools, run.out)
    return recipe.scene_index


def _run_jobs(fn, jobs: Sequence, run: RunConfig, pools: SourcePools, vocal_ids) -> None:
    total = len(jobs)
    if total == 0:
        return
    step = max(1, total // 10)
    if run.workers == 1:
        _init_worker(run, pools, vocal_ids)
        for done, job in enumerate(jobs, start=1):
            fn(job)
            if done % step == 0 or done == total:
                log.info("%d/%d scenes", done, total)
        return
    with ProcessPoolExecutor(run.workers, initializer=_init_worker, initargs=(run, pools, vocal_ids)) as ex:
        for done, _ in enumerate(ex.map(fn, jobs, chunksize=max(1, min(16, total // (4 * run.workers)))), start=1):
            if done % step == 0 or done == total:
                log.info("%d/%d scenes", done, total)


# ------------------------------------------------------------- dataset level


def _prepare_out(run: RunConfig) -> Path:
    out = Path(run.out)
    for sub in ("scenes",) if run.labels_only else ("scenes", "audio", "images"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.json"
    current = run.provenance()
    if cfg_path.exists():
        previous = json.loads(cfg_path.read_text())
        if {k: previous.get(k) for k in current} != current:
            raise DataError(f"{out} holds a dataset built from a different config; refusing to mix them")
    else:
        _atomic_write(cfg_path, json.dumps(run.to_dict(), indent=1) + "\n")
    return out


def summarize(entries: Sequence[dict], recipes: Sequence[dict]) -> dict:
    density = Counter(len(r["vocalisations"]) for r in recipes)
    snrs = [v["target_snr"] for r in recipes for v in r["vocalisations"]]
    mean_snr = float(np.mean(snrs)) if snrs else None
    return {
        "scenes": len(entries),
        "positives": sum(1 for e in entries if e["positive"]),
        "density_histogram": {str(k): density[k] for k in sorted(density)},
        "placements": len(snrs),
        "mean_target_snr": mean_snr,
        "mean_target_snr_db": 10 * math.log10(mean_snr) if mean_snr else None,
        "dropped_placements": sum(len(e["dropped_placements"]) for e in entries),
        "regenerations": sum(r["attempt"] for r in recipes),
        "unique_vocalisations": len({v["vocalisation_id"] for r in recipes for v in r["vocalisations"]}),
    }


def _fold(run: RunConfig, names: Sequence[str], vocal_ids: Sequence[str] | None) -> dict:
    out = Path(run.out)
    entries, recipes = [], []
    for name in names:
        doc = json.loads((out / "scenes" / f"{name}.json").read_text())
        entries.append(doc["entry"])
        recipes.append(doc["recipe"])
    frames = num_frames(run.dataset.num_samples)
    axes = run.render.axes(run.dataset.sample_rate, frames)
    summary = summarize(entries, recipes)
    extra = {"render": run.render.to_dict(), "pools": run.provenance()["pools"], "summary": summary,
             "labels_only": run.labels_only}
    if vocal_ids is not None:
        extra["vocalisation_subset"] = list(vocal_ids)
    manifest = emit_manifest(entries, run.dataset, axes, extra)
    _atomic_write(out / "recipes.txt", "".join(json.dumps(r, allow_nan=False) + "\n" for r in recipes))
    _atomic_write(out / "manifest.txt", dumps(manifest))
    return summary


def build_dataset(run: RunConfig, pools: SourcePools | None = None) -> dict:
    """Generate (or finish generating) the dataset described by ``run``; returns the summary."""
    pools = load_pools(run) if pools is None else pools
    vocal_ids = vocal_subset(run.dataset, pools)
    out = _prepare_out(run)
    names = [scene_name(i) for i in range(run.dataset.n)]
    todo = [i for i, name in enumerate(names) if not (out / "scenes" / f"{name}.json").exists()]
    if len(todo) < len(names):
        log.info("resuming: %d of %d scenes already present", len(names) - len(todo), len(names))
    _run_jobs(_scene_job, todo, run, pools, vocal_ids)
    return _fold(run, names, vocal_ids)


def read_recipes(path: str | Path) -> list[SceneRecipe]:
    recipes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if line.strip():
            try:
                recipes.append(SceneRecipe.from_dict(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad recipe: {exc}") from exc
    return recipes


def regenerate(run: RunConfig, recipes_path: str | Path, pools: SourcePools | None = None) -> dict:
    """Rebuild a dataset from its recipe file alone (the master seed is not consulted)."""
    pools = load_pools(run) if pools is None else pools
    recipes = read_recipes(recipes_path)
    run = replace(run, dataset=replace(run.dataset, n=max(1, len(recipes))))
    out = _prepare_out(run)
    todo = [r for r in recipes if not (out / "scenes" / f"{r.scene_id}.json").exists()]
    _run_jobs(_recipe_job, todo, run, pools, None)
    return _fold(run, [r.scene_id for r in sorted(recipes, key=lambda r: r.scene_index)], None)


# -------------------------------------------------------------------- sweeps


def sweep_runs(run: RunConfig, axis: str, values: Sequence[float], replicates: int = 1) -> list[tuple[str, RunConfig]]:
    """One run config per (value, replicate), each with its own derived master seed."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")
    if not values:
        raise ValueError("sweep needs at least one value")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    runs = []
    base = run.dataset
    for v in values:
        if axis == "snr_min":
            changes = {"snr_range": (float(v), max(float(v), base.snr_range[1]))}
            tag = f"{axis}_{float(v):g}"
        else:
            changes = {axis: int(v)}
            tag = f"{axis}_{int(v)}"
        for rep in range(replicates):
            seed = derive_seed(base.master_seed, axis, changes.get(axis, v), rep)
            ds = replace(base, master_seed=seed, **changes)
            runs.append((f"{tag}/rep{rep}", replace(run, dataset=ds, out=Path(run.out) / tag / f"rep{rep}")))
    return runs


def sweep(run: RunConfig, axis: str, values: Sequence[float], replicates: int = 1,
          pools: SourcePools | None = None) -> dict[str, dict]:
    pools = load_pools(run) if pools is None else pools
    results = {}
    for tag, sub in sweep_runs(run, axis, values, replicates):
        log.info("sweep %s: n=%d s=%d snr=%s seed=%d", tag, sub.dataset.n, sub.dataset.s,
                 sub.dataset.snr_range, sub.dataset.master_seed)
        results[tag] = build_dataset(sub, pools)
    Path(run.out).mkdir(parents=True, exist_ok=True)
    _atomic_write(Path(run.out) / "sweep.json", json.dumps(
        {"axis": axis, "values": list(values), "replicates": replicates,
         "runs": {k: copy.deepcopy(v) for k, v in results.items()}}, indent=1) + "\n")
    return results
