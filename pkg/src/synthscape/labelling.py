"""Per-vocalisation labels for realized scenes and the dataset manifest.

Masks live on the scene's default-params spectrogram grid ``(frames, bins)``.
Boxes are kept in physical units (seconds, Hz) and projected to pixels of
the rendered image through :class:`~synthscape.spectral.ImageAxes`.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rle
from .isolation import IsolatedVocalisation
from .spectral import ImageAxes, PowerSpectrogram
from .synthesis import DatasetConfig, PlacementRecord, RealizedScene, SceneRecipe, SourcePools, translated_rows

__all__ = [
    "BBox",
    "Annotation",
    "SceneLabel",
    "SCHEMA_VERSION",
    "dynamic_mask",
    "bbox_of",
    "pixel_box",
    "iou",
    "irs",
    "merge_boxes",
    "label_scene",
    "scene_entry",
    "emit_manifest",
    "write_manifest",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BBox:
    t0: float
    t1: float
    f0: float
    f1: float
    x0: int = 0
    y0: int = 0
    x1: int = 0
    y1: int = 0

    @property
    def area(self) -> float:
        return (self.t1 - self.t0) * (self.f1 - self.f0)

    def hull(self, other: "BBox") -> "BBox":
        return BBox(
            min(self.t0, other.t0), max(self.t1, other.t1),
            min(self.f0, other.f0), max(self.f1, other.f1),
            min(self.x0, other.x0), min(self.y0, other.y0),
            max(self.x1, other.x1), max(self.y1, other.y1),
        )


def pixel_box(t0: float, t1: float, f0: float, f1: float, axes: ImageAxes) -> tuple[int, int, int, int]:
    """Smallest whole-pixel rectangle covering the physical box, clamped to the image."""
    x0 = math.floor(float(axes.time_to_x(t0)))
    x1 = math.ceil(float(axes.time_to_x(t1)))
    y0 = math.floor(float(axes.freq_to_y(f1)))
    y1 = math.ceil(float(axes.freq_to_y(f0)))
    x0, x1 = max(0, min(x0, axes.width)), max(0, min(x1, axes.width))
    y0, y1 = max(0, min(y0, axes.height)), max(0, min(y1, axes.height))
    return x0, y0, x1, y1


@dataclass(frozen=True, eq=False)
class Annotation:
    id: int
    class_label: str
    bbox: BBox
    mask: np.ndarray
    target_snr: float
    applied_gain: float
    source_id: str
    merged_from: tuple[int, ...] = ()

    @property
    def members(self) -> tuple[int, ...]:
        return self.merged_from or (self.id,)


@dataclass(frozen=True, eq=False)
class SceneLabel:
    scene_id: str
    present_classes: tuple[str, ...]
    annotations: tuple[Annotation, ...]
    clip_fraction: float
    recipe: SceneRecipe
    placements: tuple[PlacementRecord, ...]
    norm_gain: float = 1.0
    dropped: tuple[int, ...] = ()

    @property
    def positive(self) -> bool:
        return bool(self.annotations)


def dynamic_mask(
    voc: IsolatedVocalisation,
    gain: float,
    offset: float,
    bg_spec: PowerSpectrogram,
    beta: float = 1.0,
) -> np.ndarray:
    """Cells of the scene grid where the placed vocalisation is visible.

    A cell belongs to the mask when the translated source mask covers it and
    the scaled vocalisation power there is at least ``beta`` times the
    (augmented) background power.
    """
    out = np.zeros(bg_spec.values.shape, dtype=bool)
    if beta == math.inf:
        return out
    rows = translated_rows(voc, offset, bg_spec.num_frames, bg_spec.sample_rate)
    visible = gain * gain * voc.power.values >= beta * bg_spec.values[rows]
    out[rows] = voc.source_mask & visible
    return out


def bbox_of(mask: np.ndarray, axes: ImageAxes) -> BBox:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("bounding box of an empty mask")
    t0 = axes.frame_extent(int(rows[0]))[0]
    t1 = axes.frame_extent(int(rows[-1]))[1]
    f0 = axes.bin_extent(int(cols[0]))[0]
    f1 = axes.bin_extent(int(cols[-1]))[1]
    return BBox(t0, t1, f0, f1, *pixel_box(t0, t1, f0, f1, axes))


def _intersection(a: BBox, b: BBox) -> float:
    dt = min(a.t1, b.t1) - max(a.t0, b.t0)
    df = min(a.f1, b.f1) - max(a.f0, b.f0)
    return dt * df if dt > 0 and df > 0 else 0.0


def iou(a: BBox, b: BBox) -> float:
    inter = _intersection(a, b)
    return inter / (a.area + b.area - inter) if inter else 0.0


def irs(a: BBox, b: BBox) -> float:
    inter = _intersection(a, b)
    return inter / min(a.area, b.area) if inter else 0.0


def _should_merge(a: Annotation, b: Annotation, iou_thresh: float, irs_thresh: float) -> bool:
    if a.class_label != b.class_label:
        return False
    return iou(a.bbox, b.bbox) > iou_thresh or irs(a.bbox, b.bbox) > irs_thresh


def _merge_pair(a: Annotation, b: Annotation) -> Annotation:
    return replace(
        a,
        bbox=a.bbox.hull(b.bbox),
        mask=a.mask | b.mask,
        merged_from=tuple(sorted(a.members + b.members)),
    )


def merge_boxes(
    annotations: Sequence[Annotation],
    iou_thresh: float = 0.25,
    irs_thresh: float = 0.9,
) -> list[Annotation]:
    """Merge same-class boxes that overlap by IoU > ``iou_thresh`` or IRs > ``irs_thresh``.

    Annotations are scanned in ascending id order; the first qualifying pair
    ``(i, j)`` is replaced by its hull (kept at position ``i`` under the lower
    id) and the scan restarts, until no pair qualifies.
    """
    items = sorted(annotations, key=lambda a: a.id)
    n = len(items)
    q = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            q[i, j] = _should_merge(items[i], items[j], iou_thresh, irs_thresh)

    while True:
        hits = np.argwhere(np.triu(q, 1))
        if hits.size == 0:
            return items
        i, j = (int(v) for v in hits[0])
        items[i] = _merge_pair(items[i], items[j])
        del items[j]
        q = np.delete(np.delete(q, j, axis=0), j, axis=1)
        for k in range(len(items)):
            if k != i:
                lo, hi = min(i, k), max(i, k)
                q[lo, hi] = _should_merge(items[lo], items[hi], iou_thresh, irs_thresh)


def label_scene(
    realized: RealizedScene,
    pools: SourcePools,
    axes: ImageAxes,
    beta: float = 1.0,
    iou_thresh: float = 0.25,
    irs_thresh: float = 0.9,
) -> SceneLabel:
    """Dynamic masks and boxes for every placement, drowned ones dropped, then merged."""
    annotations, dropped = [], []
    for idx, rec in enumerate(realized.placements):
        voc = pools.vocalisation(rec.vocalisation_id)
        mask = dynamic_mask(voc, rec.gain, rec.offset, realized.background_power, beta)
        if not mask.any():
            log.info("%s: placement %d (%s) fully drowned, dropped", realized.recipe.scene_id, idx, voc.id)
            dropped.append(idx)
            continue
        annotations.append(
            Annotation(idx, voc.class_label, bbox_of(mask, axes), mask, rec.target_snr, rec.gain, voc.id)
        )
    merged = merge_boxes(annotations, iou_thresh, irs_thresh)
    return SceneLabel(
        scene_id=realized.recipe.scene_id,
        present_classes=tuple(sorted({a.class_label for a in merged})),
        annotations=tuple(merged),
        clip_fraction=realized.clip_fraction,
        recipe=realized.recipe,
        placements=realized.placements,
        norm_gain=realized.norm_gain,
        dropped=tuple(dropped),
    )


def _annotation_dict(a: Annotation) -> dict:
    b = a.bbox
    return {
        "placement_index": a.id,
        "class_label": a.class_label,
        "bbox_physical": {"t0": b.t0, "t1": b.t1, "f0": b.f0, "f1": b.f1},
        "bbox_pixels": {"x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1},
        "bbox": [b.x0, b.y0, b.x1 - b.x0, b.y1 - b.y0],
        "mask": rle.encode(a.mask),
        "target_snr": a.target_snr,
        "applied_gain": a.applied_gain,
        "source_id": a.source_id,
        "merged_from": list(a.merged_from),
    }


def scene_entry(label: SceneLabel, audio: str | None, image: str | None, axes: ImageAxes) -> dict:
    """Self-contained JSON-ready record of one scene (annotations carry local ids)."""
    return {
        "scene_id": label.scene_id,
        "scene_index": label.recipe.scene_index,
        "audio": audio,
        "image": image,
        "width": axes.width,
        "height": axes.height,
        "present_classes": list(label.present_classes),
        "positive": label.positive,
        "clip_fraction": label.clip_fraction,
        "norm_gain": label.norm_gain,
        "recipe": {"file": "recipes.txt", "scene_index": label.recipe.scene_index,
                   "attempt": label.recipe.attempt, "seed": label.recipe.seed},
        "placements": [
            {"vocalisation_id": p.vocalisation_id, "offset": p.offset, "gain": p.gain, "target_snr": p.target_snr}
            for p in label.placements
        ],
        "dropped_placements": list(label.dropped),
        "annotations": [_annotation_dict(a) for a in label.annotations],
    }


def emit_manifest(
    entries: Sequence[dict],
    config: DatasetConfig | dict,
    axes: ImageAxes | None = None,
    extra_info: dict | None = None,
) -> dict:
    """Assemble the dataset document from per-scene entries (see :func:`scene_entry`).

    Scenes are ordered by ``scene_index``; annotation ids are assigned
    sequentially in that order.
    """
    cfg = config.to_dict() if isinstance(config, DatasetConfig) else dict(config)
    ordered = sorted(entries, key=lambda e: e["scene_index"])
    classes = sorted({a["class_label"] for e in ordered for a in e["annotations"]} | set(cfg.get("classes", [])))
    cat_ids = {name: i + 1 for i, name in enumerate(classes)}

    images, annotations = [], []
    for image_id, e in enumerate(ordered):
        image = {k: v for k, v in e.items() if k != "annotations"}
        image = {"id": image_id, **image}
        images.append(image)
        for a in e["annotations"]:
            annotations.append({
                "id": len(annotations),
                "image_id": image_id,
                "scene_id": e["scene_id"],
                "category_id": cat_ids[a["class_label"]],
                **a,
            })

    info = {"generator": "synthscape", "config": cfg}
    if axes is not None:
        info["grid"] = axes.to_dict()
    if extra_info:
        info.update(extra_info)
    return {
        "schema_version": SCHEMA_VERSION,
        "info": info,
        "categories": [{"id": cat_ids[c], "name": c} for c in classes],
        "images": images,
        "annotations": annotations,
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1, ensure_ascii=False, allow_nan=False) + "\n"


def write_manifest(path: str | Path, doc: dict) -> None:
    Path(path).write_text(dumps(doc), encoding="utf-8")


def read_manifest(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported manifest schema {doc.get('schema_version')!r}")
    return doc
