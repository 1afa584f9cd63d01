"""On-disk source catalogs and pool indexes.

Background catalog (CSV, dataset A)::

    path,source_id,f_lo,f_hi

Isolation catalog (CSV, datasets B and C)::

    path,class_label,vocal_t0,vocal_t1,noise_t0,noise_t1[,crop_f0,crop_f1][,threshold_db][,source_id]

``source_id``, ``f_lo``/``f_hi``, ``crop_*`` and ``threshold_db`` may be left
blank. Relative paths resolve against the catalog's directory.

Pool index (JSON, written by ``synthscape isolate``)::

    {"schema_version": 1, "entries": [{"id", "class_label", "clip",
      "freq_extent", "rms_dbfs", "source_start", "source_path", "mask"}]}

where ``mask`` is the run-length encoding from :mod:`synthscape.rle`.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from . import rle
from .audio import SAMPLE_RATE, AudioClip, read_audio, resample, write_audio
from .errors import DataError
from .isolation import IsolatedVocalisation

__all__ = [
    "CatalogRow",
    "read_background_catalog",
    "load_backgrounds",
    "read_isolation_catalog",
    "write_pool",
    "load_pool",
]

log = logging.getLogger(__name__)

POOL_SCHEMA_VERSION = 1
_ISOLATION_REQUIRED = ("path", "class_label", "vocal_t0", "vocal_t1", "noise_t0", "noise_t1")


def _opt_float(row: dict, key: str) -> float | None:
    v = (row.get(key) or "").strip()
    return float(v) if v else None


def _read_csv(path: Path, required: tuple[str, ...]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing and reader.fieldnames:
            raise DataError(f"{path}: missing columns {missing}")
        return [row for row in reader if any((v or "").strip() for v in row.values())]


def read_background_catalog(path: str | Path) -> list[dict]:
    path = Path(path)
    rows = []
    for i, row in enumerate(_read_csv(path, ("path",))):
        audio = (path.parent / row["path"].strip()).resolve()
        lo, hi = _opt_float(row, "f_lo"), _opt_float(row, "f_hi")
        bounds = None if lo is None and hi is None else (lo or 0.0, hi if hi is not None else SAMPLE_RATE / 2)
        rows.append({
            "path": audio,
            "source_id": (row.get("source_id") or "").strip() or audio.stem,
            "freq_bounds": bounds,
        })
    return rows


def load_backgrounds(path: str | Path, sample_rate: int = SAMPLE_RATE) -> list[AudioClip]:
    """Load and resample every background listed in a catalog."""
    clips = []
    for row in read_background_catalog(path):
        clip = resample(read_audio(row["path"], row["source_id"]), sample_rate)
        bounds = row["freq_bounds"]
        if bounds is not None:
            bounds = (bounds[0], min(bounds[1], sample_rate / 2))
        clips.append(AudioClip(clip.samples, clip.sample_rate, row["source_id"], bounds))
    return clips


@dataclass(frozen=True)
class CatalogRow:
    line: int
    path: Path
    class_label: str
    vocal_interval: tuple[float, float]
    noise_interval: tuple[float, float]
    crop_freq: tuple[float, float] | None
    threshold_db: float | None
    source_id: str


def read_isolation_catalog(path: str | Path) -> list[CatalogRow | tuple[int, str]]:
    """Parse an isolation catalog.

    Malformed rows come back as ``(line, message)`` tuples so the caller can
    report and skip them without losing the rest.
    """
    path = Path(path)
    out: list[CatalogRow | tuple[int, str]] = []
    for i, row in enumerate(_read_csv(path, _ISOLATION_REQUIRED), start=2):
        try:
            audio = (path.parent / row["path"].strip()).resolve()
            f0, f1 = _opt_float(row, "crop_f0"), _opt_float(row, "crop_f1")
            out.append(CatalogRow(
                line=i,
                path=audio,
                class_label=row["class_label"].strip(),
                vocal_interval=(float(row["vocal_t0"]), float(row["vocal_t1"])),
                noise_interval=(float(row["noise_t0"]), float(row["noise_t1"])),
                crop_freq=None if f0 is None and f1 is None else (f0 or 0.0, f1 if f1 is not None else SAMPLE_RATE / 2),
                threshold_db=_opt_float(row, "threshold_db"),
                source_id=(row.get("source_id") or "").strip() or f"{audio.stem}_{i:04d}",
            ))
        except (TypeError, ValueError, AttributeError) as exc:
            out.append((i, f"invalid_row: {exc}"))
    return out


def write_pool(out_dir: str | Path, items: list[IsolatedVocalisation], sources: dict[str, str] | None = None) -> Path:
    """Write clips (float32 WAV) and ``pool.json``; returns the index path."""
    out_dir = Path(out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    entries = []
    for v in sorted(items, key=lambda v: v.id):
        rel = f"clips/{v.id}.wav"
        write_audio(v.clip, out_dir / rel, "float32")
        entries.append({
            "id": v.id,
            "class_label": v.class_label,
            "clip": rel,
            "freq_extent": list(v.freq_extent),
            "rms_dbfs": v.rms,
            "source_start": v.source_start,
            "source_path": (sources or {}).get(v.id),
            "mask": rle.encode(v.source_mask),
        })
    index = out_dir / "pool.json"
    index.write_text(json.dumps({"schema_version": POOL_SCHEMA_VERSION, "entries": entries}, indent=1) + "\n")
    return index


def load_pool(index_path: str | Path) -> list[IsolatedVocalisation]:
    index_path = Path(index_path)
    try:
        doc = json.loads(index_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read pool index {index_path}: {exc}") from exc
    if doc.get("schema_version") != POOL_SCHEMA_VERSION:
        raise DataError(f"{index_path}: unsupported pool schema {doc.get('schema_version')!r}")
    items = []
    for e in doc["entries"]:
        clip = read_audio(index_path.parent / e["clip"], e["id"])
        if clip.sample_rate != SAMPLE_RATE:
            raise DataError(f"{e['clip']}: pool clips must be {SAMPLE_RATE} Hz")
        items.append(IsolatedVocalisation(
            clip=clip,
            source_mask=rle.decode(e["mask"]),
            class_label=e["class_label"],
            freq_extent=tuple(e["freq_extent"]),
            rms=float(e["rms_dbfs"]),
            source_start=float(e.get("source_start", 0.0)),
        ))
    return items
