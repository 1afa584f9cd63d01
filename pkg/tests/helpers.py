"""Synthetic source material for tests: backgrounds, calls, catalogs."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from synthscape.audio import SAMPLE_RATE, AudioClip, write_audio
from synthscape.isolation import isolate
from synthscape.labelling import Annotation, iou, irs

SR = SAMPLE_RATE
CLASSES = ("chirp", "trill")


def white_background(seed: int, seconds: float = 12.0, sigma: float = 0.1, source_id: str | None = None,
                     bounds=None) -> AudioClip:
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, sigma, int(seconds * SR))
    return AudioClip(x, SR, source_id or f"white_{seed}", bounds)


def coloured_background(seed: int, kind: str, seconds: float = 12.0, source_id: str | None = None,
                        bounds=None) -> AudioClip:
    """Field-recording stand-ins: spectrally tilted, band-limited and amplitude-modulated noise."""
    rng = np.random.default_rng(seed)
    n = int(seconds * SR)
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.fft.rfftfreq(n, 1 / SR)
    f[0] = f[1]
    if kind == "pink":
        shape = 1 / np.sqrt(f)
    elif kind == "brown":
        shape = 1 / f
    elif kind == "band":
        lo, hi = bounds or (500.0, 12000.0)
        shape = ((f >= lo) & (f <= hi)).astype(float) + 1e-3
    elif kind == "wind":
        shape = 1 / (1 + (f / 300.0) ** 2)
    else:
        raise ValueError(kind)
    x = np.fft.irfft(spec * shape, n)
    t = np.arange(n) / SR
    if kind in ("wind", "pink"):
        x *= 1 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.1, 0.5) * t + rng.uniform(0, 6.28))
    if kind == "brown":
        x += 0.2 * x.std() * np.sin(2 * np.pi * 50 * t)  # mains hum
    x *= 0.1 / np.sqrt(np.mean(x * x))
    return AudioClip(x, SR, source_id or f"{kind}_{seed}", bounds)


def call_waveform(seed: int, f_lo: float, f_hi: float, seconds: float, kind: str = "chirp") -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = int(seconds * SR)
    t = np.arange(n) / SR
    if kind == "chirp":
        inst = f_lo + (f_hi - f_lo) * t / seconds
    else:
        inst = (f_lo + f_hi) / 2 + (f_hi - f_lo) / 2 * np.sin(2 * np.pi * rng.uniform(8, 20) * t)
    phase = 2 * np.pi * np.cumsum(inst) / SR
    return np.hanning(n) * np.sin(phase + rng.uniform(0, 6.28))


def raw_recording(seed: int, kind: str = "chirp", seconds: float = 3.0) -> tuple[np.ndarray, tuple, tuple]:
    """Noisy field-style clip with one call; returns (samples, vocal_interval, noise_interval)."""
    rng = np.random.default_rng(10_000 + seed)
    f_lo = rng.uniform(1500, 5000)
    f_hi = f_lo * rng.uniform(1.2, 2.0)
    dur = rng.uniform(0.3, 0.9)
    call = 0.3 * call_waveform(seed, f_lo, f_hi, dur, kind)
    x = rng.normal(0.0, 0.003, int(seconds * SR))
    start = int(1.2 * SR)
    x[start : start + call.size] += call
    return x, (1.1, 1.2 + dur + 0.1), (0.0, 1.0)


def isolated_pool(count: int, seed: int = 0):
    """``count`` isolated vocalisations alternating between two classes."""
    out = []
    for i in range(count):
        kind = CLASSES[i % 2]
        x, vi, ni = raw_recording(seed * 1000 + i, kind)
        clip = AudioClip(x, SR, f"voc_{i:03d}")
        out.append(isolate(clip, vi, ni, class_label=kind))
    return out


def contaminant_clips(count: int = 3, seed: int = 7) -> list[AudioClip]:
    out = []
    rng = np.random.default_rng(seed)
    for i in range(count):
        dur = rng.uniform(0.5, 2.0)
        n = int(dur * SR)
        x = call_waveform(seed + i, 300, 900, dur, "trill") + 0.3 * rng.normal(size=n) * np.hanning(n)
        out.append(AudioClip(0.2 * x, SR, f"cont_{i}"))
    return out


def write_sources(root: Path, n_vocal: int = 32, with_contaminants: bool = True) -> dict:
    """Lay out catalogs and audio for CLI-level tests; returns their paths."""
    root = Path(root)
    (root / "bg").mkdir(parents=True, exist_ok=True)
    (root / "raw").mkdir(exist_ok=True)
    (root / "cont").mkdir(exist_ok=True)
    bgs = [white_background(1, 11.0), coloured_background(2, "pink", 11.0), coloured_background(3, "wind", 11.0)]
    with open(root / "backgrounds.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "source_id", "f_lo", "f_hi"])
        for bg in bgs:
            write_audio(bg, root / "bg" / f"{bg.source_id}.wav", "float32")
            w.writerow([f"bg/{bg.source_id}.wav", bg.source_id, "", ""])
    with open(root / "catalog.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "class_label", "vocal_t0", "vocal_t1", "noise_t0", "noise_t1", "source_id"])
        for i in range(n_vocal):
            kind = CLASSES[i % 2]
            x, vi, ni = raw_recording(i, kind)
            write_audio(AudioClip(x, SR, ""), root / "raw" / f"rec_{i:03d}.wav", "float32")
            w.writerow([f"raw/rec_{i:03d}.wav", kind, vi[0], vi[1], ni[0], ni[1], f"voc_{i:03d}"])
    paths = {"backgrounds": root / "backgrounds.csv", "catalog": root / "catalog.csv", "pool": root / "pool"}
    if with_contaminants:
        with open(root / "contaminants.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "source_id"])
            for c in contaminant_clips():
                write_audio(c, root / "cont" / f"{c.source_id}.wav", "float32")
                w.writerow([f"cont/{c.source_id}.wav", c.source_id])
        paths["contaminants"] = root / "contaminants.csv"
    return paths


def write_run_config(path: Path, sources: dict, out: Path, **dataset) -> Path:
    doc = {
        "pools": {
            "backgrounds": str(sources["backgrounds"]),
            "vocalisations": str(Path(sources["pool"]) / "pool.json"),
            "contaminants": str(sources["contaminants"]) if "contaminants" in sources else None,
        },
        "dataset": dataset,
        "out": str(out),
    }
    Path(path).write_text(json.dumps(doc, indent=1))
    return Path(path)


def brute_mask(voc, gain, offset, bg, beta):
    """Per-cell power comparison over the translated source mask."""
    out = np.zeros(bg.values.shape, dtype=bool)
    shift = round(offset * SR) // 512
    pv = voc.power.values
    for t, f in zip(*np.nonzero(voc.source_mask)):
        if gain * gain * pv[t, f] >= beta * bg.values[t + shift, f]:
            out[t + shift, f] = True
    return out


def naive_merge(anns, iou_t=0.25, irs_t=0.9):
    """Restart-from-scratch pair scan in id order until nothing qualifies."""
    items = sorted(anns, key=lambda a: a.id)
    changed = True
    while changed:
        changed = False
        for i in range(len(items)):
            for j in range(i + 1, len(items)):
                a, b = items[i], items[j]
                if a.class_label == b.class_label and (iou(a.bbox, b.bbox) > iou_t or irs(a.bbox, b.bbox) > irs_t):
                    members = tuple(sorted(a.members + b.members))
                    items[i] = Annotation(a.id, a.class_label, a.bbox.hull(b.bbox), a.mask | b.mask,
                                          a.target_snr, a.applied_gain, a.source_id, members)
                    del items[j]
                    changed = True
                    break
            if changed:
                break
    return items
