"""``synthscape`` command line.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 constraint failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .audio import SAMPLE_RATE, read_audio, resample
from .errors import AudioFormatError, ConstraintError, DataError, IsolationRejected
from .isolation import MASK_THRESHOLD_DB, isolate
from .labelling import read_manifest
from .metrics import evaluate, join_labels, read_scores
from .pools import CatalogRow, read_isolation_catalog, write_pool

if TYPE_CHECKING:
    from PIL import Image

log = logging.getLogger("synthscape")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONSTRAINT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="run config (JSON)")
    p.add_argument("--backgrounds", type=Path, help="background catalog CSV (overrides config)")
    p.add_argument("--vocalisations", type=Path, help="vocalisation pool index (overrides config)")
    p.add_argument("--contaminants", type=Path, help="contaminant catalog CSV or pool index")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--snr-lo", type=float)
    p.add_argument("--snr-hi", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--labels-only", action="store_true", default=None,
                   help="write sidecars and manifest but no audio or images")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="synthscape", description="Synthetic bioacoustic soundscape datasets.")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("isolate", parents=[common], help="isolate vocalisations listed in a catalog into a pool")
    p.add_argument("catalog", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--threshold-db", type=float, default=MASK_THRESHOLD_DB)
    p.add_argument("--over-k", type=float, default=1.0)

    p = sub.add_parser("synth", parents=[common], help="build a dataset")
    _add_run_flags(p)
    p.add_argument("--recipes", type=Path, help="regenerate from a recipe file instead of sampling")

    p = sub.add_parser("sweep", parents=[common], help="build one dataset per value of a config axis")
    _add_run_flags(p)
    p.add_argument("--axis", required=True, choices=("n", "s", "snr_min"))
    p.add_argument("--values", required=True, type=float, nargs="+")
    p.add_argument("--replicates", type=int, default=1)

    p = sub.add_parser("eval", parents=[common], help="AUC and F1 of scene scores against a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("scores", type=Path, help="CSV of scene_id,score")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--class", dest="target_class", help="score presence of this class only")
    p.add_argument("--json", type=Path, help="also write the report here")

    p = sub.add_parser("inspect", parents=[common], help="print a scene's labels and draw them over its spectrogram")
    p.add_argument("manifest", type=Path)
    p.add_argument("scene_id")
    p.add_argument("--image-out", type=Path, help="overlay PNG path (default <scene_id>_overlay.png)")
    return parser


# ------------------------------------------------------------------ isolate


def _isolate_row(row: CatalogRow, threshold_db: float, over_k: float):
    clip = read_audio(row.path, row.source_id)
    if clip.sample_rate != SAMPLE_RATE:
        clip = resample(clip, SAMPLE_RATE)
    crop = None
    if row.crop_freq is not None:
        crop = (row.vocal_interval[0], row.vocal_interval[1], *row.crop_freq)
    return isolate(
        clip, row.vocal_interval, row.noise_interval, crop,
        threshold_db=row.threshold_db if row.threshold_db is not None else threshold_db,
        class_label=row.class_label, over_k=over_k, source_id=row.source_id,
    )


def cmd_isolate(args) -> int:
    rows = read_isolation_catalog(args.catalog)
    accepted, sources, failures = [], {}, 0
    for row in rows:
        if isinstance(row, tuple):
            print(f"line {row[0]}: rejected ({row[1]})")
            failures += 1
            continue
        try:
            voc = _isolate_row(row, args.threshold_db, args.over_k)
        except IsolationRejected as exc:
            print(f"line {row.line}: {row.source_id} rejected ({exc.reason}) {exc}")
            failures += 1
            continue
        except (AudioFormatError, OSError, ValueError) as exc:
            print(f"line {row.line}: {row.source_id} rejected (invalid_row) {exc}")
            failures += 1
            continue
        accepted.append(voc)
        sources[voc.id] = str(row.path)
        print(f"line {row.line}: {voc.id} accepted ({voc.rms:.1f} dBFS, "
              f"{voc.freq_extent[0]:.0f}-{voc.freq_extent[1]:.0f} Hz, {voc.clip.duration:.2f} s)")
    index = write_pool(args.out_dir, accepted, sources)
    if not rows:
        log.warning("catalog %s is empty; wrote an empty pool", args.catalog)
    print(f"{len(accepted)} accepted, {failures} rejected -> {index}")
    if rows and not accepted:
        return EXIT_DATA
    return EXIT_OK


# ------------------------------------------------------------- synth/sweep


def _run_config(args):
    from .dataset import load_run_config

    overrides = {
        "seed": args.seed, "n": args.n, "s": args.s, "snr_lo": args.snr_lo, "snr_hi": args.snr_hi,
        "workers": args.workers, "out": args.out, "labels_only": args.labels_only,
        "backgrounds": args.backgrounds, "vocalisations": args.vocalisations, "contaminants": args.contaminants,
    }
    try:
        return load_run_config(args.config, overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _print_summary(summary: dict, prefix: str = "") -> None:
    snr = summary["mean_target_snr"]
    snr_txt = f"{snr:.3f} ({summary['mean_target_snr_db']:.2f} dB)" if snr else "n/a"
    hist = " ".join(f"{k}:{v}" for k, v in summary["density_histogram"].items())
    print(f"{prefix}scenes={summary['scenes']} positives={summary['positives']} density[{hist}] "
          f"placements={summary['placements']} mean_snr={snr_txt} "
          f"dropped={summary['dropped_placements']} regenerated={summary['regenerations']} "
          f"unique_vocalisations={summary['unique_vocalisations']}")


def cmd_synth(args) -> int:
    from .dataset import build_dataset, regenerate

    run = _run_config(args)
    summary = regenerate(run, args.recipes) if args.recipes else build_dataset(run)
    _print_summary(summary)
    print(f"manifest: {Path(run.out) / 'manifest.txt'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .dataset import sweep

    run = _run_config(args)
    try:
        results = sweep(run, args.axis, args.values, args.replicates)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    for tag, summary in results.items():
        _print_summary(summary, prefix=f"{tag}: ")
    return EXIT_OK


# ---------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    manifest = read_manifest(args.manifest)
    examples = join_labels(read_scores(args.scores), manifest, args.target_class)
    try:
        report = evaluate(examples, args.threshold)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    for key in ("n", "positives", "auc", "f1", "precision", "recall", "tp", "fp", "fn"):
        val = report[key]
        print(f"{key}: {val:.6f}" if isinstance(val, float) else f"{key}: {val}")
    if args.json:
        args.json.write_text(json.dumps(report, indent=1) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- inspect


def overlay_boxes(manifest: dict, scene_id: str) -> tuple[dict, list[dict]]:
    image = next((im for im in manifest["images"] if im["scene_id"] == scene_id), None)
    if image is None:
        raise DataError(f"scene {scene_id!r} is not in the manifest")
    anns = [a for a in manifest["annotations"] if a["image_id"] == image["id"]]
    return image, anns


def draw_overlay(base: np.ndarray, anns: list[dict], grid: dict) -> "Image.Image":
    """Tint mask cells and outline pixel boxes on an RGB spectrogram."""
    from PIL import Image, ImageDraw

    from . import rle
    from .spectral import DEFAULT_STFT, ImageAxes, StftParams

    params = StftParams(grid["fft_size"], grid["window_size"], grid["hop"], grid["window"]) \
        if "fft_size" in grid else DEFAULT_STFT
    axes = ImageAxes(grid["sample_rate"], grid["num_frames"], grid["f_min"], grid["f_max"], params,
                     grid["log_bins"], grid["width"], grid["height"])
    rgb = base.astype(np.float64).copy()
    h, w = rgb.shape[:2]
    colours = [(255, 64, 64), (64, 200, 255), (255, 200, 0), (120, 255, 120)]
    for i, a in enumerate(anns):
        mask = rle.decode(a["mask"])
        rows, cols = np.nonzero(mask)
        if rows.size:
            t0, t1 = zip(*(axes.frame_extent(int(r)) for r in rows))
            f0, f1 = zip(*(axes.bin_extent(int(c)) for c in cols))
            xs0 = np.clip(np.floor(axes.time_to_x(np.array(t0))), 0, w).astype(int)
            xs1 = np.clip(np.ceil(axes.time_to_x(np.array(t1))), 0, w).astype(int)
            ys0 = np.clip(np.floor(axes.freq_to_y(np.array(f1))), 0, h).astype(int)
            ys1 = np.clip(np.ceil(axes.freq_to_y(np.array(f0))), 0, h).astype(int)
            tint = np.zeros((h, w), dtype=bool)
            for x0, x1, y0, y1 in zip(xs0, xs1, ys0, ys1):
                tint[y0:y1, x0:x1] = True
            colour = np.array(colours[i % len(colours)], dtype=np.float64)
            rgb[tint] = 0.6 * rgb[tint] + 0.4 * colour
    img = Image.fromarray(np.round(rgb).astype(np.uint8), mode="RGB")
    draw = ImageDraw.Draw(img)
    for i, a in enumerate(anns):
        b = a["bbox_pixels"]
        # PIL rectangles include the far corner, pixel boxes are half-open
        draw.rectangle([b["x0"], b["y0"], b["x1"] - 1, b["y1"] - 1], outline=colours[i % len(colours)])
    return img


def cmd_inspect(args) -> int:
    from PIL import Image

    manifest = read_manifest(args.manifest)
    image, anns = overlay_boxes(manifest, args.scene_id)
    print(f"{image['scene_id']}: positive={image['positive']} classes={image['present_classes']} "
          f"clip_fraction={image['clip_fraction']:.4g}")
    for p in image["placements"]:
        print(f"  placement {p['vocalisation_id']} at {p['offset']:.4f} s gain {p['gain']:.4g} "
              f"target_snr {p['target_snr']:.4f}")
    for a in anns:
        pb, bb = a["bbox_pixels"], a["bbox_physical"]
        merged = f" merged_from={a['merged_from']}" if a["merged_from"] else ""
        print(f"  annotation {a['id']} [{a['class_label']}] t={bb['t0']:.3f}-{bb['t1']:.3f} s "
              f"f={bb['f0']:.1f}-{bb['f1']:.1f} Hz px=({pb['x0']},{pb['y0']})-({pb['x1']},{pb['y1']}){merged}")

    grid = manifest["info"]["grid"]
    root = args.manifest.parent
    if image.get("image"):
        base = np.asarray(Image.open(root / image["image"]).convert("RGB"))
    else:
        base = np.zeros((grid["height"], grid["width"], 3), dtype=np.uint8)
    out = args.image_out or Path(f"{args.scene_id}_overlay.png")
    draw_overlay(base, anns, grid).save(out, format="PNG")
    print(f"overlay: {out}")
    return EXIT_OK


COMMANDS = {"isolate": cmd_isolate, "synth": cmd_synth, "sweep": cmd_sweep, "eval": cmd_eval, "inspect": cmd_inspect}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConstraintError as exc:
        print(f"constraint failed [{exc.constraint}]: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except (DataError, AudioFormatError, OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
