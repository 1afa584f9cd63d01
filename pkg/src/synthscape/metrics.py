"""Soundscape-level detection metrics: ROC AUC and F1 at a fixed threshold."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError

__all__ = ["ScoredExample", "auc", "f1_at", "precision_recall_at", "read_scores", "join_labels", "evaluate"]


@dataclass(frozen=True)
class ScoredExample:
    scene_id: str
    score: float
    label: int

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"{self.scene_id}: score must be finite")
        if self.label not in (0, 1):
            raise ValueError(f"{self.scene_id}: label must be 0 or 1")


def _arrays(examples: Sequence[ScoredExample]) -> tuple[np.ndarray, np.ndarray]:
    scores = np.array([e.score for e in examples], dtype=np.float64)
    labels = np.array([e.label for e in examples], dtype=np.int64)
    return scores, labels


def auc(examples: Sequence[ScoredExample]) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg), ties counting one half."""
    scores, labels = _arrays(examples)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative example")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def precision_recall_at(examples: Sequence[ScoredExample], threshold: float = 0.5) -> tuple[float, float, int, int, int]:
    """``(precision, recall, tp, fp, fn)`` predicting positive when ``score >= threshold``."""
    scores, labels = _arrays(examples)
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall, tp, fp, fn


def f1_at(examples: Sequence[ScoredExample], threshold: float = 0.5) -> float:
    p, r, *_ = precision_recall_at(examples, threshold)
    return 2 * p * r / (p + r) if p + r else 0.0


def read_scores(path: str | Path) -> list[tuple[str, float]]:
    """Two-column CSV ``scene_id,score``; a header row is skipped if present."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{lineno}: expected scene_id,score")
            try:
                score = float(row[1])
            except ValueError:
                if lineno == 1:
                    continue
                raise DataError(f"{path}:{lineno}: score {row[1]!r} is not a number") from None
            rows.append((row[0].strip(), score))
    return rows


def join_labels(scores: Iterable[tuple[str, float]], manifest: dict, target_class: str | None = None) -> list[ScoredExample]:
    """Attach manifest scene labels (positive iff the class is present) to scores."""
    labels = {}
    for image in manifest["images"]:
        present = image["present_classes"]
        labels[image["scene_id"]] = int(target_class in present if target_class else bool(present))
    out = []
    for scene_id, score in scores:
        if scene_id not in labels:
            raise DataError(f"scene {scene_id!r} is not in the manifest")
        out.append(ScoredExample(scene_id, score, labels[scene_id]))
    return out


def evaluate(examples: Sequence[ScoredExample], threshold: float = 0.5) -> dict:
    p, r, tp, fp, fn = precision_recall_at(examples, threshold)
    return {
        "n": len(examples),
        "positives": int(sum(e.label for e in examples)),
        "auc": auc(examples),
        "f1": f1_at(examples, threshold),
        "precision": p,
        "recall": r,
        "threshold": threshold,
        "tp": tp,
        "fp": fp,
        "fn": fn,
    }
