"""Voxel reconstruction metrics from confusion counts."""
from __future__ import annotations

import csv
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ReconMetrics:
    iou: float
    precision: float
    recall: float
    accuracy: float
    threshold: float = 0.5
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0


def confusion_counts(target, prediction, threshold: float = 0.5) -> tuple[int, int, int, int]:
    t = np.asarray(target) != 0
    p = np.asarray(prediction) >= threshold
    if t.shape != p.shape:
        raise ValueError(f"target shape {t.shape} != prediction shape {p.shape}")
    tp = int(np.count_nonzero(t & p))
    fp = int(np.count_nonzero(~t & p))
    fn = int(np.count_nonzero(t & ~p))
    return tp, fp, fn, t.size - tp - fp - fn


def recon_metrics(target, prediction, threshold: float = 0.5) -> ReconMetrics:
    """Binarize ``prediction >= threshold`` and score it against a binary target.

    Empty denominators: precision (no predicted voxels) and recall (no target
    voxels) are 1 when the other grid is empty too, else 0; the IoU of two
    empty grids is 1.
    """
    tp, fp, fn, tn = confusion_counts(target, prediction, threshold)
    both_empty = tp + fp + fn == 0
    iou = 1.0 if both_empty else tp / (tp + fp + fn)
    precision = (1.0 if fn == 0 else 0.0) if tp + fp == 0 else tp / (tp + fp)
    recall = (1.0 if fp == 0 else 0.0) if tp + fn == 0 else tp / (tp + fn)
    accuracy = (tp + tn) / (tp + fp + fn + tn)
    return ReconMetrics(iou, precision, recall, accuracy, float(threshold), tp, fp, fn, tn)


def summarize(metrics: Sequence[ReconMetrics]) -> ReconMetrics:
    """Per-field mean over samples (confusion counts are summed)."""
    if not metrics:
        raise ValueError("cannot summarize an empty metric list")
    mean = {k: float(np.mean([getattr(m, k) for m in metrics])) for k in ("iou", "precision", "recall", "accuracy")}
    counts = {k: int(sum(getattr(m, k) for m in metrics)) for k in ("tp", "fp", "fn", "tn")}
    return ReconMetrics(**mean, threshold=metrics[0].threshold, **counts)


def write_metrics_csv(rows: Sequence[tuple[str, ReconMetrics]], path, summary_id: str = "mean") -> None:
    """``id,iou,precision,recall,accuracy`` per sample, then a summary row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["id", "iou", "precision", "recall", "accuracy"])
        for sid, m in rows:
            w.writerow([sid] + [f"{v:.17g}" for v in (m.iou, m.precision, m.recall, m.accuracy)])
        if rows:
            s = summarize([m for _, m in rows])
            w.writerow([summary_id] + [f"{v:.17g}" for v in (s.iou, s.precision, s.recall, s.accuracy)])
