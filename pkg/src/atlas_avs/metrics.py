"""Pixel-ranking segmentation scores and continual-learning summary metrics."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

THRESHOLDS = np.linspace(0.0, 1.0, 201)


def _rank(confidences: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Targets reordered by descending confidence; ties keep pixel order."""
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    tgt = np.asarray(target).reshape(-1).astype(bool)
    if conf.shape != tgt.shape:
        raise ValueError(f"confidence size {conf.size} != target size {tgt.size}")
    order = np.argsort(-conf, kind="stable")
    return tgt[order]


def average_precision(confidences, target) -> float:
    """``sum_j Prec(j) * dRec(j)`` over the confidence ranking.

    Returns NaN (with a warning) when the target has no positive pixel.
    """
    ranked = _rank(confidences, target)
    n_pos = int(ranked.sum())
    if n_pos == 0:
        logger.warning("average_precision: target has no positive pixel; skipping")
        return math.nan
    hits = np.cumsum(ranked)
    positions = np.flatnonzero(ranked)
    precision_at_hits = hits[positions] / (positions + 1.0)
    return float(precision_at_hits.sum() / n_pos)


def aupr(confidences, target) -> float:
    """Area under the step-interpolated precision-recall curve.

    Integrates precision over recall increments at every rank position, which
    coincides with :func:`average_precision` under this interpolation.
    """
    ranked = _rank(confidences, target)
    n_pos = int(ranked.sum())
    if n_pos == 0:
        return math.nan
    tp = np.cumsum(ranked)
    k = np.arange(1, ranked.size + 1)
    precision = tp / k
    recall = tp / n_pos
    d_recall = np.diff(np.concatenate([[0.0], recall]))
    return float(np.dot(precision, d_recall))


def map_over_dataset(aps: Sequence[float]) -> float:
    """Mean of per-sample APs, ignoring undefined (NaN) entries."""
    vals = np.asarray([a for a in aps if not math.isnan(a)], dtype=np.float64)
    return float(vals.mean()) if vals.size else math.nan


def f1_curve(confidences, target, thresholds=THRESHOLDS) -> np.ndarray:
    """F1 at each threshold; a pixel is positive when ``conf >= tau``; 0/0 counts as 0."""
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    tgt = np.asarray(target).reshape(-1).astype(bool)
    pred = conf[None, :] >= np.asarray(thresholds)[:, None]
    tp = (pred & tgt).sum(axis=1).astype(np.float64)
    fp = (pred & ~tgt).sum(axis=1)
    fn = (~pred & tgt).sum(axis=1)
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def max_f(confidences, target, thresholds=THRESHOLDS) -> float:
    return float(f1_curve(confidences, target, thresholds).max())


def miou_dice_aupr(confidences, target, tau: float = 0.5) -> tuple[float, float, float]:
    """IoU and Dice of the ``conf >= tau`` mask, plus AUPR.

    Two empty masks count as a perfect match.
    """
    pred = np.asarray(confidences).reshape(-1) >= tau
    tgt = np.asarray(target).reshape(-1).astype(bool)
    inter = float((pred & tgt).sum())
    union = float((pred | tgt).sum())
    total = float(pred.sum() + tgt.sum())
    iou = inter / union if union else 1.0
    dice = 2 * inter / total if total else 1.0
    return iou, dice, aupr(confidences, target)


@dataclass
class SegScores:
    mAP: float
    max_f: float
    aupr: float
    miou: float
    dice: float

    def as_dict(self) -> dict[str, float]:
        return {"map": self.mAP, "maxf": self.max_f, "aupr": self.aupr,
                "miou": self.miou, "dice": self.dice}


def score_frames(confidences: np.ndarray, masks: np.ndarray) -> SegScores:
    """Per-frame scores averaged over the frames of one sample."""
    rows = []
    for conf, m in zip(confidences, masks):
        if not np.any(m):
            continue
        iou, dice, area = miou_dice_aupr(conf, m)
        rows.append((average_precision(conf, m), max_f(conf, m), area, iou, dice))
    if not rows:
        return SegScores(*([math.nan] * 5))
    return SegScores(*np.mean(np.asarray(rows), axis=0).tolist())


def score_dataset(per_sample: Sequence[SegScores]) -> SegScores:
    arr = np.asarray([[s.mAP, s.max_f, s.aupr, s.miou, s.dice] for s in per_sample])
    return SegScores(*[map_over_dataset(col) for col in arr.T])


# -- continual-learning metrics ------------------------------------------------
@dataclass
class AccuracyMatrix:
    """``values[t, k]``: score on task ``k`` after training through task ``t``."""

    values: np.ndarray
    filled: np.ndarray
    metric: str = "map"
    task_ids: list[int] = field(default_factory=list)

    @classmethod
    def empty(cls, n: int, metric: str = "map") -> AccuracyMatrix:
        return cls(np.full((n, n), np.nan), np.zeros((n, n), dtype=bool), metric, list(range(n)))

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float | None]], metric: str = "map") -> AccuracyMatrix:
        n = len(rows)
        m = cls.empty(n, metric)
        for t, row in enumerate(rows):
            for k, v in enumerate(row):
                if v is not None and not (isinstance(v, float) and math.isnan(v)):
                    m.set(t, k, float(v))
        return m

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def set(self, t: int, k: int, value: float) -> None:
        self.values[t, k] = value
        self.filled[t, k] = True

    def get(self, t: int, k: int) -> float:
        if not self.filled[t, k]:
            raise KeyError(f"cell ({t}, {k}) of the {self.metric} matrix was not evaluated")
        return float(self.values[t, k])

    def rows(self) -> list[list[float | None]]:
        return [[float(v) if f else None for v, f in zip(r, fr)] for r, fr in zip(self.values, self.filled)]


@dataclass
class CLMetrics:
    LA: float
    AA: float
    F: float | None
    BWT: float | None
    FWT: float | None

    def as_dict(self) -> dict[str, float | None]:
        return {"LA": self.LA, "AA": self.AA, "F": self.F, "BWT": self.BWT, "FWT": self.FWT}


def cl_metrics(a: AccuracyMatrix | Sequence[Sequence[float]]) -> CLMetrics:
    """Learning accuracy, average accuracy, forgetting, BWT and FWT.

    Only cells with ``k <= t`` and the one-ahead cells ``k = t + 1`` are read.
    With a single task, F/BWT/FWT are undefined and returned as None.
    """
    if not isinstance(a, AccuracyMatrix):
        a = AccuracyMatrix.from_rows(a)
    n = a.n
    last = n - 1
    la = sum(a.get(t, t) for t in range(n)) / n
    aa = sum(a.get(last, k) for k in range(n)) / n
    if n == 1:
        return CLMetrics(la, aa, None, None, None)
    forget = sum(
        max(a.get(t, k) for t in range(k, n)) - a.get(last, k) for k in range(n - 1)
    ) / (n - 1)
    bwt = sum(a.get(last, k) - a.get(k, k) for k in range(n - 1)) / (n - 1)
    fwt = sum(a.get(k - 1, k) for k in range(1, n)) / (n - 1)
    return CLMetrics(la, aa, forget, bwt, fwt)


# -- file formats ----------------------------------------------------------------
def write_matrix_csv(matrix: AccuracyMatrix, path: str | Path) -> Path:
    """Header: ``train_step`` then one column per evaluated task id; blank = not evaluated."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["train_step"] + [f"task_{k}" for k in matrix.task_ids])
        for t, row in enumerate(matrix.rows()):
            w.writerow([t] + ["" if v is None else repr(v) for v in row])
    return path


def read_matrix_csv(path: str | Path, metric: str = "map") -> AccuracyMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = [[None if c == "" else float(c) for c in r[1:]] for r in rows[1:]]
    return AccuracyMatrix.from_rows(body, metric)


def read_matrix(path: str | Path) -> AccuracyMatrix:
    """Load a matrix from CSV, or from JSON (a bare list of rows or ``{"matrix": ...}``)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_matrix_csv(path)
    data = json.loads(path.read_text())
    if isinstance(data, dict):
        data = data.get("matrix", data.get("matrices", {}).get("map"))
    return AccuracyMatrix.from_rows(data)


def write_long_csv(matrices: dict[str, AccuracyMatrix], path: str | Path) -> Path:
    """Heatmap-ready long format: ``metric, train_step, eval_task, value``."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "train_step", "eval_task", "value"])
        for name, m in matrices.items():
            for t in range(m.n):
                for k in range(m.n):
                    if m.filled[t, k]:
                        w.writerow([name, t, m.task_ids[k], repr(float(m.values[t, k]))])
    return path
