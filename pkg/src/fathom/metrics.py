"""Evaluation metrics and attention-matrix export.

Classification metrics are computed per label and macro-averaged with fixed
zero-denominator conventions; SMAPE uses the factor-2 form with the both-zero
term defined as 0. Attention matrices export as one CSV per window plus a
spike summary listing every weight above spike_factor/D.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError, ShapeError

SPIKE_FACTOR = 3.0
_FLOAT_FMT = "%.8e"  # float32-level precision in exported files


@dataclass
class LabelStats:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    ba: float


@dataclass
class ClassificationReport:
    per_label: list  # LabelStats, one per label column
    precision: float
    recall: float
    f1: float
    ba: float

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "ba": self.ba,
            "per_label": [vars(s) for s in self.per_label],
        }


def classification_metrics(probs: np.ndarray, labels: np.ndarray,
                           threshold: float = 0.5) -> ClassificationReport:
    """Binarize probabilities at `threshold` (strictly greater) and report
    per-label and macro precision/recall/F1/balanced accuracy.

    Conventions: precision/recall are 0 on a zero denominator; the TPR (TNR)
    term of BA is 0 when there are no positive (negative) instances."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape or probs.ndim != 2:
        raise ShapeError(f"got predictions {probs.shape} vs labels {labels.shape}")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise DataError("labels must be binary 0/1")
    pred = probs > threshold
    truth = labels == 1.0

    stats = []
    for m in range(labels.shape[1]):
        p, t = pred[:, m], truth[:, m]
        tp = int(np.sum(p & t))
        fp = int(np.sum(p & ~t))
        tn = int(np.sum(~p & ~t))
        fn = int(np.sum(~p & t))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        tpr = tp / (tp + fn) if tp + fn else 0.0
        tnr = tn / (tn + fp) if tn + fp else 0.0
        stats.append(LabelStats(tp, fp, tn, fn, precision, recall, f1, (tpr + tnr) / 2))

    return ClassificationReport(
        per_label=stats,
        precision=float(np.mean([s.precision for s in stats])),
        recall=float(np.mean([s.recall for s in stats])),
        f1=float(np.mean([s.f1 for s in stats])),
        ba=float(np.mean([s.ba for s in stats])),
    )


def smape(pred: np.ndarray, target: np.ndarray) -> float:
    """Symmetric mean absolute percentage error in [0, 2]:
    mean of 2|p - t| / (|p| + |t|), with 0/0 terms counted as 0."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"got predictions {pred.shape} vs targets {target.shape}")
    denom = np.abs(pred) + np.abs(target)
    num = 2.0 * np.abs(pred - target)
    terms = np.where(denom == 0.0, 0.0, num / np.where(denom == 0.0, 1.0, denom))
    return float(terms.mean())


# ---------------------------------------------------------------------------
# attention export


@dataclass
class AttentionRecord:
    """Per-window attention matrices captured during a forward pass; either
    matrix may be absent for ablation variants."""

    task_id: str
    window_index: int
    sensor_attention: np.ndarray | None  # (T, D)
    time_attention: np.ndarray | None    # (T,)
    feature_names: list = field(default_factory=list)


def feature_attention_mass(sensor_attention: np.ndarray, features) -> float:
    """Mean total attention weight landing on the given feature indices,
    averaged over windows and time steps."""
    sel = np.asarray(sensor_attention)[..., list(features)]
    return float(sel.sum(axis=-1).mean())


def export_attention(records, out_dir, spike_factor: float = SPIKE_FACTOR) -> list:
    """Write one CSV per record (rows = time steps, one column per feature,
    plus a time_attention column when present) and a spike summary CSV of all
    sensor weights above spike_factor/D. Returns the written paths."""
    records = list(records)
    if not records:
        raise ContractError("export_attention needs at least one record")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    spike_rows = []
    for rec in records:
        header = ["step"]
        steps = None
        if rec.sensor_attention is not None:
            sens = np.asarray(rec.sensor_attention)
            steps = sens.shape[0]
            names = rec.feature_names or [f"f{d:02d}" for d in range(sens.shape[1])]
            header += list(names)
        if rec.time_attention is not None:
            ta = np.asarray(rec.time_attention)
            steps = len(ta) if steps is None else steps
            header.append("time_attention")

        path = out / f"attention_{rec.task_id}_w{rec.window_index:05d}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t in range(steps):
                row = [t]
                if rec.sensor_attention is not None:
                    row += [_FLOAT_FMT % v for v in sens[t]]
                if rec.time_attention is not None:
                    row.append(_FLOAT_FMT % ta[t])
                w.writerow(row)
        written.append(path)

        if rec.sensor_attention is not None:
            cut = spike_factor / sens.shape[1]
            names = rec.feature_names or [f"f{d:02d}" for d in range(sens.shape[1])]
            for t, d in zip(*np.nonzero(sens > cut)):
                spike_rows.append(
                    [rec.task_id, rec.window_index, int(t), names[d], _FLOAT_FMT % sens[t, d]])

    spike_path = out / "spikes.csv"
    with open(spike_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "window", "time", "feature", "weight"])
        w.writerows(spike_rows)
    written.append(spike_path)
    return written
