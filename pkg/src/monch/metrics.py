"""Segmentation metric suite: PA, per-class IoU/precision/recall/F1, FWIoU.

Everything derives from one confusion matrix (rows = ground truth, columns
= prediction), which the report keeps so every number is recomputable.
0/0 cells are defined as 0; classes absent from both prediction and ground
truth are excluded from the per-class averages and flagged in the report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """[N+1, N+1] counts with M[g, p] = #pixels of truth g predicted p."""
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction/truth size mismatch: {pred.shape} vs {gt.shape}")
    if pred.size and (pred.min() < 0 or pred.max() >= num_classes):
        raise ValueError("prediction labels out of range")
    if gt.size and (gt.min() < 0 or gt.max() >= num_classes):
        raise ValueError("ground-truth labels out of range")
    flat = gt.astype(np.int64) * num_classes + pred.astype(np.int64)
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a, dtype=np.float64)
    np.divide(a, b, out=out, where=b != 0)
    return out


@dataclass
class MetricsReport:
    class_names: list[str]
    confusion: np.ndarray
    pixel_accuracy: float = field(init=False)
    fw_iou: float = field(init=False)
    iou: np.ndarray = field(init=False)
    precision: np.ndarray = field(init=False)
    recall: np.ndarray = field(init=False)
    f1: np.ndarray = field(init=False)
    present: np.ndarray = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.confusion, dtype=np.float64)
        total = m.sum()
        diag = np.diag(m)
        rows = m.sum(axis=1)
        cols = m.sum(axis=0)
        self.pixel_accuracy = float(diag.sum() / total) if total else 0.0
        self.iou = _safe_div(diag, rows + cols - diag)
        self.precision = _safe_div(diag, cols)
        self.recall = _safe_div(diag, rows)
        self.f1 = _safe_div(2.0 * self.precision * self.recall, self.precision + self.recall)
        self.fw_iou = float(((rows / total) * self.iou).sum()) if total else 0.0
        self.present = (rows + cols) > 0

    def mean_over_present(self, values: np.ndarray) -> float:
        if not self.present.any():
            return 0.0
        return float(values[self.present].mean())

    def mean_foreground_iou(self) -> float:
        fg = self.present.copy()
        fg[0] = False
        if not fg.any():
            return 0.0
        return float(self.iou[fg].mean())

    def to_text(self) -> str:
        lines = []
        header = f"{'class':<16}{'IoU':>10}{'Precision':>12}{'Recall':>10}{'F1':>10}  present"
        lines.append(header)
        lines.append("-" * len(header))
        for i, name in enumerate(self.class_names):
            lines.append(
                f"{name:<16}{self.iou[i]:>10.4f}{self.precision[i]:>12.4f}"
                f"{self.recall[i]:>10.4f}{self.f1[i]:>10.4f}  {'yes' if self.present[i] else 'no'}"
            )
        lines.append("-" * len(header))
        lines.append(f"pixel accuracy      {self.pixel_accuracy:.4f}")
        lines.append(f"frequency-weighted IoU  {self.fw_iou:.4f}")
        lines.append(f"mean IoU (present classes)  {self.mean_over_present(self.iou):.4f}")
        lines.append(f"mean F1 (present classes)   {self.mean_over_present(self.f1):.4f}")
        lines.append(f"mean foreground IoU {self.mean_foreground_iou():.4f}")
        return "\n".join(lines)


def compute_metrics(pred: np.ndarray, gt: np.ndarray, class_names: list[str]) -> MetricsReport:
    matrix = confusion_matrix(pred, gt, len(class_names))
    return MetricsReport(class_names=list(class_names), confusion=matrix)
