"""Training losses and evaluation metrics for binary segmentation.

Losses (binary cross-entropy, soft IoU) are differentiable tape ops whose
gradients flow only through the prediction, never the target.  Metrics
cover thresholded precision/recall/F1/IoU plus a soft (probability-level)
Dice and rank-based ROC-AUC.  Thresholded Dice is computed with the same
expression as F1, so the two are identical by construction; the soft Dice
reported next to F1 is a genuinely different number.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import MetricError, ShapeError
from .tensor import SCALAR_SHAPE, Tensor, record_op

CLAMP_EPS = 1e-7
IOU_SMOOTHING = 1.0


def _check_pair(pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"pred/target shape mismatch: {pred.shape} vs {target.shape}")


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over pixels of -[y ln p + (1-y) ln(1-p)], p clamped to [eps, 1-eps]."""
    _check_pair(pred, target)
    y = target.data.astype(np.float64)
    p = np.clip(pred.data.astype(np.float64), CLAMP_EPS, 1.0 - CLAMP_EPS)
    inside = (pred.data > CLAMP_EPS) & (pred.data < 1.0 - CLAMP_EPS)
    count = p.size
    value = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).mean()
    out = np.asarray(value, dtype=pred.data.dtype).reshape(SCALAR_SHAPE)

    def back(grad: np.ndarray) -> tuple:
        g = grad.reshape(())[()]
        # d/dp of the mean; clamped coordinates are flat
        dp = np.where(inside, (p - y) / (p * (1.0 - p) * count), 0.0)
        return (g * dp.astype(pred.data.dtype),)

    return record_op((pred,), out, back)


def soft_iou_loss(pred: Tensor, target: Tensor, smoothing: float = IOU_SMOOTHING) -> Tensor:
    """1 - (sum(p*y)+s) / (sum(p)+sum(y)-sum(p*y)+s), default smoothing s=1."""
    _check_pair(pred, target)
    y = target.data.astype(np.float64)
    p = pred.data.astype(np.float64)
    s = smoothing
    inter = float((p * y).sum())
    union = float(p.sum() + y.sum() - inter)
    value = 1.0 - (inter + s) / (union + s)
    out = np.asarray(value, dtype=pred.data.dtype).reshape(SCALAR_SHAPE)

    def back(grad: np.ndarray) -> tuple:
        g = grad.reshape(())[()]
        denom = (union + s) ** 2
        dp = -(y * (union + s) - (inter + s) * (1.0 - y)) / denom
        return (g * dp.astype(pred.data.dtype),)

    return record_op((pred,), out, back)


@dataclass
class ConfusionCounts:
    """Pixel counts at a fixed threshold; an additive monoid across tiles."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _values(x: Tensor | np.ndarray) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def confusion(
    pred: Tensor | np.ndarray, target: Tensor | np.ndarray, threshold: float = 0.5
) -> ConfusionCounts:
    """Pixel is predicted positive iff score >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0,1), got {threshold}")
    p = _values(pred) >= threshold
    y = _values(target) > 0.5
    if p.shape != y.shape:
        raise ShapeError(f"pred/target shape mismatch: {p.shape} vs {y.shape}")
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & y)),
        fp=int(np.count_nonzero(p & ~y)),
        fn=int(np.count_nonzero(~p & y)),
        tn=int(np.count_nonzero(~p & ~y)),
    )


def soft_dice(pred: Tensor | np.ndarray, target: Tensor | np.ndarray) -> float:
    """2*sum(p*y) / (sum(p)+sum(y)) on raw probabilities."""
    p = _values(pred).astype(np.float64)
    y = _values(target).astype(np.float64)
    denom = p.sum() + y.sum()
    if denom == 0.0:
        return 0.0
    return float(2.0 * (p * y).sum() / denom)


def thresholded_dice(c: ConfusionCounts) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 2.0 * c.tp / denom if denom else 0.0


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    dice_soft: float
    iou: float
    auc: float | None
    threshold: float
    undefined: tuple[str, ...] = ()

    def as_row(self) -> dict:
        return {
            "f1_x100": round(self.f1 * 100.0, 4),
            "precision_x100": round(self.precision * 100.0, 4),
            "recall_x100": round(self.recall * 100.0, 4),
            "dice_soft": round(self.dice_soft, 6),
            "iou": round(self.iou, 6),
            "auc": "" if self.auc is None else round(self.auc, 6),
            "threshold": self.threshold,
        }


def prf_dice(
    c: ConfusionCounts,
    pred: Tensor | np.ndarray | None = None,
    target: Tensor | np.ndarray | None = None,
    threshold: float = 0.5,
) -> MetricsReport:
    """Thresholded precision/recall/F1/IoU plus soft Dice when pred given.

    Zero denominators yield 0 and set a flag naming the degenerate metric.
    F1 is evaluated as 2*tp/(2*tp+fp+fn), the same expression as
    thresholded Dice.
    """
    undefined: list[str] = []

    def ratio(num: int, den: int, name: str) -> float:
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    precision = ratio(c.tp, c.tp + c.fp, "precision")
    recall = ratio(c.tp, c.tp + c.fn, "recall")
    f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, "f1")
    iou = ratio(c.tp, c.tp + c.fp + c.fn, "iou")
    dice = (
        soft_dice(pred, target) if pred is not None and target is not None else 0.0
    )
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        dice_soft=dice,
        iou=iou,
        auc=None,
        threshold=threshold,
        undefined=tuple(undefined),
    )


def roc_auc(pred: Tensor | np.ndarray, target: Tensor | np.ndarray) -> float:
    """Rank-statistic AUC: P(random positive outscores random negative), ties 1/2."""
    scores = _values(pred).reshape(-1).astype(np.float64)
    labels = _values(target).reshape(-1) > 0.5
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: target contains a single class")
    ranks = rankdata(scores)  # average ranks give the 1/2 tie credit
    rank_sum = float(ranks[labels].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_auc_per_image(pred: Tensor | np.ndarray, target: Tensor | np.ndarray) -> float:
    """Mean of per-image AUCs over the batch axis; single-class images skipped."""
    scores = _values(pred)
    labels = _values(target)
    per_image = []
    for i in range(scores.shape[0]):
        try:
            per_image.append(roc_auc(scores[i], labels[i]))
        except MetricError:
            continue
    if not per_image:
        raise MetricError("AUC undefined: every image contains a single class")
    return float(np.mean(per_image))


def evaluate(
    pred: Tensor | np.ndarray,
    target: Tensor | np.ndarray,
    threshold: float = 0.5,
    auc_per_image: bool = False,
) -> MetricsReport:
    """Full report; pixels pool across images unless auc_per_image is set.

    AUC is left out when the target has one class.
    """
    counts = confusion(pred, target, threshold)
    report = prf_dice(counts, pred, target, threshold)
    auc_fn = roc_auc_per_image if auc_per_image else roc_auc
    try:
        report.auc = auc_fn(pred, target)
    except MetricError:
        report.undefined = report.undefined + ("auc",)
    return report


def metrics_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    row = report.as_row()
    writer = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
    writer.writeheader()
    writer.writerow(row)
    return buf.getvalue()


def render_metrics_block(report: MetricsReport) -> str:
    """Human-readable block with the x100 scaling used in the result tables."""
    lines = [
        f"F-1 x100:       {report.f1 * 100.0:.2f}",
        f"Precision x100: {report.precision * 100.0:.2f}",
        f"Recall x100:    {report.recall * 100.0:.2f}",
        f"Dice (soft):    {report.dice_soft:.4f}",
        f"IoU:            {report.iou:.4f}",
    ]
    if report.auc is not None:
        lines.append(f"AUC:            {report.auc:.4f}")
    if report.undefined:
        lines.append(f"undefined (reported as 0): {', '.join(report.undefined)}")
    return "\n".join(lines)
