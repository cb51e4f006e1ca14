"""
LDSeg - Segmentation Metrics
Dice similarity coefficient and intersection over union per class, plus the
combined (union of all foreground classes) scores.
"""

from typing import Dict, Iterable, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from src.errors import DimensionError


def _sets(pred, truth, cls: Optional[int]):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
    if cls is None:
        return pred > 0, truth > 0
    return pred == cls, truth == cls


def dsc(pred, truth, cls: Optional[int]) -> float:
    """2|A n B| / (|A| + |B|); 1.0 when the class is absent from both. cls=None scores all foreground."""
    a, b = _sets(pred, truth, cls)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def iou(pred, truth, cls: Optional[int]) -> float:
    """|A n B| / |A u B|; 1.0 when the class is absent from both."""
    a, b = _sets(pred, truth, cls)
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


class MetricReport(BaseModel):
    """Per-sample averaged scores over a set of predictions."""
    dsc: Dict[int, float] = Field(default_factory=dict)
    iou: Dict[int, float] = Field(default_factory=dict)
    combined_dsc: float = Field(1.0, ge=0.0, le=1.0)
    combined_iou: float = Field(1.0, ge=0.0, le=1.0)
    samples: int = Field(0, ge=0)

    def summary(self) -> str:
        per_class = " ".join(f"c{c}={v:.3f}" for c, v in sorted(self.dsc.items()))
        return f"DSC={self.combined_dsc:.4f} IoU={self.combined_iou:.4f} ({per_class}, n={self.samples})"


def evaluate(preds: Iterable, truths: Iterable, num_classes: int) -> MetricReport:
    """
    Mean per-sample DSC/IoU of every foreground class (1..C-1) and of the
    combined foreground.
    """
    per_dsc: Dict[int, List[float]] = {c: [] for c in range(1, num_classes)}
    per_iou: Dict[int, List[float]] = {c: [] for c in range(1, num_classes)}
    combined_dsc, combined_iou = [], []
    for pred, truth in zip(preds, truths):
        for c in per_dsc:
            per_dsc[c].append(dsc(pred, truth, c))
            per_iou[c].append(iou(pred, truth, c))
        combined_dsc.append(dsc(pred, truth, None))
        combined_iou.append(iou(pred, truth, None))
    if not combined_dsc:
        return MetricReport()
    return MetricReport(
        dsc={c: float(np.mean(v)) for c, v in per_dsc.items()},
        iou={c: float(np.mean(v)) for c, v in per_iou.items()},
        combined_dsc=float(np.mean(combined_dsc)),
        combined_iou=float(np.mean(combined_iou)),
        samples=len(combined_dsc),
    )
