from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from sklearn.metrics import roc_auc_score

from .errors import ShapeError
from .numerics import as_vector


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float

    @property
    def confusion(self) -> tuple[int, int, int, int]:
        return self.tp, self.fp, self.tn, self.fn

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: float, den: float) -> float:
    return float(num / den) if den else 0.0


def roc_auc(y_true, y_score) -> float:
    y_true = as_vector(y_true, "y")
    if np.unique(y_true).size < 2:
        return 0.0
    return float(roc_auc_score(y_true, as_vector(y_score, "scores")))


def evaluate(y, scores, threshold: float = 0.5) -> MetricsReport:
    y = as_vector(y, "y")
    scores = np.clip(as_vector(scores, "scores"), 0.0, 1.0)
    if y.size != scores.size:
        raise ShapeError(f"{y.size} rotulos para {scores.size} predicoes.")
    predicted = scores >= threshold
    actual = y == 1
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    tn = int(np.sum(~predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return MetricsReport(
        accuracy=_ratio(tp + tn, y.size),
        precision=precision,
        recall=recall,
        f1=_ratio(2 * precision * recall, precision + recall),
        auc=roc_auc(y, scores),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        threshold=threshold,
    )
