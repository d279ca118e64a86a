"""Classification reports in the confusion-matrix / per-class layout."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .boosting import logloss


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    tn: int
    fp: int
    fn: int
    tp: int
    classes: tuple[ClassScores, ClassScores]
    accuracy: float
    macro: ClassScores
    weighted: ClassScores
    logloss: float = float("nan")
    feature_scores: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classes"] = [asdict(c) for c in self.classes]
        return d

    def confusion_table(self) -> str:
        return "\n".join([
            "              predicted 0  predicted 1",
            f"actual 0  {self.tn:>13d}{self.fp:>13d}",
            f"actual 1  {self.fn:>13d}{self.tp:>13d}",
        ])

    def classification_table(self) -> str:
        lines = [f"{'':>14}{'precision':>10}{'recall':>10}{'f1-score':>10}{'support':>10}", ""]
        for label, c in zip(("0", "1"), self.classes):
            lines.append(f"{label:>14}{c.precision:>10.2f}{c.recall:>10.2f}{c.f1:>10.2f}{c.support:>10d}")
        lines.append("")
        lines.append(f"{'accuracy':>14}{'':>10}{'':>10}{self.accuracy:>10.2f}{self.total:>10d}")
        for label, c in (("macro avg", self.macro), ("weighted avg", self.weighted)):
            lines.append(f"{label:>14}{c.precision:>10.2f}{c.recall:>10.2f}{c.f1:>10.2f}{c.support:>10d}")
        return "\n".join(lines)


def _ratio(a: float, b: float) -> float:
    return a / b if b else 0.0


def _scores(tp: int, fp: int, fn: int) -> ClassScores:
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    return ClassScores(p, r, _ratio(2 * p * r, p + r), tp + fn)


def report_from_confusion(tn: int, fp: int, fn: int, tp: int, loss: float = float("nan"),
                          feature_scores: dict | None = None) -> MetricsReport:
    neg = _scores(tn, fn, fp)  # class 0 viewed as the positive class
    pos = _scores(tp, fp, fn)
    total = tn + fp + fn + tp
    macro = ClassScores(*(float(np.mean([getattr(neg, k), getattr(pos, k)])) for k in ("precision", "recall", "f1")),
                        total)
    w0, w1 = _ratio(neg.support, total), _ratio(pos.support, total)
    weighted = ClassScores(*(w0 * getattr(neg, k) + w1 * getattr(pos, k) for k in ("precision", "recall", "f1")),
                           total)
    return MetricsReport(tn, fp, fn, tp, (neg, pos), _ratio(tn + tp, total), macro, weighted,
                         loss, dict(feature_scores or {}))


def evaluate_classifier(model, X, y, threshold: float = 0.5) -> MetricsReport:
    y = np.asarray(y).astype(np.int64)
    if y.size == 0:
        raise ValueError("cannot evaluate on an empty set")
    p = model.predict_proba(X)
    pred = (p >= threshold).astype(np.int64)
    tp = int(np.sum((pred == 1) & (y == 1)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    return report_from_confusion(tn, fp, fn, tp, logloss(y, p), model.feature_scores())
