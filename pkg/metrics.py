"""Confusion matrices, Accuracy/Precision/Recall/F1 and their table renderings."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from dataset import CLASS_NAMES, NUM_CLASSES, ClassLabel
from errors import BadLabel, EmptyMatrix, LengthMismatch

logger = logging.getLogger(__name__)

UNDEFINED = "n/a"


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """counts[t, p]: number of samples of true class t predicted as p."""

    counts: np.ndarray

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassMetrics:
    label: ClassLabel
    support: int
    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]

    @property
    def undefined(self) -> bool:
        return self.precision is None or self.recall is None


@dataclass(frozen=True)
class OverallMetrics:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float


@dataclass(frozen=True)
class MetricsReport:
    overall: OverallMetrics
    per_class: List[ClassMetrics]
    total: int

    @property
    def undefined_classes(self) -> List[ClassLabel]:
        return [m.label for m in self.per_class if m.undefined]


def confusion(preds: Sequence[int], truths: Sequence[int]) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).ravel()
    truths = np.asarray(truths, dtype=np.int64).ravel()
    if preds.shape != truths.shape:
        raise LengthMismatch(f"{preds.size} predictions vs {truths.size} truths")
    for name, values in (("prediction", preds), ("truth", truths)):
        if values.size and (values.min() < 0 or values.max() >= NUM_CLASSES):
            raise BadLabel(f"{name} labels must be in 0..{NUM_CLASSES - 1}")
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(counts, (truths, preds), 1)
    return ConfusionMatrix(counts)


def _ratio(num: float, den: float) -> Optional[float]:
    return num / den if den > 0 else None


def _mean_defined(values: Sequence[Optional[float]]) -> float:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else 0.0


def _weighted(values: Sequence[Optional[float]], support: Sequence[int]) -> float:
    pairs = [(v, s) for v, s in zip(values, support) if v is not None and s > 0]
    weight = sum(s for _, s in pairs)
    return sum(v * s for v, s in pairs) / weight if weight else 0.0


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """
    Per-class one-vs-rest accuracy, precision, recall and F1 plus overall
    accuracy and macro / support-weighted averages.

    A class whose precision or recall has a zero denominator is reported with
    None for that value and left out of the macro mean.
    """
    counts = cm.counts
    total = cm.total
    if total == 0:
        raise EmptyMatrix("cannot compute metrics from an empty confusion matrix")

    per_class = []
    for c in range(NUM_CLASSES):
        tp = int(counts[c, c])
        fp = int(counts[:, c].sum()) - tp
        fn = int(counts[c, :].sum()) - tp
        tn = total - tp - fp - fn
        precision = _ratio(tp, tp + fp)
        recall = _ratio(tp, tp + fn)
        if precision is None or recall is None:
            f1 = None
        elif precision + recall == 0:
            f1 = 0.0
        else:
            f1 = 2 * precision * recall / (precision + recall)
        per_class.append(ClassMetrics(ClassLabel(c), tp + fn, (tp + tn) / total, precision, recall, f1))

    support = [m.support for m in per_class]
    overall = OverallMetrics(
        accuracy=float(np.trace(counts)) / total,
        macro_precision=_mean_defined([m.precision for m in per_class]),
        macro_recall=_mean_defined([m.recall for m in per_class]),
        macro_f1=_mean_defined([m.f1 for m in per_class]),
        weighted_precision=_weighted([m.precision for m in per_class], support),
        weighted_recall=_weighted([m.recall for m in per_class], support),
        weighted_f1=_weighted([m.f1 for m in per_class], support),
    )
    return MetricsReport(overall, per_class, total)


def _pct(value: Optional[float]) -> str:
    return UNDEFINED if value is None else f"{value * 100:.2f}%"


def format_percent_row(values: Sequence[Optional[float]]) -> str:
    return ", ".join(_pct(v) for v in values)


def render_report(report: MetricsReport, style: str = "overall") -> str:
    """
    "overall": one line "Accuracy, Precision, Recall, F1" as percentages.
    "per_class": nine lines "<class> <Accuracy>, <Precision>, <Recall>, <F1>".
    """
    if style == "overall":
        o = report.overall
        return format_percent_row((o.accuracy, o.macro_precision, o.macro_recall, o.macro_f1))
    if style == "per_class":
        width = max(len(name) for name in CLASS_NAMES)
        return "\n".join(
            f"{m.label.display_name:<{width}} "
            + format_percent_row((m.accuracy, m.precision, m.recall, m.f1))
            for m in report.per_class
        )
    raise ValueError(f"unknown report style {style!r}")


def _kv(value: Optional[float]) -> str:
    return "undefined" if value is None else repr(float(value))


def render_key_value(report: MetricsReport) -> str:
    """Machine-readable report: one `key=value` per line, full float precision."""
    o = report.overall
    lines = [f"samples={report.total}"]
    for key in ("accuracy", "macro_precision", "macro_recall", "macro_f1",
                "weighted_precision", "weighted_recall", "weighted_f1"):
        lines.append(f"{key}={_kv(getattr(o, key))}")
    for m in report.per_class:
        prefix = f"class.{m.label.display_name}"
        lines.append(f"{prefix}.support={m.support}")
        for key in ("accuracy", "precision", "recall", "f1"):
            lines.append(f"{prefix}.{key}={_kv(getattr(m, key))}")
    undefined = ",".join(label.display_name for label in report.undefined_classes)
    lines.append(f"undefined_classes={undefined}")
    return "\n".join(lines) + "\n"


def parse_key_value(text: str) -> dict:
    """Inverse of render_key_value for numeric keys (undefined → None)."""
    values = {}
    for line in text.splitlines():
        if "=" not in line:
            continue
        key, value = line.split("=", 1)
        if key == "undefined_classes":
            values[key] = [v for v in value.split(",") if v]
        elif value == "undefined":
            values[key] = None
        else:
            values[key] = float(value)
    return values
