import numpy as np
import pytest

from dataset import CLASS_NAMES, ClassLabel
from errors import BadLabel, EmptyMatrix, LengthMismatch
from metrics import (
    MetricsReport,
    OverallMetrics,
    compute_metrics,
    confusion,
    parse_key_value,
    render_key_value,
    render_report,
)


def test_confusion_tally():
    cm = confusion([0, 1, 1], [0, 0, 1])
    assert cm.counts[0, 0] == 1
    assert cm.counts[0, 1] == 1
    assert cm.counts[1, 1] == 1
    assert cm.total == 3


def test_confusion_diagonal_and_empty():
    truths = [0, 0, 3, 8, 8, 8]
    cm = confusion(truths, truths)
    assert (cm.counts == np.diag(np.diag(cm.counts))).all()
    assert cm.counts.sum(axis=1).tolist() == [2, 0, 0, 1, 0, 0, 0, 0, 3]
    assert confusion([], []).total == 0


def test_confusion_errors():
    with pytest.raises(LengthMismatch):
        confusion([0, 1], [0])
    with pytest.raises(BadLabel):
        confusion([9], [0])


def test_hand_computed_metrics():
    report = compute_metrics(confusion(preds=[0, 1, 1, 2], truths=[0, 0, 1, 2]))
    first = report.per_class[0]
    assert first.precision == 1.0
    assert first.recall == 0.5
    assert first.f1 == 2 / 3
    assert report.overall.accuracy == 0.75
    assert first.accuracy == 0.75
    assert report.total == 4


def test_perfect_predictions():
    labels = [c for c in range(9) for _ in range(3)]
    report = compute_metrics(confusion(labels, labels))
    o = report.overall
    assert (o.accuracy, o.macro_precision, o.macro_recall, o.macro_f1) == (1.0, 1.0, 1.0, 1.0)
    assert render_report(report) == "100.00%, 100.00%, 100.00%, 100.00%"
    assert report.undefined_classes == []


def test_single_class_flags_the_rest():
    report = compute_metrics(confusion([5, 5], [5, 5]))
    near_full = report.per_class[ClassLabel.NEAR_FULL]
    assert (near_full.precision, near_full.recall, near_full.f1) == (1.0, 1.0, 1.0)
    assert len(report.undefined_classes) == 8
    assert ClassLabel.NEAR_FULL not in report.undefined_classes
    assert report.overall.macro_f1 == 1.0


def test_zero_precision_and_recall_gives_zero_f1():
    report = compute_metrics(confusion([1, 0], [0, 1]))
    assert report.per_class[0].precision == 0.0
    assert report.per_class[0].f1 == 0.0


def test_empty_matrix():
    with pytest.raises(EmptyMatrix):
        compute_metrics(confusion([], []))


def _random_pairs(seed, n=300):
    rng = np.random.default_rng(seed)
    return rng.integers(9, size=n), rng.integers(9, size=n)


def test_permutation_invariance():
    preds, truths = _random_pairs(0)
    order = np.random.default_rng(1).permutation(preds.size)
    assert compute_metrics(confusion(preds, truths)) == compute_metrics(confusion(preds[order], truths[order]))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_independent_recomputation(seed):
    preds, truths = _random_pairs(seed)
    report = compute_metrics(confusion(preds, truths))
    assert report.overall.accuracy == pytest.approx(float(np.mean(preds == truths)), abs=1e-15)

    defined = [m for m in report.per_class if not m.undefined]
    for m in defined:
        if m.precision + m.recall > 0:
            assert m.f1 == pytest.approx(2 * m.precision * m.recall / (m.precision + m.recall))
    assert report.overall.macro_f1 == pytest.approx(np.mean([m.f1 for m in defined]), abs=1e-15)
    assert report.overall.macro_precision == pytest.approx(
        np.mean([m.precision for m in defined]), abs=1e-15)

    support = np.array([m.support for m in report.per_class])
    recall = np.array([m.recall for m in report.per_class])
    assert report.overall.weighted_recall == pytest.approx(float((support * recall).sum() / support.sum()))
    # support-weighted recall is the overall accuracy
    assert report.overall.weighted_recall == pytest.approx(report.overall.accuracy)


def test_random_predictor_accuracy():
    preds, truths = _random_pairs(3, n=1800)
    accuracy = compute_metrics(confusion(preds, truths)).overall.accuracy
    # four binomial standard deviations around 1/9
    assert abs(accuracy - 1 / 9) < 4 * np.sqrt((1 / 9) * (8 / 9) / 1800)


def test_overall_row_format():
    overall = OverallMetrics(0.8463, 0.8624, 0.8441, 0.8340, 0.0, 0.0, 0.0)
    report = MetricsReport(overall, [], 100)
    assert render_report(report, "overall") == "84.63%, 86.24%, 84.41%, 83.40%"


def test_per_class_rows():
    report = compute_metrics(confusion([5, 5, 0], [5, 5, 1]))
    lines = render_report(report, "per_class").splitlines()
    assert len(lines) == 9
    assert [line.split()[0] for line in lines] == list(CLASS_NAMES)
    near_full = lines[ClassLabel.NEAR_FULL]
    assert near_full.startswith("Near-full")
    assert near_full.endswith("100.00%, 100.00%, 100.00%, 100.00%")
    assert "n/a" in lines[ClassLabel.CENTER]
    with pytest.raises(ValueError):
        render_report(report, "fancy")


def test_key_value_report():
    preds, truths = _random_pairs(4, n=50)
    report = compute_metrics(confusion(preds, truths))
    values = parse_key_value(render_key_value(report))
    assert values["macro_f1"] == report.overall.macro_f1
    assert values["weighted_precision"] == report.overall.weighted_precision
    assert values["class.Edge-Loc.recall"] == report.per_class[ClassLabel.EDGE_LOC].recall
    assert values["samples"] == 50

    sparse = compute_metrics(confusion([5], [5]))
    parsed = parse_key_value(render_key_value(sparse))
    assert parsed["class.Donut.precision"] is None
    assert len(parsed["undefined_classes"]) == 8
