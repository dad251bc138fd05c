import numpy as np
import pytest

from s2plor.errors import ShapeError
from s2plor.metrics import evaluate, roc_auc


def test_evaluate_confusion_and_scores():
    report = evaluate([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8])
    assert report.confusion == (1, 0, 2, 1)
    assert report.accuracy == pytest.approx(0.75)
    assert report.precision == pytest.approx(1.0)
    assert report.recall == pytest.approx(0.5)
    assert report.f1 == pytest.approx(2 / 3)
    assert report.auc == pytest.approx(0.75)


def test_single_class_and_empty_denominators():
    assert roc_auc([1, 1, 1], [0.2, 0.3, 0.9]) == 0.0
    report = evaluate([0, 0], [0.1, 0.2])
    assert report.precision == 0.0
    assert report.recall == 0.0
    assert report.f1 == 0.0
    assert report.accuracy == 1.0


def test_scores_are_clipped_and_sizes_checked():
    report = evaluate([1, 0], [1.0000001, -1e-9])
    assert report.confusion == (1, 0, 1, 0)
    with pytest.raises(ShapeError):
        evaluate([1, 0, 1], [0.5, 0.5])


def test_worked_confusion_example():
    report = evaluate([1, 0, 1, 0], [0.9, 0.8, 0.7, 0.1])
    assert report.confusion == (2, 1, 1, 0)
    assert report.accuracy == pytest.approx(0.75)
    assert report.precision == pytest.approx(2 / 3)
    assert report.recall == pytest.approx(1.0)
    assert report.f1 == pytest.approx(0.8)
    assert report.auc == pytest.approx(0.75)


def test_auc_extremes():
    y = np.array([0.0, 1.0, 1.0, 0.0, 1.0])
    assert roc_auc(y, y) == 1.0
    assert roc_auc(y, 1.0 - y) == 0.0


def test_random_scores_sit_near_chance():
    rng = np.random.default_rng(0)
    y = np.repeat([0.0, 1.0], 50)
    aucs = [roc_auc(y, rng.random(100)) for _ in range(1000)]
    assert 0.4 <= np.mean(aucs) <= 0.6
