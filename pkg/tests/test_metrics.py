import math

import numpy as np
import pytest

from pdacascade.errors import EmptyInputError, InsufficientRunsError, UndefinedMetricError
from pdacascade.metrics import ConfusionCounts, accuracy, auc_roc, evaluate_predictions, mcc, summarize_runs


def _oracle_counts(predictions, labels):
    tp = sum(1 for p, l in zip(predictions, labels) if p == 1 and l == 1)
    fp = sum(1 for p, l in zip(predictions, labels) if p == 1 and l == 0)
    fn = sum(1 for p, l in zip(predictions, labels) if p == 0 and l == 1)
    tn = sum(1 for p, l in zip(predictions, labels) if p == 0 and l == 0)
    return tp, fp, fn, tn


def _oracle_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def _random_instance(rng):
    n = int(rng.integers(2, 201))
    labels = rng.integers(0, 2, size=n)
    labels[:2] = (0, 1)
    rng.shuffle(labels)
    # coarse scores so ties occur
    scores = rng.integers(0, 20, size=n) / 20.0
    return scores, labels


@pytest.mark.parametrize("counts, expected", [
    ((1, 0, 0, 1), 1.0),
    ((0, 0, 5, 7), 0.0),
    ((3, 1, 2, 4), 10 / math.sqrt(600)),
])
def test_mcc_examples(counts, expected):
    assert mcc(ConfusionCounts(*counts)) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("counts, expected", [
    ((1, 0, 0, 1), 1.0),
    ((0, 1, 1, 0), 0.0),
    ((3, 1, 2, 4), 0.7),
])
def test_accuracy_examples(counts, expected):
    assert accuracy(ConfusionCounts(*counts)) == pytest.approx(expected)


def test_empty_counts():
    empty = ConfusionCounts(0, 0, 0, 0)
    with pytest.raises(EmptyInputError):
        mcc(empty)
    with pytest.raises(EmptyInputError):
        accuracy(empty)


def test_negative_counts():
    with pytest.raises(ValueError):
        ConfusionCounts(-1, 0, 0, 0)


def test_counts_from_predictions():
    assert ConfusionCounts.from_predictions([1, 1, 0, 0, 1], [1, 0, 1, 0, 1]) == ConfusionCounts(2, 1, 1, 1)
    assert ConfusionCounts.from_predictions([], []).total == 0
    with pytest.raises(ValueError):
        ConfusionCounts.from_predictions([1], [1, 0])


def test_auc_examples():
    assert auc_roc([0.9, 0.1], [1, 0]) == 1.0
    assert auc_roc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    assert auc_roc([0.8, 0.6, 0.4, 0.3], [1, 0, 1, 0]) == 0.75


def test_auc_errors():
    with pytest.raises(UndefinedMetricError):
        auc_roc([0.2, 0.4], [1, 1])
    with pytest.raises(ValueError):
        auc_roc([0.2, 0.4, 0.5], [1, 0])


def test_metrics_match_oracles():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        scores, labels = _random_instance(rng)
        predictions = (scores >= 0.5).astype(int)
        tp, fp, fn, tn = _oracle_counts(predictions, labels)
        counts = ConfusionCounts.from_predictions(predictions, labels)
        assert counts == ConfusionCounts(tp, fp, fn, tn)
        assert accuracy(counts) == (tp + tn) / len(labels)
        denominator = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        expected = 0.0 if denominator == 0 else (tp * tn - fp * fn) / math.sqrt(denominator)
        assert mcc(counts) == expected
        assert abs(auc_roc(scores, labels) - _oracle_auc(scores, labels)) < 1e-12


def test_auc_invariant_under_increasing_transform():
    rng = np.random.default_rng(8)
    for _ in range(200):
        scores, labels = _random_instance(rng)
        raw = scores * 20
        assert auc_roc(raw ** 3 + 2 * raw - 5, labels) == auc_roc(scores, labels)


def test_mcc_flips_sign_with_predictions():
    rng = np.random.default_rng(9)
    for _ in range(200):
        scores, labels = _random_instance(rng)
        predictions = (scores >= 0.5).astype(int)
        value = mcc(ConfusionCounts.from_predictions(predictions, labels))
        flipped = mcc(ConfusionCounts.from_predictions(1 - predictions, labels))
        assert flipped == -value
        assert -1.0 <= value <= 1.0


def test_summarize_runs():
    summary = summarize_runs([0.5, 0.5, 0.5])
    assert summary.mean == 0.5 and summary.std == 0.0
    summary = summarize_runs([0.0, 1.0])
    assert summary.mean == 0.5
    assert summary.std == pytest.approx(math.sqrt(0.5))
    assert summary.ddof == 1
    assert summary.values == (0.0, 1.0)


def test_summarize_runs_bounds():
    rng = np.random.default_rng(10)
    for _ in range(100):
        values = rng.random(int(rng.integers(2, 10)))
        summary = summarize_runs(values)
        assert summary.std >= 0
        assert min(values) - 1e-12 <= summary.mean <= max(values) + 1e-12


def test_summarize_runs_needs_two_values():
    with pytest.raises(InsufficientRunsError):
        summarize_runs([0.3])
    with pytest.raises(InsufficientRunsError):
        summarize_runs([])


def test_evaluate_predictions():
    result = evaluate_predictions([0.9, 0.2, 0.6, 0.4], [1, 0, 0, 1])
    assert result["accuracy"] == 0.5
    assert result["mcc"] == 0.0
    assert result["auc_roc"] == 0.75
    single = evaluate_predictions([0.9, 0.2], [1, 1])
    assert math.isnan(single["auc_roc"])
    assert single["accuracy"] == 0.5
