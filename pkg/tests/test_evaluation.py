import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from core.errors import ShapeError, UndefinedCorrelationError
from models.report import PredictionRow
from services.evaluation_service import evaluate_predictions, mse, precision_recall, spearman_rho


def _closed_form_rho(x, y):
    # no ties: 1 - 6 sum d^2 / (n (n^2 - 1))
    n = len(x)
    rx = np.argsort(np.argsort(x))
    ry = np.argsort(np.argsort(y))
    d = rx - ry
    return 1.0 - 6.0 * float(np.sum(d * d)) / (n * (n * n - 1))


def _average_ranks(values):
    ranks = [0.0] * len(values)
    for i, v in enumerate(values):
        less = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        ranks[i] = less + (equal + 1) / 2.0
    return ranks


def _pearson(a, b):
    ma, mb = sum(a) / len(a), sum(b) / len(b)
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    return cov / math.sqrt(sum((x - ma) ** 2 for x in a) * sum((y - mb) ** 2 for y in b))


def test_spearman_examples():
    assert spearman_rho([1, 2, 3], [10, 20, 30]) == 1.0
    assert spearman_rho([3, 2, 1], [10, 20, 30]) == -1.0
    assert spearman_rho([1, 2, 2, 3], [1, 2, 3, 4]) == pytest.approx(0.9486832980505138)


def test_spearman_undefined():
    with pytest.raises(UndefinedCorrelationError):
        spearman_rho([5, 5, 5], [1, 2, 3])
    with pytest.raises(UndefinedCorrelationError):
        spearman_rho([1], [1])
    with pytest.raises(ShapeError):
        spearman_rho([1, 2], [1, 2, 3])


def test_spearman_matches_closed_form_without_ties():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 12))
        x, y = rng.permutation(n) + rng.uniform(0, 0.5), rng.permutation(n) * 1.0
        assert spearman_rho(x, y) == pytest.approx(_closed_form_rho(x, y), abs=1e-12)


def test_spearman_matches_brute_force_with_ties():
    rng = np.random.default_rng(1)
    checked = 0
    while checked < 1000:
        n = int(rng.integers(2, 9))
        x = rng.integers(0, 4, size=n).astype(float)
        y = rng.integers(0, 4, size=n).astype(float)
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        expected = _pearson(_average_ranks(list(x)), _average_ranks(list(y)))
        assert abs(spearman_rho(x, y) - expected) < 1e-12
        checked += 1


@given(st.lists(st.integers(min_value=-1000, max_value=1000), min_size=2, max_size=20, unique=True))
def test_spearman_monotone_invariance(values):
    x = np.array(values, dtype=np.float64)
    assert spearman_rho(x, x ** 3) == pytest.approx(1.0)
    assert spearman_rho(x, -x) == pytest.approx(-1.0)


def test_mse():
    assert mse([1, 2, 3], [1, 2, 3]) == 0.0
    assert mse([0, 0], [3, 4]) == 12.5
    with pytest.raises(ShapeError):
        mse([], [])


@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=1, max_size=30))
def test_mse_non_negative_and_symmetric(pairs):
    a, b = [p[0] for p in pairs], [p[1] for p in pairs]
    assert mse(a, b) >= 0
    assert mse(a, b) == mse(b, a)


def test_precision_recall_all_subsets_of_six_clips():
    universe = range(1, 7)
    subsets = [set(c) for r in range(7) for c in itertools.combinations(universe, r)]
    for predicted in subsets:
        for truth in subsets:
            p, r = precision_recall(predicted, truth)
            hits = len(predicted & truth)
            assert p == (hits / len(predicted) if predicted else (1.0 if not truth else 0.0))
            assert r == (hits / len(truth) if truth else 1.0)


def test_precision_recall_example():
    assert precision_recall({3, 7}, {3}) == (0.5, 1.0)
    assert precision_recall(set(), set()) == (1.0, 1.0)


def test_evaluate_predictions_with_per_type():
    rows = [
        PredictionRow(video_id=f"v{i}", action_type=1 + i % 2, true_score=float(10 * i), predicted_score=float(10 * i + 1),
                      expert_ids=["e"])
        for i in range(6)
    ]
    report = evaluate_predictions(rows)
    assert report.rho == 1.0 and report.mse == 1.0 and report.n == 6
    assert [t.action_type for t in report.per_type] == [1, 2]
    assert all(t.rho == 1.0 for t in report.per_type)
    assert set(report.model_dump()) == {"rho", "mse", "n", "per_type"}
