"""Rank correlation, squared error and faulty-clip precision/recall."""

from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from core.errors import ShapeError, UndefinedCorrelationError
from models.report import EvalReport, PredictionRow, TypeMetrics


def spearman_rho(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Pearson correlation of average ranks; ties share the mean of their ranks."""
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"prediction and truth lengths differ: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise UndefinedCorrelationError("rank correlation needs at least two samples")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelationError("rank correlation is undefined for a constant list")
    rx = stats.rankdata(x, method="average")
    ry = stats.rankdata(y, method="average")
    rx -= rx.mean()
    ry -= ry.mean()
    rho = float(np.dot(rx, ry) / np.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))
    return min(1.0, max(-1.0, rho))


def mse(pred: Sequence[float], truth: Sequence[float]) -> float:
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if x.shape != y.shape or x.size == 0:
        raise ShapeError(f"mse needs equal non-empty lists, got {x.shape} and {y.shape}")
    return float(np.mean((x - y) ** 2))


def precision_recall(predicted_faulty: Iterable[int], true_faulty: Iterable[int]) -> tuple[float, float]:
    predicted, truth = set(predicted_faulty), set(true_faulty)
    hits = len(predicted & truth)
    if predicted:
        precision = hits / len(predicted)
    else:
        precision = 1.0 if not truth else 0.0
    recall = hits / len(truth) if truth else 1.0
    return precision, recall


def evaluate_predictions(rows: Sequence[PredictionRow]) -> EvalReport:
    scored = [r for r in rows if r.true_score is not None]
    pred = [r.predicted_score for r in scored]
    truth = [r.true_score for r in scored]
    per_type = []
    for t in sorted({r.action_type for r in scored}):
        group = [r for r in scored if r.action_type == t]
        gp = [r.predicted_score for r in group]
        gt = [r.true_score for r in group]
        try:
            rho = spearman_rho(gp, gt)
        except UndefinedCorrelationError:
            rho = None
        per_type.append(TypeMetrics(action_type=t, n=len(group), rho=rho, mse=mse(gp, gt)))
    return EvalReport(rho=spearman_rho(pred, truth), mse=mse(pred, truth), n=len(scored), per_type=per_type)
