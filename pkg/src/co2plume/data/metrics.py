"""Prediction-set metrics: cellwise RMSE, MAE, and the R^2 score."""

from __future__ import annotations

import numpy as np


def _flatten(pred: np.ndarray, truth: np.ndarray):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    n_samples = pred.shape[0]
    return pred.reshape(n_samples, -1), truth.reshape(n_samples, -1)


def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    """sqrt((1/N)(1/n) sum of squared per-sample errors)."""
    p, t = _flatten(pred, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def mae(pred: np.ndarray, truth: np.ndarray) -> float:
    p, t = _flatten(pred, truth)
    return float(np.mean(np.abs(p - t)))


def r2_score(pred: np.ndarray, truth: np.ndarray) -> float:
    """1 - squared error over squared deviation from the set-mean field."""
    p, t = _flatten(pred, truth)
    mean_field = t.mean(axis=0, keepdims=True)
    denom = float(np.sum((t - mean_field) ** 2))
    num = float(np.sum((t - p) ** 2))
    if denom == 0.0:
        return 1.0 if num == 0.0 else -np.inf
    return 1.0 - num / denom


def evaluate_arrays(pred: np.ndarray, truth: np.ndarray) -> dict:
    return {"rmse": rmse(pred, truth), "mae": mae(pred, truth),
            "r2": r2_score(pred, truth)}
