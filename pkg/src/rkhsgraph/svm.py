"""Representer-form SVM: decision values, hinge objective and predictions."""
from __future__ import annotations

from typing import Sequence

import numpy as np


def signed_labels(class_labels: Sequence[int]) -> np.ndarray:
    """Map classes {0, 1} to hinge targets {-1, +1}."""
    c = np.asarray(class_labels)
    if np.any((c != 0) & (c != 1)):
        raise ValueError("class labels must be 0 or 1")
    return np.where(c == 1, 1.0, -1.0)


def decision_values(K: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    alpha = np.asarray(alpha, dtype=np.float64)
    if K.shape[1] != alpha.shape[0]:
        raise ValueError(f"kernel has {K.shape[1]} columns but alpha has {alpha.shape[0]} entries")
    return K @ alpha


def predict(value: float) -> int:
    """Positive decision values are class 1; zero and below are class 0."""
    return 1 if value > 0 else 0


def predict_many(values: np.ndarray) -> np.ndarray:
    return (np.asarray(values) > 0).astype(np.int64)


def _check(K: np.ndarray, alpha: np.ndarray, y: np.ndarray, lam: float) -> None:
    n = len(alpha)
    if K.shape != (n, n) or y.shape != (n,):
        raise ValueError(f"shape mismatch: K {K.shape}, alpha {alpha.shape}, y {y.shape}")
    if lam < 0:
        raise ValueError("lambda must be non-negative")


def objective(K: np.ndarray, alpha: np.ndarray, y: np.ndarray, lam: float) -> float:
    """Sum of hinge losses of K @ alpha plus ``lam * alpha' K alpha``."""
    K = np.asarray(K, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check(K, alpha, y, lam)
    f = K @ alpha
    return float(np.maximum(0.0, 1.0 - y * f).sum() + lam * alpha @ f)


def objective_grad(
    K: np.ndarray, alpha: np.ndarray, y: np.ndarray, lam: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Objective with its gradients w.r.t. ``K`` (n x n) and ``alpha``.

    Hinge terms with margin exactly 1 contribute a zero subgradient.
    """
    _check(K, alpha, y, lam)
    f = K @ alpha
    slack = 1.0 - y * f
    active = (slack > 0).astype(np.float64)
    value = float(np.maximum(0.0, slack).sum() + lam * alpha @ f)
    df = -y * active
    dK = np.outer(df, alpha) + lam * np.outer(alpha, alpha)
    dalpha = K.T @ df + lam * (K + K.T) @ alpha
    return value, dK, dalpha
