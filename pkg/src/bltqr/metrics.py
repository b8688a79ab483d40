"""Estimation, selection and prediction metrics."""
from __future__ import annotations

import math

import numpy as np


def _pair(est, truth):
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch: estimate {est.shape} vs truth {truth.shape}")
    return est.ravel(), truth.ravel()


def relative_error(est, truth) -> float:
    """Sum of absolute errors over the sum of absolute true values."""
    est, truth = _pair(est, truth)
    denom = np.abs(truth).sum()
    if denom == 0:
        raise ValueError("relative error is undefined for an all-zero truth")
    return float(np.abs(est - truth).sum() / denom)


def rmse(est, truth) -> float:
    est, truth = _pair(est, truth)
    return float(np.sqrt(np.mean((est - truth) ** 2)))


def correlation(est, truth) -> float:
    """Pearson correlation across cells; NaN when either side is constant."""
    est, truth = _pair(est, truth)
    a = est - est.mean()
    b = truth - truth.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0:
        return float("nan")
    return float(np.clip((a @ b) / denom, -1.0, 1.0))


def confusion(selected, support) -> tuple[int, int, int, int]:
    """(TP, FP, TN, FN) with nonzero voxels as the positive class."""
    sel = np.asarray(selected, dtype=bool)
    sup = np.asarray(support, dtype=bool)
    if sel.shape != sup.shape:
        raise ValueError(f"shape mismatch: selected {sel.shape} vs support {sup.shape}")
    tp = int(np.sum(sel & sup))
    fp = int(np.sum(sel & ~sup))
    tn = int(np.sum(~sel & ~sup))
    fn = int(np.sum(~sel & sup))
    return tp, fp, tn, fn


def _ratio(num, den):
    return num / den if den else float("nan")


def selection_metrics(selected, support) -> dict:
    """Sensitivity, specificity, F1 and MCC; undefined values are NaN."""
    tp, fp, tn, fn = confusion(selected, support)
    den = math.sqrt(float(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    return {
        "sensitivity": _ratio(tp, tp + fn),
        "specificity": _ratio(tn, tn + fp),
        "f1": _ratio(2 * tp, 2 * tp + fp + fn),
        "mcc": _ratio(tp * tn - fp * fn, den),
        "tp": tp, "fp": fp, "tn": tn, "fn": fn,
    }


def check_loss(y, q_hat, q: float):
    """Pinball loss ``q|y - q_hat|`` above the prediction, ``(1 - q)|y - q_hat|`` otherwise."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    y = np.asarray(y, dtype=np.float64)
    r = y - np.asarray(q_hat, dtype=np.float64)
    out = np.where(r > 0, q * r, (q - 1.0) * r)
    return float(out) if out.ndim == 0 else out


def mean_check_loss(y, q_hat, q: float) -> float:
    return float(np.mean(check_loss(y, q_hat, q)))
