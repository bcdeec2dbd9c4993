"""Evaluation metrics: F1 and its support-weighted variant, the early-prediction
F1(tau) curve with its Riemann AUC, median absolute deviation, and Cohen's kappa.
"""

from dataclasses import dataclass

import numpy as np

# Early-prediction evaluation grid: first tau fraction of each event, tau in 0.1..1.0.
TAU_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))
TAU_STEP = 0.1


def f1(tp, fp, fn):
    """F1 score from confusion counts.

    Degenerate conventions: 0 when there are no true positives (including the
    all-zero case), 1 when tp > 0 and there are no errors.
    """
    if min(tp, fp, fn) < 0:
        raise ValueError("confusion counts must be non-negative")
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def weighted_f1(confusions, class_sizes):
    """Support-weighted mean of per-class F1 scores.

    confusions: sequence of (tp, fp, fn) triples, one per class.
    class_sizes: number of true examples of each class.
    """
    if len(confusions) == 0:
        raise ValueError("need at least one class")
    if len(confusions) != len(class_sizes):
        raise ValueError("confusions and class_sizes length mismatch")
    total = float(sum(class_sizes))
    if total <= 0:
        raise ValueError("all classes empty")
    return sum(n * f1(*c) for c, n in zip(confusions, class_sizes)) / total


@dataclass(frozen=True)
class EarlyCurve:
    """F1 values over the early-prediction grid plus the derived area."""

    taus: tuple
    f1_values: tuple

    def __post_init__(self):
        if len(self.taus) != len(self.f1_values):
            raise ValueError("taus and f1_values length mismatch")

    @property
    def auc(self):
        return auc(self)


def auc(curve):
    """Left-Riemann area of an F1(tau) curve over the standard grid, step 0.1."""
    taus = np.asarray(curve.taus, dtype=float)
    if taus.shape != (len(TAU_GRID),) or not np.allclose(taus, TAU_GRID, atol=1e-9):
        raise ValueError(f"curve must cover the tau grid {TAU_GRID}")
    return float(np.sum(TAU_STEP * np.asarray(curve.f1_values, dtype=float)))


def median_low(values):
    """Median taking the lower of the two middles for even-length input."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empty input")
    return float(v[(v.size - 1) // 2])


def mad(values):
    """Median absolute deviation about the median (lower-middle convention)."""
    v = np.asarray(values, dtype=float)
    center = median_low(v)
    return median_low(np.abs(v - center))


def format_median_mad(values, digits=3):
    """Render values as 'median +/- MAD', e.g. '0.932 ± 0.010'."""
    return f"{median_low(values):.{digits}f} ± {mad(values):.{digits}f}"


def cohen_kappa(labels_a, labels_b):
    """Cohen's kappa agreement between two equal-length label vectors."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError("label vectors must be 1-D and equal length")
    if a.size == 0:
        raise ValueError("empty label vectors")
    p_obs = float(np.mean(a == b))
    labels = np.unique(np.concatenate([a, b]))
    p_exp = float(sum(np.mean(a == lab) * np.mean(b == lab) for lab in labels))
    if p_exp == 1.0:
        # both raters constant on the same label, so observed agreement is 1
        return 1.0
    return (p_obs - p_exp) / (1.0 - p_exp)
