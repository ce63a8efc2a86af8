"""Segmentation/detection metrics and error retention curves.

A retention curve plots a quality metric against the fraction of predictions
retained, where the most uncertain predictions are removed first:

* voxel scale (DSC-RC): the most uncertain voxels inside the brain mask are
  replaced by the ground truth in chunks of ``ceil(tau * N)`` voxels;
* lesion scale (F1-RC): lesions are rejected one at a time; a rejected TP
  still counts as TP, a rejected FP is dropped, and the FN count never
  changes.

Curves are stored with fractions decreasing from 1 to 0. The area under a
curve is the trapezoidal integral over the fraction axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import RangeError, ValidationError
from .lesions import TP
from .volume import EnsembleSample, as_array, check_same_shape

DEFAULT_TAU = 2.5e-3
DEFAULT_GRID = 101


def trapezoid_auc(fractions, values):
    x = np.asarray(fractions, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    # fractions decrease, so the spacing x[i] - x[i + 1] is positive
    return float(np.sum((x[:-1] - x[1:]) * (y[:-1] + y[1:]) / 2.0))


@dataclass
class RetentionCurve:
    fractions: np.ndarray
    values: np.ndarray
    auc: float = field(default=None)

    def __post_init__(self):
        self.fractions = np.asarray(self.fractions, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.fractions.shape != self.values.shape or self.fractions.ndim != 1:
            raise ValidationError("fractions and values must be 1D arrays of equal length")
        check_grid(self.fractions)
        if self.auc is None:
            self.auc = trapezoid_auc(self.fractions, self.values)

    def __len__(self):
        return self.fractions.size


def check_grid(grid):
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 1 or g.size < 2:
        raise ValidationError("a retention grid needs at least two nodes")
    if g[0] != 1.0 or g[-1] != 0.0:
        raise ValidationError(f"retention grid must run from 1.0 to 0.0, got {g[0]}..{g[-1]}")
    if not np.all(np.diff(g) < 0):
        raise ValidationError("retention grid must be strictly decreasing")
    return g


def uniform_grid(n=DEFAULT_GRID):
    """``n`` evenly spaced fractions from 1.0 down to 0.0."""
    if n < 2:
        raise ValidationError("grid needs at least 2 nodes")
    g = np.linspace(1.0, 0.0, int(n))
    g[0], g[-1] = 1.0, 0.0
    return g


def _confusion(pred, truth):
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return tp, fp, fn


def _f1_from_counts(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2.0 * tp / denom


def dsc(prediction, truth):
    """Dice similarity coefficient; 1.0 when both masks are empty."""
    check_same_shape(prediction, truth, context="dsc")
    pred = as_array(prediction).astype(bool)
    gt = as_array(truth).astype(bool)
    return _f1_from_counts(*_confusion(pred, gt))


def lesion_f1(classification):
    """``2TP / (2TP + FN + FP)`` at the lesion level; 1.0 when all counts are zero."""
    return _f1_from_counts(classification.tp, classification.fp, classification.fn)


def n_tau_steps(tau):
    # tolerance keeps ceil(1 / 0.0025) at 400 despite binary rounding
    return max(1, math.ceil(1.0 / tau - 1e-9))


def tau_fractions(tau):
    steps = n_tau_steps(tau)
    fr = np.maximum(0.0, 1.0 - np.arange(steps + 1) * tau)
    fr[0], fr[-1] = 1.0, 0.0
    return fr


def dsc_retention_curve(sample, prediction, u_map, tau=DEFAULT_TAU):
    """DSC retention curve of one scan.

    Parameters
    ----------
    sample : EnsembleSample
        Supplies the ground truth and the brain mask restricting the ranking
        and the DSC.
    prediction : Volume3D or array
        Binary ensemble prediction.
    u_map : Volume3D or array
        Voxel uncertainty; larger means more uncertain.
    tau : float
        Fraction of in-mask voxels replaced per step.

    Notes
    -----
    Voxels are ranked by descending uncertainty with ties broken by ascending
    flat index. Point ``i`` has ``i * ceil(tau * N)`` voxels corrected and
    sits at fraction ``max(0, 1 - i * tau)``; the last point is fraction 0.
    """
    if not isinstance(sample, EnsembleSample):
        raise ValidationError("dsc_retention_curve expects an EnsembleSample")
    if not 0.0 < tau <= 1.0:
        raise RangeError(f"tau must lie in (0, 1], got {tau}")
    check_same_shape(sample.ground_truth, prediction, u_map, context=f"patient {sample.patient_id}")
    mask = sample.brain_mask.flat.astype(bool)
    idx = np.flatnonzero(mask)
    pred = as_array(prediction).reshape(-1)[idx].astype(bool)
    gt = sample.ground_truth.flat[idx].astype(bool)
    u = as_array(u_map).reshape(-1)[idx]

    fractions = tau_fractions(tau)
    steps = fractions.size - 1
    n = idx.size
    if n == 0:
        return RetentionCurve(fractions, np.ones_like(fractions))
    tp, fp, fn = _confusion(pred, gt)
    # lexsort: last key is primary -> descending u, then ascending index
    order = np.lexsort((np.arange(n), -u.astype(np.float64)))
    fixed_fp = np.concatenate([[0], np.cumsum(pred[order] & ~gt[order])])
    fixed_fn = np.concatenate([[0], np.cumsum(~pred[order] & gt[order])])
    step = math.ceil(tau * n)
    k = np.minimum(np.arange(steps + 1) * step, n)
    tp_i = tp + fixed_fn[k]
    denom = 2 * tp_i + (fp - fixed_fp[k]) + (fn - fixed_fn[k])
    values = np.where(denom == 0, 1.0, 2.0 * tp_i / np.maximum(denom, 1))
    return RetentionCurve(fractions, values)


def f1_retention_curve(classification, scores):
    """Lesion F1 retention curve from per-lesion uncertainty scores.

    ``scores`` must align with ``classification.status``. Lesions are
    rejected by descending score, ties by ascending label.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = len(classification.status)
    if scores.size != n:
        raise ValidationError(f"got {scores.size} scores for {n} predicted lesions")
    tp, fp, fn = classification.tp, classification.fp, classification.fn
    if n == 0:
        v = _f1_from_counts(tp, fp, fn)
        return RetentionCurve([1.0, 0.0], [v, v])
    labels = np.asarray(classification.labels)
    order = np.lexsort((labels, -scores))
    is_fp = np.array([s != TP for s in classification.status])[order]
    fp_left = fp - np.concatenate([[0], np.cumsum(is_fp)])
    values = np.array([_f1_from_counts(tp, int(f), fn) for f in fp_left])
    fractions = (n - np.arange(n + 1)) / n
    return RetentionCurve(fractions, values)


def interpolate_curve(curve, grid):
    """Piecewise-linear resampling of ``curve`` onto ``grid`` (1.0 down to 0.0)."""
    g = check_grid(grid)
    # np.interp wants increasing abscissae
    vals = np.interp(g[::-1], curve.fractions[::-1], curve.values[::-1])[::-1]
    vals[0], vals[-1] = curve.values[0], curve.values[-1]
    return RetentionCurve(g.copy(), vals)


@dataclass
class CurveBundle:
    """Per-patient curves on a shared grid, their node-wise mean and mean AUC."""

    curves: dict
    mean_curve: RetentionCurve
    mean_auc: float

    @property
    def aucs(self):
        return {pid: c.auc for pid, c in self.curves.items()}


def average_curves(curves, grid):
    """Interpolate each curve onto ``grid`` and average.

    ``curves`` is a list of curves or a ``{patient_id: curve}`` dict (order
    preserved). The mean AUC averages per-patient AUCs after interpolation.
    """
    if isinstance(curves, dict):
        items = list(curves.items())
    else:
        items = [(str(i), c) for i, c in enumerate(curves)]
    if not items:
        raise ValidationError("cannot average an empty list of curves")
    g = check_grid(grid)
    on_grid = {pid: interpolate_curve(c, g) for pid, c in items}
    mean_vals = np.mean(np.stack([c.values for c in on_grid.values()]), axis=0)
    mean_auc = float(np.mean([c.auc for c in on_grid.values()]))
    return CurveBundle(on_grid, RetentionCurve(g.copy(), mean_vals), mean_auc)
