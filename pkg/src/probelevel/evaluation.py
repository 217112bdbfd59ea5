"""Evaluation helpers: ROC tables and MA-PA plot data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import normal_quantile
from .errors import DataError

LOG2E = 1.0 / np.log(2.0)


@dataclass(frozen=True)
class RocTable:
    """Cumulative (false positive, true positive) counts and the area under the curve.

    Point ``k`` counts genes whose score is at least the ``k``-th largest
    distinct score; the first point is ``(0, 0)``.
    """

    false_positives: np.ndarray
    true_positives: np.ndarray
    thresholds: np.ndarray
    n_negative: int
    n_positive: int
    auc: float

    @property
    def fpr(self):
        return self.false_positives / self.n_negative

    @property
    def tpr(self):
        return self.true_positives / self.n_positive


def roc(scores, truth):
    """ROC of ``scores`` (larger = more likely positive) against boolean ``truth``.

    Tied scores are stepped over together, so ties contribute a diagonal
    segment and half credit to the area.
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    if scores.shape != truth.shape or scores.ndim != 1:
        raise ValueError("scores and truth must be 1-d arrays of equal length")
    if np.isnan(scores).any():
        raise ValueError("scores must not be NaN")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("degenerate truth: need at least one positive and one negative")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    t = truth[order]
    # last index of each block of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.r_[0, np.cumsum(t)[ends]]
    fp = np.r_[0, np.cumsum(~t)[ends]]
    auc = float(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])) / (2.0 * n_pos * n_neg))
    return RocTable(fp, tp, s[ends], n_neg, n_pos, auc)


@dataclass(frozen=True)
class MaPaRow:
    gene_id: str
    average: float  # (beta1 + beta0) / 2, log2
    fold_change: float  # beta1, log2
    se: float  # log2
    lower: float
    upper: float
    detection_p: float  # nan when missing


def ma_pa_table(fits, detections=None, level=0.01):
    """Rows for an MA-PA plot.

    Parameters
    ----------
    fits : sequence of GeneFitResult
    detections : mapping gene_id -> p-value, or sequence of DetectionResult
        When several detection results share a gene, the smallest p-value
        is used. Genes without one get ``nan``.
    level : float
        Bounds are ``+-z(1 - level/2) * SE`` around zero.
    """
    if detections is None:
        det = {}
    elif isinstance(detections, dict):
        det = dict(detections)
    else:
        det = {}
        for r in detections:
            det[r.gene_id] = min(det.get(r.gene_id, np.inf), r.p_value)
    z = normal_quantile(1.0 - level / 2.0)
    rows = []
    for f in fits:
        se = f.se_beta1 * LOG2E
        rows.append(MaPaRow(
            f.gene_id,
            0.5 * (f.beta1 + f.beta0) * LOG2E,
            f.beta1 * LOG2E,
            se,
            -z * se,
            z * se,
            float(det.get(f.gene_id, np.nan)),
        ))
    return rows
