"""Detection calls: is a transcript present on the array?

Two procedures are provided:

* :func:`mas5_detect`, the GeneChip default: a one-sided signed-rank test
  of ``R = (PM - MM) / (PM + MM)`` against a small threshold ``tau``;
* :func:`model_detect`, a test of ``E[S] = 0`` from standardised log
  residuals around the predicted background, pooling replicate arrays
  through an effective sample size that accounts for the cross-array
  correlation of the background noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .background import FLOOR
from .core import normal_sf, wilcoxon_signed_rank_p
from .errors import DataError, InsufficientDataError

DEFAULT_TAU = 0.015
DEFAULT_THRESHOLDS = (0.4, 0.6)
VARIANTS = ("mas5", "model_pm_mm", "model_half_price")


@dataclass(frozen=True)
class DetectionResult:
    gene_id: str
    p_value: float
    call: str
    variant: str
    statistic: float
    condition: object = None


def call_from_p(p, thresholds=DEFAULT_THRESHOLDS):
    """``P`` below the lower threshold, ``A`` above the upper, ``M`` otherwise."""
    lo, hi = thresholds
    if p < lo:
        return "P"
    if p > hi:
        return "A"
    return "M"


def mas5_detect(pm, mm, tau=DEFAULT_TAU, gene_id="", thresholds=DEFAULT_THRESHOLDS):
    """Signed-rank detection call on one array.

    Probes with ``PM + MM = 0`` are dropped. The statistic reported is the
    median discrimination score ``R``.
    """
    pm = np.asarray(pm, dtype=float).ravel()
    mm = np.asarray(mm, dtype=float).ravel()
    if pm.shape != mm.shape:
        raise ValueError("PM and MM must have the same number of probes")
    total = pm + mm
    ok = total > 0
    if not ok.any():
        raise DataError(f"no valid probes for gene {gene_id!r}")
    r = (pm[ok] - mm[ok]) / total[ok]
    p = wilcoxon_signed_rank_p(r, tau)
    return DetectionResult(gene_id, p, call_from_p(p, thresholds), "mas5", float(np.median(r)))


def effective_arrays(n_arrays, rho):
    """``I / (1 + (I - 1) rho)``: independent-array equivalent of ``I`` correlated ones."""
    return n_arrays / (1.0 + (n_arrays - 1) * rho)


def model_detect(pm, mu_hat, sigma_N, rho_N, optical, gene_id="", variant="model_pm_mm",
                 thresholds=DEFAULT_THRESHOLDS, condition=None):
    """Model-based test of no specific signal for one gene.

    Parameters
    ----------
    pm : array_like, shape (J,) or (J, I)
        PM intensities of the gene's probes on the arrays of one condition.
    mu_hat : array_like, same shape as ``pm``
        Predicted log background of each probe.
    sigma_N, rho_N : float
        Background log-scale spread and cross-array correlation.
    optical : float or array_like, shape (I,)

    Returns
    -------
    DetectionResult
        ``statistic = mean(z) * sqrt(J * I_eff)`` with
        ``z = (log(max(PM - O, 0.5)) - mu_hat) / sigma_N``; the p-value is
        its upper normal tail.
    """
    if mu_hat is None:
        raise DataError("no background model: predicted background is required")
    pm = np.asarray(pm, dtype=float)
    mu_hat = np.asarray(mu_hat, dtype=float)
    if pm.ndim == 1:
        pm = pm[:, None]
    if mu_hat.ndim == 1:
        mu_hat = mu_hat[:, None]
    if pm.shape != mu_hat.shape:
        raise ValueError("pm and mu_hat shapes differ")
    J, I = pm.shape
    if J < 3:
        raise InsufficientDataError(f"insufficient probes: need at least 3, got {J}")
    if not sigma_N > 0:
        raise ValueError("sigma_N must be positive")
    z = (np.log(np.maximum(pm - np.asarray(optical, dtype=float), FLOOR)) - mu_hat) / sigma_N
    t = float(z.mean()) * math.sqrt(J * effective_arrays(I, rho_N))
    p = normal_sf(t)
    return DetectionResult(gene_id, p, call_from_p(p, thresholds), variant, t, condition)


# --------------------------------------------------------------------------
# Whole-dataset drivers
# --------------------------------------------------------------------------

def detect_dataset(dataset, fit=None, variant="model_pm_mm", tau=DEFAULT_TAU,
                   thresholds=DEFAULT_THRESHOLDS, per_array=False):
    """Detection results for every gene.

    Model variants pool the arrays of each condition into one call unless
    ``per_array`` is set; ``mas5`` always calls each array separately.
    Returns a list of :class:`DetectionResult` ordered by gene, then
    condition (or array).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown detection variant {variant!r}")
    pm = dataset.channel("PM")
    out = []
    if variant == "mas5":
        mm = dataset.channel("MM")
        for g, gid in enumerate(dataset.gene_ids):
            rows = dataset.gene_rows(g)
            for i, a in enumerate(dataset.arrays):
                res = mas5_detect(pm[rows, i], mm[rows, i], tau, gid, thresholds)
                out.append(DetectionResult(gid, res.p_value, res.call, "mas5", res.statistic,
                                           a.array_id))
        return out
    if fit is None:
        raise DataError("no background model: model detection needs a background fit")
    mu = fit.mu_pm
    if per_array:
        groups = [(a.array_id, np.array([i])) for i, a in enumerate(dataset.arrays)]
    else:
        groups = [(int(c), dataset.arrays_with_condition(c)) for c in np.unique(dataset.conditions)]
    for g, gid in enumerate(dataset.gene_ids):
        rows = dataset.gene_rows(g)
        for label, idx in groups:
            out.append(model_detect(pm[rows][:, idx], mu[rows][:, idx], fit.sigma_N, fit.rho_N,
                                    fit.optical[idx], gid, variant, thresholds, label))
    return out


def detection_scores(dataset, fit=None, variant="model_pm_mm", tau=DEFAULT_TAU):
    """Per-(gene, array) p-values as a ``(G, I)`` matrix (smaller = more present)."""
    res = detect_dataset(dataset, fit, variant, tau, per_array=True)
    return np.array([r.p_value for r in res]).reshape(dataset.n_genes, dataset.n_arrays)
