"""Plug-in estimates of the model's nuisance parameters.

The pipeline runs in three stages:

1. optical floor ``O_hat`` per array (minimum intensity);
2. background half: sequence affinities, a per-array loess curve of log
   background against affinity, and ``sigma_N``/``rho_N`` from loess
   residuals;
3. signal half: probe effects ``phi`` and ``sigma_S``/``rho_S`` from a
   stratum of highly expressed genes.

Array offsets ``nu`` need gene-level fold changes and are estimated by
:func:`estimate_nu` from GEE output (see :func:`probelevel.gee.fit_dataset`).

Two background modes exist. ``"pm_mm"`` trains affinities and the loess
curves on the mismatch channel. ``"half_price"`` uses PM probes only: the
affinity model is trained on low-intensity probes, each loess curve is fitted
through the lowest residual quartile and then moved to the background mode.
The half-price level and spread are only approximate when many genes are
weakly present; the probe-to-probe shape, which is what drives detection
rankings, is unaffected by the level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from scipy.stats import gaussian_kde

from .affinity import AffinityModel, fit_affinity, mismatch_sequence
from .core import SmoothFit, loess_fit
from .errors import DataError, InsufficientDataError

FLOOR = 0.5
RHO_MAX = 0.999
SIGMA_MIN = 1e-6
MIN_BACKGROUND_PROBES = 50
MAX_ANCHORS = 200


def estimate_optical(dataset, i):
    """Minimum intensity over all probes and channels of array ``i``."""
    values = np.asarray(dataset.intensities[:, i, :])
    if values.size == 0:
        raise DataError(f"empty array: array {i} has no intensities")
    return float(values.min())


def log_floor(y, optical):
    """``log(max(y - optical, 0.5))`` with broadcasting over arrays (last axis)."""
    return np.log(np.maximum(np.asarray(y, dtype=float) - optical, FLOOR))


def clamp_rho(total, within):
    """``(total - within) / total`` clamped to ``[0, 0.999]``."""
    if total <= 0:
        return 0.0
    return float(min(max((total - within) / total, 0.0), RHO_MAX))


@dataclass(frozen=True)
class BackgroundFit:
    """Fitted plug-ins for one dataset.

    ``mu_pm`` (probes x arrays) is the predicted log background of each PM
    probe, ``phi`` the predicted probe effect and ``nu`` the array offset.
    ``background_probes`` and ``signal_genes`` record the subsets used for
    the variance components.
    """

    mode: str
    optical: np.ndarray
    affinity: AffinityModel
    curves: tuple
    alpha_pm: np.ndarray
    sigma_N: float
    rho_N: float
    sigma_N0_sq: float
    background_probes: np.ndarray
    sigma_S: float = float("nan")
    rho_S: float = float("nan")
    sigma_S0_sq: float = float("nan")
    phi_slope: float = 0.0
    phi: np.ndarray = None
    signal_genes: np.ndarray = None
    nu: np.ndarray = None
    span: float = 0.4

    @property
    def n_arrays(self):
        return self.optical.size

    @cached_property
    def mu_pm(self):
        out = np.column_stack([c(self.alpha_pm) for c in self.curves])
        out.setflags(write=False)
        return out

    @property
    def has_signal(self):
        return self.phi is not None

    def to_dict(self):
        def arr(a):
            return None if a is None else np.asarray(a).tolist()
        return {
            "mode": self.mode,
            "optical": arr(self.optical),
            "affinity": self.affinity.to_dict(),
            "curves": [c.to_dict() for c in self.curves],
            "alpha_pm": arr(self.alpha_pm),
            "sigma_N": self.sigma_N, "rho_N": self.rho_N, "sigma_N0_sq": self.sigma_N0_sq,
            "background_probes": arr(self.background_probes),
            "sigma_S": self.sigma_S, "rho_S": self.rho_S, "sigma_S0_sq": self.sigma_S0_sq,
            "phi_slope": self.phi_slope,
            "phi": arr(self.phi),
            "signal_genes": arr(self.signal_genes),
            "nu": arr(self.nu),
            "span": self.span,
        }

    @classmethod
    def from_dict(cls, d):
        def arr(key, dtype=float):
            v = d.get(key)
            return None if v is None else np.asarray(v, dtype=dtype)
        return cls(
            mode=d["mode"], optical=arr("optical"),
            affinity=AffinityModel.from_dict(d["affinity"]),
            curves=tuple(SmoothFit.from_dict(c) for c in d["curves"]),
            alpha_pm=arr("alpha_pm"),
            sigma_N=float(d["sigma_N"]), rho_N=float(d["rho_N"]),
            sigma_N0_sq=float(d["sigma_N0_sq"]),
            background_probes=arr("background_probes", bool),
            sigma_S=_num(d.get("sigma_S")), rho_S=_num(d.get("rho_S")),
            sigma_S0_sq=_num(d.get("sigma_S0_sq")),
            phi_slope=float(d.get("phi_slope", 0.0)), phi=arr("phi"),
            signal_genes=arr("signal_genes", bool), nu=arr("nu"),
            span=float(d.get("span", 0.4)),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _num(v):
    return float("nan") if v is None else float(v)


# --------------------------------------------------------------------------
# Affinity training
# --------------------------------------------------------------------------

def train_affinity(dataset, optical=None, mode="pm_mm", df=5, n_refits=5):
    """Fit the sequence affinity model to background intensities.

    In ``"pm_mm"`` mode the response is the across-array mean of
    ``log(MM - O_hat)`` regressed on the mismatch sequences. In
    ``"half_price"`` mode the response is the PM analogue, fitted first on
    the lowest quartile of probes and then repeatedly on probes whose mean
    lies below the current fit.
    """
    if optical is None:
        optical = np.array([estimate_optical(dataset, i) for i in range(dataset.n_arrays)])
    if mode == "pm_mm":
        mm = dataset.channel("MM")
        resp = log_floor(mm, optical).mean(axis=1)
        return fit_affinity([mismatch_sequence(s) for s in dataset.sequences], resp, df)
    if mode != "half_price":
        raise ValueError(f"unknown background mode {mode!r}")
    pm = dataset.channel("PM")
    resp = log_floor(pm, optical).mean(axis=1)
    seqs = np.asarray(dataset.sequences, dtype=object)
    keep = resp <= np.quantile(resp, 0.25)
    model = fit_affinity(list(seqs[keep]), resp[keep], df)
    for _ in range(n_refits):
        below = resp < model.predict(dataset.sequences)
        if below.sum() < 100:
            break
        model = fit_affinity(list(seqs[below]), resp[below], df)
    return model


# --------------------------------------------------------------------------
# Background half
# --------------------------------------------------------------------------

def _high_stratum(log_pm, probe_gene, n_genes, fraction=0.1, minimum=20):
    """Top-``fraction`` genes by mean log PM (at least ``minimum`` when possible)."""
    gene_mean = np.bincount(probe_gene, weights=log_pm.mean(axis=1), minlength=n_genes)
    gene_mean /= np.bincount(probe_gene, minlength=n_genes)
    n_high = min(n_genes, max(minimum, math.ceil(fraction * n_genes)))
    order = np.argsort(-gene_mean, kind="mergesort")
    high = np.zeros(n_genes, dtype=bool)
    high[order[:n_high]] = True
    return high


def _half_price_curve(x, y, span, max_anchors=200):
    """Loess curve through the background mode of PM-only data.

    Present probes sit above the background, so a loess fit through the
    lowest quartile of residuals gives the shape of the background curve.
    Its level is then moved to the mode of the residual density (a
    Gaussian kernel estimate), and the background spread is estimated from
    the residuals below that mode as for a half-normal.
    """
    curve = loess_fit(x, y, span, max_anchors)
    e = y - curve(x)
    low = e < np.quantile(e, 0.25)
    curve = loess_fit(x[low], y[low], span, max_anchors)
    e = y - curve(x)
    grid = np.linspace(*np.quantile(e, [0.01, 0.9]), 400)
    mode = float(grid[np.argmax(gaussian_kde(e)(grid))])
    below = e < mode
    sigma2 = float(np.mean((e[below] - mode) ** 2))
    return SmoothFit(curve.anchors, curve.values + mode, span, 1), sigma2


def fit_background(dataset, affinity=None, mode="pm_mm", span=0.4, df=5,
                   signal_fraction=0.1):
    """Optical floor, background curves and background variance components.

    Parameters
    ----------
    dataset : ProbeLevelDataset
        Needs a ``PM`` channel, and ``MM`` in ``"pm_mm"`` mode.
    affinity : AffinityModel, optional
        Pre-trained affinity model; trained from the data when omitted.
    mode : {"pm_mm", "half_price"}
    span : float
        Loess span.

    Returns
    -------
    BackgroundFit
        With the signal half still unset (see :func:`fit_signal_params`).

    Raises
    ------
    InsufficientDataError
        Fewer than 50 PM probes fall in the background subset.
    """
    if mode not in ("pm_mm", "half_price"):
        raise ValueError(f"unknown background mode {mode!r}")
    pm = dataset.channel("PM")
    if mode == "pm_mm":
        mm = dataset.channel("MM")
    I = dataset.n_arrays
    optical = np.array([estimate_optical(dataset, i) for i in range(I)])
    if affinity is None:
        affinity = train_affinity(dataset, optical, mode, df)
    alpha_pm = affinity.predict(dataset.sequences)
    log_pm = log_floor(pm, optical)

    curves = []
    if mode == "pm_mm":
        alpha_mm = affinity.predict([mismatch_sequence(s) for s in dataset.sequences])
        log_mm = log_floor(mm, optical)
        sq = 0.0
        for i in range(I):
            c = loess_fit(alpha_mm, log_mm[:, i], span, MAX_ANCHORS)
            curves.append(c)
            sq += float(np.sum((log_mm[:, i] - c(alpha_mm)) ** 2))
        sigma2 = sq / log_mm.size
    else:
        s2 = []
        for i in range(I):
            c, v = _half_price_curve(alpha_pm, log_pm[:, i], span, MAX_ANCHORS)
            curves.append(c)
            s2.append(v)
        sigma2 = float(np.mean(s2))

    mu_pm = np.column_stack([c(alpha_pm) for c in curves])
    resid = log_pm - mu_pm
    high = _high_stratum(log_pm, dataset.probe_gene, dataset.n_genes, signal_fraction)
    background = (resid.mean(axis=1) < 0) & ~high[dataset.probe_gene]
    n_bg = int(background.sum())
    if n_bg < MIN_BACKGROUND_PROBES:
        raise InsufficientDataError(
            f"insufficient background probes: {n_bg} < {MIN_BACKGROUND_PROBES}")
    if I > 1:
        sigma0_sq = float(np.mean(np.var(resid[background], axis=1, ddof=1)))
    else:
        sigma0_sq = sigma2
    return BackgroundFit(
        mode=mode, optical=optical, affinity=affinity, curves=tuple(curves),
        alpha_pm=alpha_pm, sigma_N=max(math.sqrt(sigma2), SIGMA_MIN),
        rho_N=clamp_rho(sigma2, sigma0_sq), sigma_N0_sq=sigma0_sq,
        background_probes=background, nu=np.zeros(I), span=float(span))


# --------------------------------------------------------------------------
# Signal half
# --------------------------------------------------------------------------

def fit_signal_params(dataset, fit, signal_fraction=0.1):
    """Probe effects and signal variance components from highly expressed genes.

    On the stratum of top-decile genes ``log(PM - O_hat - E[N])`` is taken
    as the log specific signal. The probe-effect slope comes from regressing the
    within-(gene, array) centred log intensities on the centred PM
    affinities; ``phi`` is that slope times the affinity's deviation from
    its mean. ``sigma_S^2`` is the average across-probe variance within a
    (gene, array) cell after removing ``phi``, and the cross-array part is
    the average per-probe across-array variance of doubly centred residuals.
    """
    pm = dataset.channel("PM")
    I = dataset.n_arrays
    # remove the expected background too: an unremoved N damps log-scale
    # variation of S by a factor S / (S + N)
    gamma1 = np.exp(fit.mu_pm + 0.5 * fit.sigma_N ** 2)
    log_pm = log_floor(pm - gamma1, fit.optical)
    high = _high_stratum(log_pm, dataset.probe_gene, dataset.n_genes, signal_fraction)
    if not high.any():
        raise InsufficientDataError("no signal stratum: no highly expressed genes")
    rows = high[dataset.probe_gene]
    gid = dataset.probe_gene[rows]
    _, inv = np.unique(gid, return_inverse=True)
    n_cells = inv.max() + 1
    counts = np.bincount(inv, minlength=n_cells).astype(float)
    if np.any(counts < 2):
        raise InsufficientDataError("no signal stratum: genes need at least two probes")

    def centre(a):
        # subtract per-gene means along the probe axis
        if a.ndim == 1:
            return a - (np.bincount(inv, weights=a, minlength=n_cells) / counts)[inv]
        out = np.empty_like(a)
        for i in range(a.shape[1]):
            out[:, i] = centre(a[:, i])
        return out

    L = log_pm[rows]
    a = centre(fit.alpha_pm[rows])
    c = centre(L)
    saa = float(a @ a)
    slope = float((a @ c).sum() / (I * saa)) if saa > 0 else 0.0
    phi = slope * (fit.alpha_pm - fit.alpha_pm.mean())

    d = centre(L - phi[rows][:, None])
    per_cell = np.empty((n_cells, I))
    for i in range(I):
        per_cell[:, i] = np.bincount(inv, weights=d[:, i] ** 2, minlength=n_cells) / (counts - 1)
    sigma2 = float(per_cell.mean())
    if I > 1:
        J_cell = counts[inv]
        v = np.var(d, axis=1, ddof=1) / (1.0 - 1.0 / J_cell)
        sigma0_sq = float(np.mean(v))
    else:
        sigma0_sq = sigma2
    return replace(fit, sigma_S=max(math.sqrt(sigma2), SIGMA_MIN),
                   rho_S=clamp_rho(sigma2, sigma0_sq), sigma_S0_sq=sigma0_sq,
                   phi_slope=slope, phi=phi, signal_genes=high)


def fit_plugins(dataset, affinity=None, mode="pm_mm", span=0.4, df=5, signal_fraction=0.1):
    """Background and signal halves in one call (``nu`` left at zero)."""
    fit = fit_background(dataset, affinity, mode, span, df, signal_fraction)
    return fit_signal_params(dataset, fit, signal_fraction)


# --------------------------------------------------------------------------
# Array offsets
# --------------------------------------------------------------------------

def estimate_nu(beta1, se, conditions, min_genes=10):
    """Per-array offsets from gene-level fold changes fitted under ``nu = 0``.

    The inverse-variance weighted mean ``c`` of the usable ``beta1`` is
    taken as a systematic shift between the two groups; arrays get
    ``nu_i = c * (X_i - mean(X))`` so that the offsets average zero and the
    adjusted fold changes ``beta1 - c`` have weighted mean zero.

    Parameters
    ----------
    beta1, se : array_like
        Per-gene fold changes and standard errors; non-finite or
        non-positive SEs mark unusable genes.
    conditions : array_like of {0, 1}
        Group indicator ``X_i`` per array.

    Returns
    -------
    ndarray
        ``nu`` per array.
    """
    beta1 = np.asarray(beta1, dtype=float)
    se = np.asarray(se, dtype=float)
    x = np.asarray(conditions, dtype=float)
    ok = np.isfinite(beta1) & np.isfinite(se) & (se > 0)
    if ok.sum() == 0:
        raise InsufficientDataError("no usable genes: every standard error is non-finite")
    if ok.sum() < min_genes:
        raise InsufficientDataError(
            f"no usable genes: need at least {min_genes} converged genes, got {int(ok.sum())}")
    w = 1.0 / se[ok] ** 2
    c = float(np.sum(w * beta1[ok]) / np.sum(w))
    return c * (x - x.mean())
