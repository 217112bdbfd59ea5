"""Numeric kernels shared by the statistical modules.

Normal distribution helpers, an exact/asymptotic Wilcoxon signed-rank test,
a local-linear tricube smoother, a cubic B-spline position basis and a
weighted least-squares solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.interpolate import BSpline

from .errors import (
    DegenerateAbscissaeError,
    InsufficientDataError,
    PositionOutOfBoundsError,
    SingularDesignError,
)

EXACT_WILCOXON_MAX_N = 25
PROBE_LENGTH = 25


def normal_cdf(x):
    """Standard normal distribution function.

    Accepts scalars or arrays; a scalar input returns a Python float.
    """
    out = special.ndtr(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def normal_sf(x):
    """Upper tail ``1 - normal_cdf(x)`` without cancellation."""
    out = special.ndtr(-np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def normal_quantile(p):
    """Inverse of :func:`normal_cdf`."""
    out = special.ndtri(np.asarray(p, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# Wilcoxon signed-rank
# --------------------------------------------------------------------------

def _signed_rank_statistic(values, tau):
    d = np.asarray(values, dtype=float) - tau
    d = d[d != 0.0]
    if d.size == 0:
        return d, np.empty(0), 0.0
    # mid-ranks of |d|, doubled so that ties stay integral
    ranks2 = np.rint(2.0 * _midranks(np.abs(d))).astype(np.int64)
    w2 = int(ranks2[d > 0].sum())
    return d, ranks2, w2


def _midranks(a):
    order = np.argsort(a, kind="mergesort")
    sa = a[order]
    ranks = np.empty(a.size, dtype=float)
    i = 0
    n = a.size
    while i < n:
        j = i
        while j + 1 < n and sa[j + 1] == sa[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


@lru_cache(maxsize=256)
def _signed_rank_counts(ranks2):
    """Number of sign assignments reaching each value of the doubled W+."""
    total = sum(ranks2)
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in ranks2:
        shifted = counts.copy()
        shifted[r:] += counts[:-r]
        counts = shifted
    counts.setflags(write=False)
    return counts


def wilcoxon_signed_rank_p(values, tau=0.0):
    """One-sided signed-rank p-value for ``median(values) > tau``.

    Differences exactly equal to ``tau`` are dropped and tied absolute
    differences receive mid-ranks. For up to 25 non-zero differences the
    null distribution is enumerated exactly (conditional on the tie
    pattern); beyond that a continuity-corrected normal approximation with
    the usual tie correction is used.

    Parameters
    ----------
    values : array_like
        At least three finite observations.
    tau : float
        Hypothesised median.

    Returns
    -------
    float
        ``P(W+ >= observed)`` under the null. Returns 1.0 when every
        difference is zero.
    """
    values = np.asarray(values, dtype=float)
    if values.size < 3:
        raise InsufficientDataError(
            f"insufficient probes: need at least 3 values, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise InsufficientDataError("values must be finite")
    d, ranks2, w2 = _signed_rank_statistic(values, tau)
    n = d.size
    if n == 0:
        return 1.0
    if n <= EXACT_WILCOXON_MAX_N:
        counts = _signed_rank_counts(tuple(int(r) for r in np.sort(ranks2)))
        return float(counts[w2:].sum()) / float(2 ** n)
    w = 0.5 * w2
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks2, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
    z = (w - mean - 0.5) / math.sqrt(var)
    return normal_sf(z)


# --------------------------------------------------------------------------
# Loess
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SmoothFit:
    """Local-linear fit stored at anchor abscissae.

    Evaluation interpolates linearly between anchors and holds the end
    values constant outside the anchor range.
    """

    anchors: np.ndarray
    values: np.ndarray
    span: float
    degree: int = 1

    def __post_init__(self):
        a = np.asarray(self.anchors, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if a.ndim != 1 or a.shape != v.shape or a.size < 1:
            raise ValueError("anchors and values must be matching 1-d arrays")
        if np.any(np.diff(a) <= 0):
            raise ValueError("anchors must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("fitted values must be finite")
        a.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "anchors", a)
        object.__setattr__(self, "values", v)

    def __call__(self, x):
        out = np.interp(np.asarray(x, dtype=float), self.anchors, self.values)
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self):
        return {"anchors": self.anchors.tolist(), "values": self.values.tolist(),
                "span": self.span, "degree": self.degree}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["anchors"], dtype=float),
                   np.asarray(d["values"], dtype=float),
                   float(d["span"]), int(d.get("degree", 1)))


def tricube(u):
    u = np.clip(np.abs(u), 0.0, 1.0)
    return (1.0 - u ** 3) ** 3


def _local_linear(xs, ys, a, q):
    n = xs.size
    k = int(np.searchsorted(xs, a))
    lo, hi = max(0, k - q), min(n, k + q)
    xw, yw = xs[lo:hi], ys[lo:hi]
    d = np.abs(xw - a)
    h = np.partition(d, q - 1)[q - 1]
    if h <= 0.0:
        return float(yw[d == 0.0].mean())
    keep = d < h
    xw, yw = xw[keep], yw[keep]
    w = tricube(d[keep] / h)
    sw = w.sum()
    xm = np.dot(w, xw) / sw
    ym = np.dot(w, yw) / sw
    dx = xw - xm
    sxx = np.dot(w, dx * dx)
    if sxx <= 1e-13 * sw * h * h:
        return float(ym)
    slope = np.dot(w, dx * (yw - ym)) / sxx
    return float(ym + slope * (a - xm))


def loess_fit(x, y, span=0.4, max_anchors=1000):
    """Local-linear loess with tricube weights.

    For each anchor ``a`` the bandwidth is the distance to the
    ``q = ceil(span * n)``-th nearest observation; observations closer than
    that receive tricube weights and a weighted straight line is evaluated
    at ``a``. Anchors are the distinct ``x`` values, or an even grid over
    the data range when there are more than ``max_anchors`` of them.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    if x.size < 10:
        raise InsufficientDataError(f"loess needs at least 10 points, got {x.size}")
    if not (0.0 < span <= 1.0):
        raise ValueError(f"span must lie in (0, 1], got {span}")
    if np.ptp(x) == 0.0:
        raise DegenerateAbscissaeError("degenerate abscissae: all x values are equal")
    order = np.argsort(x, kind="mergesort")
    xs, ys = x[order], y[order]
    n = xs.size
    q = min(n, max(2, int(math.ceil(span * n))))
    anchors = np.unique(xs)
    if anchors.size > max_anchors:
        anchors = np.linspace(xs[0], xs[-1], max_anchors)
    values = np.array([_local_linear(xs, ys, a, q) for a in anchors])
    return SmoothFit(anchors, values, float(span), 1)


# --------------------------------------------------------------------------
# Splines
# --------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _full_spline_basis(df, length):
    n_interior = df - 3
    interior = np.linspace(1.0, float(length), n_interior + 2)[1:-1]
    knots = np.concatenate([[1.0] * 4, interior, [float(length)] * 4])
    pos = np.arange(1, length + 1, dtype=float)
    full = BSpline.design_matrix(pos, knots, 3).toarray()
    full.setflags(write=False)
    return full


def spline_knots(df, length=PROBE_LENGTH):
    """Knot vector of the cubic basis (boundary knots repeated four times)."""
    interior = np.linspace(1.0, float(length), df - 3 + 2)[1:-1]
    return np.concatenate([[1.0] * 4, interior, [float(length)] * 4])


def spline_basis_matrix(df=5, length=PROBE_LENGTH):
    """Cubic B-spline basis over positions ``1..length``, shape ``(length, df)``.

    The full basis has ``df + 1`` functions on equally spaced interior knots;
    the first is dropped so that an intercept can be fitted separately.
    """
    if df < 3:
        raise ValueError(f"df must be at least 3, got {df}")
    return _full_spline_basis(int(df), int(length))[:, 1:]


def spline_basis(position, df=5, length=PROBE_LENGTH):
    """Basis values at a single probe position (1-based)."""
    if int(position) != position or not 1 <= position <= length:
        raise PositionOutOfBoundsError(
            f"position out of bounds: {position} not in [1, {length}]")
    return spline_basis_matrix(df, length)[int(position) - 1].copy()


# --------------------------------------------------------------------------
# Least squares
# --------------------------------------------------------------------------

def weighted_least_squares(design, response, weights=None):
    """Minimise ``sum(w * (y - X b)**2)`` over ``b``.

    Raises
    ------
    SingularDesignError
        If the design restricted to positively weighted rows is not of full
        column rank.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError("design rows, response and weights must have equal length")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    pos = w > 0
    sw = np.sqrt(w[pos])
    Xw = X[pos] * sw[:, None]
    yw = y[pos] * sw
    rank = np.linalg.matrix_rank(Xw) if Xw.size else 0
    if rank < p:
        raise SingularDesignError(
            f"singular design: rank {rank} with {p} columns "
            f"({p - rank} column(s) linearly dependent)")
    q, r = np.linalg.qr(Xw)
    return np.linalg.solve(r, q.T @ yw)
