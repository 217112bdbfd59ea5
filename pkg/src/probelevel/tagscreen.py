"""Two-colour deletion-tag screens.

Each gene is represented by two tags measured on one array in an
experimental channel ``R`` and a control channel ``G``. Mutants that did
not survive leave only nonspecific signal, so on the log scale every
channel is a two-component mixture of "dead" and "alive" tags.

* :func:`fit_mixture` fits that mixture per channel by EM;
* :func:`dead_alive_llr` compares "different components in R and G"
  against "same component" for one tag pair;
* :func:`log_ratio_mle` estimates the change in representation of tags
  alive in both channels;
* :func:`naive_log_ratio` is the usual local-background-subtracted,
  median-normalised log ratio, kept as a baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .background import FLOOR
from .errors import DataError, DegenerateMixtureError, NotApplicableError

MIN_TAGS = 200
LOGLIK_TOL = 1e-8
MAX_EM_ITER = 500
MIN_VARIANCE = 1e-6
CLASSES = ("dead_alive", "alive_dead", "same")
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ChannelMixture:
    """Dead/alive normal mixture on one channel's log intensities.

    ``pi_alive`` is the alive weight. ``degenerate`` flags fits whose
    components are not usefully separated (weight outside [0.01, 0.99] or
    Ashman's D below 2).
    """

    dead_mean: float
    dead_var: float
    alive_mean: float
    alive_var: float
    pi_alive: float
    loglik: float
    iterations: int
    trace: tuple = ()
    degenerate: bool = False

    @property
    def dead_level(self):
        """Expected ``Y - O_hat`` of a dead tag, ``exp(m + v/2)``."""
        return math.exp(self.dead_mean + 0.5 * self.dead_var)

    @property
    def separation(self):
        """Ashman's D: mean gap over the pooled component spread."""
        return abs(self.alive_mean - self.dead_mean) / math.sqrt(
            0.5 * (self.dead_var + self.alive_var))

    def log_density(self, x, component):
        m, v = ((self.dead_mean, self.dead_var) if component == "dead"
                else (self.alive_mean, self.alive_var))
        x = np.asarray(x, dtype=float)
        return -0.5 * (_LOG_2PI + math.log(v) + (x - m) ** 2 / v)

    def to_dict(self):
        return {"dead_mean": self.dead_mean, "dead_var": self.dead_var,
                "alive_mean": self.alive_mean, "alive_var": self.alive_var,
                "pi_alive": self.pi_alive, "loglik": self.loglik,
                "iterations": self.iterations, "degenerate": self.degenerate}


@dataclass(frozen=True)
class MixtureFit:
    R: ChannelMixture
    G: ChannelMixture

    def channel(self, h):
        return {"R": self.R, "G": self.G}[h]

    def swapped(self):
        return MixtureFit(self.G, self.R)


def _loglik(x, pi, m, v):
    ld = np.log(1.0 - pi) - 0.5 * (_LOG_2PI + np.log(v[0]) + (x - m[0]) ** 2 / v[0])
    la = np.log(pi) - 0.5 * (_LOG_2PI + np.log(v[1]) + (x - m[1]) ** 2 / v[1])
    top = np.maximum(ld, la)
    tot = top + np.log(np.exp(ld - top) + np.exp(la - top))
    return float(tot.sum()), np.exp(la - tot)


def _em(x, lo_q, hi_q):
    m = np.quantile(x, [lo_q, hi_q]).astype(float)
    v = np.full(2, np.var(x) / 4.0)
    if v[0] <= 0:
        raise DegenerateMixtureError("degenerate mixture: input has zero variance")
    pi = 0.5
    ll, resp = _loglik(x, pi, m, v)
    trace = [ll]
    it = 0
    for it in range(1, MAX_EM_ITER + 1):
        w_a = resp
        w_d = 1.0 - resp
        n_a, n_d = w_a.sum(), w_d.sum()
        if n_a <= 0 or n_d <= 0:
            return None
        pi = n_a / x.size
        m = np.array([w_d @ x / n_d, w_a @ x / n_a])
        v = np.array([w_d @ (x - m[0]) ** 2 / n_d, w_a @ (x - m[1]) ** 2 / n_a])
        if np.any(v < MIN_VARIANCE) or not 0.0 < pi < 1.0:
            return None
        new, resp = _loglik(x, pi, m, v)
        trace.append(new)
        if new - ll < LOGLIK_TOL:
            ll = new
            break
        ll = new
    return pi, m, v, ll, it, tuple(trace)


def fit_mixture(values):
    """EM fit of a two-component normal mixture to one channel.

    Parameters
    ----------
    values : array_like
        At least 200 log intensities, ``log(max(Y - O_hat, 0.5))``.

    Returns
    -------
    ChannelMixture
        Components ordered so that the alive mean exceeds the dead mean.
        ``trace`` holds the log-likelihood after initialisation and after
        every EM step.

    Raises
    ------
    DegenerateMixtureError
        A component variance collapses both from the 25th/75th percentile
        start and from the 10th/90th percentile restart.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size < MIN_TAGS:
        raise DataError(f"need at least {MIN_TAGS} tags per channel, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DataError("log intensities must be finite")
    out = _em(x, 0.25, 0.75)
    if out is None:
        out = _em(x, 0.10, 0.90)
    if out is None:
        raise DegenerateMixtureError("degenerate mixture: a component collapsed")
    pi, m, v, ll, it, trace = out
    if m[1] < m[0]:
        m, v, pi = m[::-1], v[::-1], 1.0 - pi
    fit = ChannelMixture(float(m[0]), float(v[0]), float(m[1]), float(v[1]), float(pi),
                         float(ll), int(it), trace)
    degenerate = not (0.01 <= fit.pi_alive <= 0.99) or fit.separation < 2.0
    return ChannelMixture(**{**fit.__dict__, "degenerate": degenerate})


# --------------------------------------------------------------------------
# Per-tag statistics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TagResult:
    gene_id: str
    llr: float
    classification: str
    both_alive: bool
    log_ratio: float = float("nan")


def _pairs(x_r, x_g):
    x_r = np.atleast_1d(np.asarray(x_r, dtype=float))
    x_g = np.atleast_1d(np.asarray(x_g, dtype=float))
    if x_r.shape != x_g.shape:
        raise ValueError("R and G need one value per probe each")
    ok = np.isfinite(x_r) & np.isfinite(x_g)
    if not ok.any():
        raise DataError("no data for tag")
    return x_r[ok], x_g[ok]


def component_logliks(x_r, x_g, fit):
    """Log-likelihoods of the four (R, G) component assignments.

    Returns a dict keyed ``dead_alive, alive_dead, dead_dead, alive_alive``
    (first word: R channel).
    """
    x_r, x_g = _pairs(x_r, x_g)
    dR = fit.R.log_density(x_r, "dead").sum()
    aR = fit.R.log_density(x_r, "alive").sum()
    dG = fit.G.log_density(x_g, "dead").sum()
    aG = fit.G.log_density(x_g, "alive").sum()
    return {"dead_alive": dR + aG, "alive_dead": aR + dG,
            "dead_dead": dR + dG, "alive_alive": aR + aG}


def dead_alive_llr(x_r, x_g, fit, threshold=0.0, gene_id=""):
    """Likelihood ratio of "different components" against "same component".

    Both hypotheses are profiled over the component assignment: the
    better of dead/alive and alive/dead against the better of dead/dead
    and alive/alive, with per-probe densities multiplied across the tag's
    probes.

    Parameters
    ----------
    x_r, x_g : array_like
        Log intensities of the tag's probes in each channel.
    fit : MixtureFit
    threshold : float
        Tags with ``llr`` above it are classified by the better of the two
        cross assignments; the others are ``"same"``.
    """
    ll = component_logliks(x_r, x_g, fit)
    diff = max(ll["dead_alive"], ll["alive_dead"])
    same = max(ll["dead_dead"], ll["alive_alive"])
    llr = float(diff - same)
    if llr > threshold:
        cls = "dead_alive" if ll["dead_alive"] >= ll["alive_dead"] else "alive_dead"
    else:
        cls = "same"
    return TagResult(gene_id, llr, cls, bool(ll["alive_alive"] >= ll["dead_dead"]))


def log_ratio_mle(x_r, x_g, fit, result=None, weights=None, remove_background=True):
    """``log(theta_G) - log(theta_R)`` for a tag alive in both channels.

    Each probe contributes ``(x_G - m_G) - (x_R - m_R)`` with ``m_h`` the
    alive mean of channel ``h``, which absorbs a global channel bias; the
    probes are averaged with optional precision ``weights``. With
    ``remove_background`` the expected dead-tag intensity of each channel
    is first subtracted on the linear scale, ``x <- log(max(e^x - N_h, 0.5))``,
    so that weak tags are not pulled towards a ratio of one.

    Raises
    ------
    NotApplicableError
        The tag is not classified as alive in both channels.
    """
    if result is None:
        result = dead_alive_llr(x_r, x_g, fit)
    if result.classification != "same" or not result.both_alive:
        raise NotApplicableError(
            f"not applicable: tag {result.gene_id!r} is not alive in both channels")
    x_r, x_g = _pairs(x_r, x_g)
    if remove_background:
        x_r = np.log(np.maximum(np.exp(x_r) - fit.R.dead_level, FLOOR))
        x_g = np.log(np.maximum(np.exp(x_g) - fit.G.dead_level, FLOOR))
    d = (x_g - fit.G.alive_mean) - (x_r - fit.R.alive_mean)
    if weights is None:
        return float(d.mean())
    w = np.asarray(weights, dtype=float)
    return float(np.sum(w * d) / np.sum(w))


# --------------------------------------------------------------------------
# Whole arrays
# --------------------------------------------------------------------------

def _single_array(dataset):
    if dataset.n_arrays != 1:
        raise DataError(f"tag screens use exactly one array, got {dataset.n_arrays}")


def channel_log_intensities(dataset, h):
    """``log(max(Y - O_hat, 0.5))`` for channel ``h``, ``O_hat`` its minimum."""
    y = dataset.channel(h)[:, 0]
    return np.log(np.maximum(y - y.min(), FLOOR))


def fit_tag_mixture(dataset):
    _single_array(dataset)
    return MixtureFit(fit_mixture(channel_log_intensities(dataset, "R")),
                      fit_mixture(channel_log_intensities(dataset, "G")))


def screen_tags(dataset, threshold=0.0, fit=None):
    """Mixture fit plus per-gene llr, classification and (where defined) log ratio."""
    _single_array(dataset)
    if fit is None:
        fit = fit_tag_mixture(dataset)
    xr = channel_log_intensities(dataset, "R")
    xg = channel_log_intensities(dataset, "G")
    out = []
    for g, gid in enumerate(dataset.gene_ids):
        rows = dataset.gene_rows(g)
        res = dead_alive_llr(xr[rows], xg[rows], fit, threshold, gid)
        if res.classification == "same" and res.both_alive:
            res = TagResult(gid, res.llr, res.classification, True,
                            log_ratio_mle(xr[rows], xg[rows], fit, res))
        out.append(res)
    return fit, out


def naive_log_ratio(dataset):
    """Local-background-subtracted log ratio per gene, median-normalised.

    Uses channels ``R_bg`` and ``G_bg``; each probe gives
    ``log(max(G - G_bg, 0.5)) - log(max(R - R_bg, 0.5))``, the probes of a
    gene are averaged and the median over genes is subtracted.
    """
    _single_array(dataset)
    r = np.maximum(dataset.channel("R")[:, 0] - dataset.channel("R_bg")[:, 0], FLOOR)
    g = np.maximum(dataset.channel("G")[:, 0] - dataset.channel("G_bg")[:, 0], FLOOR)
    d = np.log(g) - np.log(r)
    per_gene = np.bincount(dataset.probe_gene, weights=d, minlength=dataset.n_genes)
    per_gene /= np.bincount(dataset.probe_gene, minlength=dataset.n_genes)
    return per_gene - np.median(per_gene)
