"""Probe-level data containers and the moment calculus of the model.

Observed intensity on probe ``p`` (belonging to gene ``g``), array ``i`` and
channel ``h`` is modelled as

    Y = O_i + exp(mu + xi) + exp(nu_i + theta_gih + phi_p + eps)

with ``xi`` and ``eps`` jointly normal across arrays, exchangeable
correlation ``rho_N`` / ``rho_S``. ``theta = -inf`` means no specific
binding (absent transcript, or a mismatch channel).

Probes are stored flat: ``P`` rows grouped contiguously by gene.
Everything is on the natural-log scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ChannelMissingError, InvalidCorrelationError


@dataclass(frozen=True)
class ArrayMeta:
    array_id: str
    condition: int = 0


@dataclass(frozen=True)
class ProbeSet:
    gene_id: str
    sequences: tuple


@dataclass
class ProbeLevelDataset:
    """Intensities indexed by (probe, array, channel).

    Attributes
    ----------
    gene_ids : list of str
    probe_gene : ndarray of int, shape (P,)
        Gene index of each probe; nondecreasing.
    sequences : list of str
        Probe sequence of each row (the PM sequence on GeneChip data).
    arrays : list of ArrayMeta
    channels : tuple of str
    intensities : ndarray, shape (P, I, H)
    """

    gene_ids: list
    probe_gene: np.ndarray
    sequences: list
    arrays: list
    channels: tuple
    intensities: np.ndarray
    _starts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.probe_gene = np.asarray(self.probe_gene, dtype=np.int64)
        self.intensities = np.asarray(self.intensities, dtype=float)
        self.channels = tuple(self.channels)
        P = self.probe_gene.size
        G = len(self.gene_ids)
        if self.intensities.shape != (P, len(self.arrays), len(self.channels)):
            raise ValueError(
                f"intensities shape {self.intensities.shape} does not match "
                f"(probes={P}, arrays={len(self.arrays)}, channels={len(self.channels)})")
        if len(self.sequences) != P:
            raise ValueError("one sequence per probe required")
        if P and (np.any(np.diff(self.probe_gene) < 0) or self.probe_gene[0] < 0
                  or self.probe_gene[-1] >= G):
            raise ValueError("probes must be grouped by gene in gene order")
        counts = np.bincount(self.probe_gene, minlength=G)
        if np.any(counts == 0):
            raise ValueError("every gene needs at least one probe")
        if not np.all(np.isfinite(self.intensities)) or np.any(self.intensities < 0):
            raise ValueError("intensities must be finite and nonnegative")
        self._starts = np.concatenate([[0], np.cumsum(counts)])

    @property
    def n_genes(self):
        return len(self.gene_ids)

    @property
    def n_arrays(self):
        return len(self.arrays)

    @property
    def n_probes(self):
        return self.probe_gene.size

    @property
    def conditions(self):
        return np.array([a.condition for a in self.arrays], dtype=np.int64)

    @property
    def array_ids(self):
        return [a.array_id for a in self.arrays]

    @property
    def probe_index(self):
        """Within-gene probe number ``j`` (0-based) of every row."""
        return np.arange(self.n_probes) - self._starts[self.probe_gene]

    @property
    def genes(self):
        return [ProbeSet(gid, tuple(self.sequences[self._starts[g]:self._starts[g + 1]]))
                for g, gid in enumerate(self.gene_ids)]

    def gene_rows(self, g):
        return slice(int(self._starts[g]), int(self._starts[g + 1]))

    def has_channel(self, name):
        return name in self.channels

    def channel_index(self, name):
        try:
            return self.channels.index(name)
        except ValueError:
            raise ChannelMissingError(
                f"channel missing: {name!r} not in {list(self.channels)}") from None

    def channel(self, name):
        """``(P, I)`` view of one channel."""
        return self.intensities[:, :, self.channel_index(name)]

    def arrays_with_condition(self, condition):
        return np.flatnonzero(self.conditions == condition)

    def select_arrays(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return ProbeLevelDataset(list(self.gene_ids), self.probe_gene.copy(),
                                 list(self.sequences), [self.arrays[i] for i in idx],
                                 self.channels, self.intensities[:, idx, :].copy())


def _check_rho(name, rho):
    if not (0.0 <= rho < 1.0):
        raise InvalidCorrelationError(f"invalid correlation: {name}={rho} not in [0, 1)")


@dataclass(frozen=True)
class ModelParams:
    """All parameters of the probe-level model for one dataset.

    ``mu`` has shape ``(P, I, H)``; ``theta`` has shape ``(G, I, H)`` with
    ``-inf`` marking no specific binding; ``phi`` is shared across arrays
    and channels, ``nu`` is per array.
    """

    optical: np.ndarray
    mu: np.ndarray
    sigma_N: float
    rho_N: float
    nu: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    sigma_S: float
    rho_S: float
    probe_gene: np.ndarray
    channels: tuple = ("PM",)

    def __post_init__(self):
        if self.sigma_N < 0 or self.sigma_S < 0:
            raise ValueError("standard deviations must be nonnegative")
        _check_rho("rho_N", self.rho_N)
        _check_rho("rho_S", self.rho_S)
        P, I, H = np.shape(self.mu)
        if np.shape(self.theta)[1:] != (I, H) or np.shape(self.phi) != (P,):
            raise ValueError("inconsistent parameter shapes")

    def probe(self, g, j):
        starts = np.searchsorted(self.probe_gene, np.arange(self.theta.shape[0] + 1))
        p = int(starts[g]) + int(j)
        if not starts[g] <= p < starts[g + 1]:
            raise IndexError(f"gene {g} has no probe {j}")
        return p

    def _h(self, h):
        return self.channels.index(h) if isinstance(h, str) else int(h)

    def gamma1(self):
        """``E[N]`` for every (probe, array, channel)."""
        return np.exp(self.mu + 0.5 * self.sigma_N ** 2)

    def gamma2(self):
        """``E[S]`` for every (probe, array, channel); zero where absent."""
        log_s = (self.theta[self.probe_gene] + self.nu[None, :, None]
                 + self.phi[:, None, None] + 0.5 * self.sigma_S ** 2)
        return np.exp(log_s)

    def expected(self):
        return self.optical[None, :, None] + self.gamma1() + self.gamma2()


def theta_from_betas(beta0, beta1, conditions):
    """``theta[g, i] = beta0[g] + beta1[g] * X_i`` for a two-group design."""
    x = np.asarray(conditions, dtype=float)
    return np.asarray(beta0, dtype=float)[:, None] + np.asarray(beta1, dtype=float)[:, None] * x


@dataclass(frozen=True)
class MomentPair:
    gamma1: float
    gamma2: float
    V: float
    W: float


def expected_intensity(params, g, i, j, h=0):
    """Mean intensity of probe ``j`` of gene ``g`` on array ``i``."""
    p = params.probe(g, j)
    h = params._h(h)
    gamma1 = np.exp(params.mu[p, i, h] + 0.5 * params.sigma_N ** 2)
    gamma2 = np.exp(params.nu[i] + params.theta[params.probe_gene[p], i, h]
                    + params.phi[p] + 0.5 * params.sigma_S ** 2)
    return float(params.optical[i] + gamma1 + gamma2)


def moment_pair(params, g, j, arrays, h=0):
    """Mean components and (co)variances for one probe across two arrays.

    ``gamma1``/``gamma2`` refer to the first array of ``arrays``; ``V`` is the
    variance on that array and ``W`` the covariance between the two arrays.
    """
    i1, i2 = arrays
    p = params.probe(g, j)
    h = params._h(h)
    g1 = params.gamma1()[p, [i1, i2], h]
    g2 = params.gamma2()[p, [i1, i2], h]
    sN2, sS2 = params.sigma_N ** 2, params.sigma_S ** 2
    V = g1[0] ** 2 * np.expm1(sN2) + g2[0] ** 2 * np.expm1(sS2)
    if i1 == i2:
        W = V
    else:
        W = (g1[0] * g1[1] * np.expm1(params.rho_N * sN2)
             + g2[0] * g2[1] * np.expm1(params.rho_S * sS2))
    return MomentPair(float(g1[0]), float(g2[0]), float(V), float(W))


def intensity_covariance(params, g, j, arrays, h=0):
    """Covariance of ``Y`` for probe ``j`` of gene ``g`` between two arrays.

    Equal array indices give the variance. The optical term is treated as
    a constant.
    """
    return moment_pair(params, g, j, arrays, h).W


def _excess(sigma, rho):
    # e^{s^2} - e^{rho s^2}, computed without cancellation
    s2 = sigma ** 2
    return np.exp(rho * s2) * np.expm1((1.0 - rho) * s2)


def variance_profile(params, k, gamma2, gamma1=None, n_probes=None):
    """Variance of the estimated log fold change as a function of ``E[S]``.

    Returns

        (gamma1**2 * (e^{sN^2} - e^{rN sN^2}) + gamma2**2 * (e^{sS^2} - e^{rS sS^2})) / gamma2**2

    which tends to ``e^{sS^2} - e^{rS sS^2}`` as ``gamma2`` grows and
    behaves like ``1 / gamma2**2`` when the specific signal is small.

    Parameters
    ----------
    params
        Anything exposing ``sigma_N, rho_N, sigma_S, rho_S`` (``ModelParams``
        or a fitted ``BackgroundFit``).
    k : int
        Replicates per group.
    gamma2 : array_like
        Grid of expected specific intensities (> 0; ``inf`` allowed).
    gamma1 : float, optional
        Expected nonspecific intensity. Defaults to the mean of
        ``params.gamma1()`` over the first channel.
    n_probes : int, optional
        If given, return the absolute asymptotic variance of the log fold
        change for a ``k``-vs-``k`` comparison with that many identical
        probes, ``2 * profile / (k * n_probes)``.
    """
    gamma2 = np.asarray(gamma2, dtype=float)
    if np.any(gamma2 <= 0):
        raise ValueError("gamma2 must be positive")
    if gamma1 is None:
        gamma1 = float(np.mean(params.gamma1()[..., 0]))
    a = gamma1 ** 2 * _excess(params.sigma_N, params.rho_N)
    b = _excess(params.sigma_S, params.rho_S)
    with np.errstate(invalid="ignore"):
        out = a / gamma2 ** 2 + b
    if n_probes is not None:
        out = 2.0 * out / (k * n_probes)
    return float(out) if out.ndim == 0 else out
