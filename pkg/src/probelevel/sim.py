"""Synthetic probe-level data with known ground truth.

Two generators:

* :func:`generate` draws GeneChip-style PM/MM data for a spike-in design
  (spiked genes at known concentrations on top of a background transcriptome).
* :func:`generate_tags` draws two-colour yeast tag data (one array, two tags
  per gene, R/G channels plus local background readings).

All randomness comes from one ``numpy.random.Generator`` seeded by the
caller, with a fixed draw order, so a seed reproduces a dataset bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .affinity import AffinityModel, encode, mismatch_sequence
from .core import PROBE_LENGTH, spline_basis_matrix
from .errors import InvalidCorrelationError
from .model import ArrayMeta, ModelParams, ProbeLevelDataset

_LETTERS = np.array(list("ACGT"))


@dataclass(frozen=True)
class SpikeInDesign:
    """Concentrations (pM) of spiked genes across mixtures.

    ``assignment[g, m]`` is the concentration of spiked gene ``g`` in
    mixture ``m``; every mixture is hybridised to ``replicates`` arrays.
    Concentration 0 means the transcript is absent.
    """

    levels: tuple
    assignment: np.ndarray
    replicates: int = 3

    @property
    def n_genes(self):
        return self.assignment.shape[0]

    @property
    def n_mixtures(self):
        return self.assignment.shape[1]

    @property
    def n_arrays(self):
        return self.n_mixtures * self.replicates


def default_latin_square():
    """42 genes, 14 levels (0 and 0.125 ... 512 pM), 14 mixtures x 3 replicates."""
    levels = (0.0,) + tuple(0.125 * 2.0 ** k for k in range(13))
    n_levels = len(levels)
    lv = np.asarray(levels)
    g = np.arange(42)[:, None]
    m = np.arange(n_levels)[None, :]
    assignment = lv[(g + m) % n_levels]
    return SpikeInDesign(levels, assignment, replicates=3)


def two_group_design(conc0, conc1, replicates=3):
    """Two mixtures; gene ``g`` at ``conc0[g]`` vs ``conc1[g]``."""
    conc0 = np.asarray(conc0, dtype=float)
    conc1 = np.asarray(conc1, dtype=float)
    assignment = np.column_stack([conc0, conc1])
    levels = tuple(np.unique(assignment).tolist())
    return SpikeInDesign(levels, assignment, replicates)


def default_affinity_truth(background_mean=5.0, df=5):
    """Smooth per-base position effects in the fitted model class.

    C raises and A lowers nonspecific binding relative to T, most strongly
    in the middle of the probe. The intercept is set so that a uniformly
    random sequence has expected affinity ``background_mean``.
    """
    shape = np.array([0.5, 0.85, 1.0, 0.85, 0.5])[:df] if df == 5 else np.ones(df)
    coef = np.vstack([-0.10 * shape, 0.22 * shape, 0.10 * shape])
    effects = coef @ spline_basis_matrix(df, PROBE_LENGTH).T
    intercept = background_mean - 0.25 * effects.sum()
    return AffinityModel(float(intercept), coef, df, PROBE_LENGTH)


@dataclass(frozen=True)
class SimConfig:
    """Simulator settings; the defaults are stand-ins, not estimates from real arrays."""

    probes_per_gene: int = 11
    n_background_genes: int = 1000
    absent_fraction: float = 0.4
    sigma_N: float = 0.6
    rho_N: float = 0.7
    sigma_S: float = 0.25
    rho_S: float = 0.6
    optical: float = 30.0
    background_mean: float = 5.0
    sequence_effects: bool = True
    phi_slope: float = 0.5
    expression_mean: float = 6.5
    expression_sd: float = 1.5
    spike_scale: float = float(np.log(100.0))
    spike_offset_sd: float = 0.3
    nu: tuple = ()
    array_shift_sd: float = 0.0
    mismatch: bool = True

    def __post_init__(self):
        for name in ("rho_N", "rho_S"):
            rho = getattr(self, name)
            if not (0.0 <= rho < 1.0):
                raise InvalidCorrelationError(f"invalid correlation: {name}={rho} not in [0, 1)")
        if self.sigma_N < 0 or self.sigma_S < 0:
            raise ValueError("standard deviations must be nonnegative")
        if not 0.0 <= self.absent_fraction <= 1.0:
            raise ValueError("absent_fraction must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown simulation keys: {sorted(unknown)}")
        d = dict(d)
        if "nu" in d:
            d["nu"] = tuple(d["nu"])
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    params: ModelParams
    concentration: np.ndarray  # (G, I); nan for background genes
    present: np.ndarray  # (G, I) bool, specific signal on the PM channel
    is_spike: np.ndarray  # (G,)
    alpha_pm: np.ndarray  # true affinities
    affinity: AffinityModel

    def log_fold_change(self, arrays0, arrays1):
        """True ``mean theta(arrays1) - mean theta(arrays0)`` per gene (PM channel)."""
        th = self.params.theta[:, :, 0] + self.params.nu[None, :]
        with np.errstate(invalid="ignore"):
            return th[:, arrays1].mean(axis=1) - th[:, arrays0].mean(axis=1)


def _random_sequences(rng, n, length=PROBE_LENGTH):
    codes = rng.integers(0, 4, size=(n, length))
    return ["".join(row) for row in _LETTERS[codes]]


def _exchangeable_normal(rng, shape, sigma, rho):
    """Normal draws with correlation ``rho`` along axis 1 (arrays)."""
    shared = rng.standard_normal((shape[0], 1) + tuple(shape[2:]))
    own = rng.standard_normal(shape)
    return sigma * (np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * own)


def generate(design, config=None, seed=0):
    """Draw a PM(/MM) dataset for ``design`` on top of a background transcriptome.

    Spiked genes come first (ids ``spikeNN``), followed by
    ``config.n_background_genes`` background genes whose expression is
    constant across arrays; a fraction ``absent_fraction`` of them is absent.
    Arrays are ordered by mixture then replicate, and the array condition is
    the mixture index.

    Returns
    -------
    (ProbeLevelDataset, GroundTruth)
    """
    cfg = config or SimConfig()
    rng = np.random.default_rng(seed)
    n_spike = design.n_genes
    n_bg = cfg.n_background_genes
    G = n_spike + n_bg
    J = cfg.probes_per_gene
    P = G * J
    M, R = design.n_mixtures, design.replicates
    I = M * R
    mixture = np.repeat(np.arange(M), R)
    arrays = [ArrayMeta(f"m{m:02d}_r{r}", int(m)) for m in range(M) for r in range(R)]
    probe_gene = np.repeat(np.arange(G), J)

    sequences = _random_sequences(rng, P)
    spike_offsets = rng.normal(0.0, cfg.spike_offset_sd, size=n_spike)
    bg_present = rng.random(n_bg) >= cfg.absent_fraction
    bg_theta = rng.normal(cfg.expression_mean, cfg.expression_sd, size=n_bg)
    array_shift = rng.normal(0.0, cfg.array_shift_sd, size=I) if cfg.array_shift_sd > 0 else np.zeros(I)

    affinity = default_affinity_truth(cfg.background_mean)
    if cfg.sequence_effects:
        alpha_pm = affinity.predict(sequences)
        alpha_mm = affinity.predict([mismatch_sequence(s) for s in sequences])
        phi = cfg.phi_slope * (alpha_pm - alpha_pm.mean())
    else:
        alpha_pm = np.full(P, cfg.background_mean)
        alpha_mm = alpha_pm.copy()
        phi = np.zeros(P)

    channels = ("PM", "MM") if cfg.mismatch else ("PM",)
    H = len(channels)
    mu = np.empty((P, I, H))
    mu[:, :, 0] = alpha_pm[:, None] + array_shift[None, :]
    if cfg.mismatch:
        mu[:, :, 1] = alpha_mm[:, None] + array_shift[None, :]

    conc = np.full((G, I), np.nan)
    conc[:n_spike] = design.assignment[:, mixture]
    theta = np.full((G, I, H), -np.inf)
    with np.errstate(divide="ignore"):
        theta[:n_spike, :, 0] = np.log(conc[:n_spike]) + cfg.spike_scale + spike_offsets[:, None]
    theta[n_spike:, :, 0] = np.where(bg_present, bg_theta, -np.inf)[:, None]
    nu_m = np.asarray(cfg.nu, dtype=float) if len(cfg.nu) else np.zeros(M)
    if nu_m.size != M:
        raise ValueError(f"nu needs one value per mixture ({M}), got {nu_m.size}")
    nu = nu_m[mixture]
    optical = np.full(I, float(cfg.optical))

    params = ModelParams(optical, mu, cfg.sigma_N, cfg.rho_N, nu, phi, theta,
                         cfg.sigma_S, cfg.rho_S, probe_gene, channels)

    xi = _exchangeable_normal(rng, (P, I, H), cfg.sigma_N, cfg.rho_N)
    eps = _exchangeable_normal(rng, (P, I), cfg.sigma_S, cfg.rho_S)
    Y = optical[None, :, None] + np.exp(mu + xi)
    log_s = theta[probe_gene, :, 0] + nu[None, :] + phi[:, None] + eps
    Y[:, :, 0] += np.exp(log_s)

    gene_ids = [f"spike{g:02d}" for g in range(n_spike)] + [f"bg{g:05d}" for g in range(n_bg)]
    dataset = ProbeLevelDataset(gene_ids, probe_gene, sequences, arrays, channels, Y)
    present = np.isfinite(theta[:, :, 0])
    is_spike = np.zeros(G, dtype=bool)
    is_spike[:n_spike] = True
    truth = GroundTruth(params, conc, present, is_spike, alpha_pm, affinity)
    return dataset, truth


def expected_dataset_intensities(truth):
    """Model means for every (probe, array, channel) of a generated dataset."""
    return truth.params.expected()


# --------------------------------------------------------------------------
# Two-colour tag arrays
# --------------------------------------------------------------------------

TAG_CATEGORIES = ("dead_dead", "alive_alive", "dead_alive", "ratio")


@dataclass(frozen=True)
class TagSimConfig:
    """One two-colour array: R is the experimental pool, G the control.

    ``group_shifts`` places the fold-change spikes, and ``dead_alive_shifts``
    the tags absent from R, in low, medium and high concentration groups
    relative to the typical alive level.
    """

    n_dead_dead: int = 1500
    n_alive_alive: int = 6000
    n_dead_alive: int = 90
    n_ratio: int = 450
    ratio: float = 2.0
    group_shifts: tuple = (-3.0, -2.0, -1.0)
    dead_alive_shifts: tuple = (-2.0, -1.0, 0.0)
    background_mean: float = 5.0
    sigma_N: float = 0.5
    alive_mean: float = 10.0
    alive_sd: float = 1.0
    probe_sd: float = 0.3
    noise_sd: float = 0.015
    noise_df: float = 3.0
    optical: tuple = (30.0, 40.0)
    channel_bias: tuple = (0.0, 0.2)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown tag simulation keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("group_shifts", "dead_alive_shifts", "optical", "channel_bias"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class TagTruth:
    category: np.ndarray  # (G,) str
    group: np.ndarray  # (G,) int, -1 for unspiked
    log_ratio: np.ndarray  # (G,) true log(theta_G) - log(theta_R); nan unless both alive
    alive: np.ndarray  # (G, 2) bool for (R, G)


def generate_tags(config=None, seed=0):
    """Two-colour tag array with channels ``R, G, R_bg, G_bg``.

    Dead tags carry no specific signal. Alive tags have log signal
    ``bias_h + theta_g + phi_gj + noise`` with a probe effect shared by both
    channels and heavy-tailed (Student t) channel noise. ``*_bg`` channels
    are local background readings: optical floor plus an independent draw of
    nonspecific intensity.
    """
    cfg = config or TagSimConfig()
    rng = np.random.default_rng(seed)
    n_groups = len(cfg.group_shifts)
    cats = (["dead_dead"] * cfg.n_dead_dead + ["alive_alive"] * cfg.n_alive_alive
            + ["dead_alive"] * cfg.n_dead_alive + ["ratio"] * cfg.n_ratio)
    category = np.array(cats)
    G = category.size
    group = np.full(G, -1)
    for c in ("dead_alive", "ratio"):
        idx = np.flatnonzero(category == c)
        group[idx] = np.arange(idx.size) % n_groups
    J = 2
    P = G * J
    probe_gene = np.repeat(np.arange(G), J)

    theta_alive = rng.normal(cfg.alive_mean, cfg.alive_sd, size=G)
    for c, shifts in (("ratio", cfg.group_shifts), ("dead_alive", cfg.dead_alive_shifts)):
        idx = category == c
        theta_alive[idx] = cfg.alive_mean + np.asarray(shifts, dtype=float)[group[idx]]
    theta = np.full((G, 2), -np.inf)
    theta[category == "alive_alive"] = theta_alive[category == "alive_alive", None]
    da = category == "dead_alive"
    theta[da, 1] = theta_alive[da]
    rt = category == "ratio"
    theta[rt, 0] = theta_alive[rt]
    theta[rt, 1] = theta_alive[rt] + np.log(cfg.ratio)

    phi = rng.normal(0.0, cfg.probe_sd, size=P)
    noise = cfg.noise_sd * rng.standard_t(cfg.noise_df, size=(P, 2))
    xi = rng.normal(0.0, cfg.sigma_N, size=(P, 2))
    xi_bg = rng.normal(0.0, cfg.sigma_N, size=(P, 2))
    sequences = _random_sequences(rng, P)

    optical = np.asarray(cfg.optical, dtype=float)
    bias = np.asarray(cfg.channel_bias, dtype=float)
    fg = optical[None, :] + np.exp(cfg.background_mean + xi)
    fg = fg + np.exp(bias[None, :] + theta[probe_gene] + phi[:, None] + noise)
    bg = optical[None, :] + np.exp(cfg.background_mean + xi_bg)
    Y = np.stack([fg[:, 0], fg[:, 1], bg[:, 0], bg[:, 1]], axis=1)[:, None, :]

    gene_ids = [f"tag{g:05d}" for g in range(G)]
    dataset = ProbeLevelDataset(gene_ids, probe_gene, sequences, [ArrayMeta("tagarray", 0)],
                                ("R", "G", "R_bg", "G_bg"), Y)
    with np.errstate(invalid="ignore"):
        lr = theta[:, 1] - theta[:, 0]
    alive = np.isfinite(theta)
    lr = np.where(alive.all(axis=1), lr, np.nan)
    return dataset, TagTruth(category, group, lr, alive)
