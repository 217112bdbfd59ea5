import math

import numpy as np
import pytest

from probelevel.errors import InvalidCorrelationError
from probelevel.sim import (SimConfig, TagSimConfig, default_latin_square,
                            expected_dataset_intensities, generate, generate_tags,
                            two_group_design)

SMALL = SimConfig(n_background_genes=100)


def test_latin_square_layout():
    d = default_latin_square()
    assert len(d.levels) == 14 and min(d.levels) == 0 and max(d.levels) == 512
    assert d.n_genes == 42 and d.n_mixtures == 14 and d.n_arrays == 42
    full = sorted(d.levels)
    for g in range(d.n_genes):
        assert sorted(d.assignment[g]) == full
    # adjacent mixtures: doubling for every gene except at the 0 and wrap-around steps
    ratio = d.assignment[:, 1:] / np.where(d.assignment[:, :-1] > 0, d.assignment[:, :-1], np.nan)
    assert np.mean(np.isclose(ratio, 2.0)) > 0.8


def test_noiseless_generation_equals_expectation():
    cfg = SimConfig(n_background_genes=50, sigma_N=0.0, sigma_S=0.0)
    ds, truth = generate(two_group_design([1, 8, 0], [2, 16, 4]), cfg, seed=1)
    np.testing.assert_allclose(ds.intensities, expected_dataset_intensities(truth), rtol=1e-12)


def test_seed_determinism():
    a, _ = generate(default_latin_square(), SMALL, seed=7)
    b, _ = generate(default_latin_square(), SMALL, seed=7)
    c, _ = generate(default_latin_square(), SMALL, seed=8)
    np.testing.assert_array_equal(a.intensities, b.intensities)
    assert a.sequences == b.sequences
    assert not np.array_equal(a.intensities, c.intensities)


def test_invalid_correlation():
    with pytest.raises(InvalidCorrelationError, match="invalid correlation"):
        SimConfig(rho_S=1.0)
    with pytest.raises(KeyError):
        SimConfig.from_dict({"not_a_key": 1})


def test_sample_moments_match_model():
    n = 100_000
    cfg = SimConfig(probes_per_gene=n, n_background_genes=0, sequence_effects=False,
                    spike_offset_sd=0.0)
    ds, truth = generate(two_group_design([0.5], [0.5]), cfg, seed=3)
    y = ds.channel("PM")
    p = truth.params
    g1 = math.exp(cfg.background_mean + cfg.sigma_N ** 2 / 2)
    g2 = float(p.gamma2()[0, 0, 0])
    V = g1 ** 2 * math.expm1(cfg.sigma_N ** 2) + g2 ** 2 * math.expm1(cfg.sigma_S ** 2)
    W = (g1 ** 2 * math.expm1(cfg.rho_N * cfg.sigma_N ** 2)
         + g2 ** 2 * math.expm1(cfg.rho_S * cfg.sigma_S ** 2))
    a, b = y[:, 0], y[:, 1]
    da, db = a - a.mean(), b - b.mean()
    assert abs(a.mean() - (cfg.optical + g1 + g2)) < 4 * a.std() / math.sqrt(n)
    assert abs((da ** 2).mean() - V) < 4 * (da ** 2).std() / math.sqrt(n)
    assert abs((da * db).mean() - W) < 4 * (da * db).std() / math.sqrt(n)


def test_background_log_residuals_are_normal():
    cfg = SimConfig(probes_per_gene=11, n_background_genes=3000, sequence_effects=False)
    ds, truth = generate(two_group_design([1.0], [1.0]), cfg, seed=4)
    xi = (np.log(ds.channel("MM") - cfg.optical) - cfg.background_mean).ravel()
    n = xi.size
    z = (xi - xi.mean()) / xi.std()
    # replicate arrays share a common component, so inflate the SEs by the design effect
    deff = 1 + (ds.n_arrays - 1) * cfg.rho_N
    assert abs(np.mean(z ** 3)) < 4 * math.sqrt(6 * deff / n)
    assert abs(np.mean(z ** 4) - 3) < 4 * math.sqrt(24 * deff / n)
    assert xi.std() == pytest.approx(cfg.sigma_N, rel=0.02)


def test_marginal_intensities_right_skewed():
    ds, _ = generate(default_latin_square(), SMALL, seed=0)
    y = ds.channel("PM").ravel()
    assert np.mean((y - y.mean()) ** 3) > 0
    assert np.mean(y) > np.median(y)


def test_ground_truth_fold_change_and_presence():
    ds, truth = generate(two_group_design([1, 0, 4], [2, 0, 8]), SMALL, seed=2)
    a0, a1 = ds.arrays_with_condition(0), ds.arrays_with_condition(1)
    lfc = truth.log_fold_change(a0, a1)
    np.testing.assert_allclose(lfc[[0, 2]], math.log(2), rtol=1e-12)
    assert not truth.present[1].any() and truth.present[0].all()
    assert ds.channels == ("PM", "MM")


def test_array_offsets_enter_intensities():
    cfg = SimConfig(n_background_genes=10, sigma_N=0, sigma_S=0, nu=(0.2, -0.2))
    ds, truth = generate(two_group_design([8.0], [8.0]), cfg, seed=0)
    g2 = truth.params.gamma2()[:, :, 0]
    np.testing.assert_allclose(np.log(g2[:11, 3] / g2[:11, 0]), -0.4, atol=1e-12)
    specific = ds.channel("PM") - cfg.optical - np.exp(truth.params.mu[:, :, 0])
    np.testing.assert_allclose(specific[:11], g2[:11], rtol=1e-10)


def test_tag_simulation_layout():
    cfg = TagSimConfig()
    ds, truth = generate_tags(cfg, seed=1)
    assert ds.channels == ("R", "G", "R_bg", "G_bg") and ds.n_arrays == 1
    n = cfg.n_dead_dead + cfg.n_alive_alive + cfg.n_dead_alive + cfg.n_ratio
    assert ds.n_genes == n and ds.n_probes == 2 * n
    ratio = truth.category == "ratio"
    np.testing.assert_allclose(truth.log_ratio[ratio], math.log(2))
    da = truth.category == "dead_alive"
    assert not truth.alive[da, 0].any() and truth.alive[da, 1].all()
    assert np.isnan(truth.log_ratio[da]).all()
    again, _ = generate_tags(cfg, seed=1)
    np.testing.assert_array_equal(ds.intensities, again.intensities)
