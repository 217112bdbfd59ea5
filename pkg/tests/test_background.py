import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from probelevel.background import (RHO_MAX, BackgroundFit, clamp_rho, estimate_nu,
                                   estimate_optical, fit_background, fit_plugins, log_floor)
from probelevel.errors import ChannelMissingError, InsufficientDataError
from probelevel.sim import SimConfig, generate, two_group_design


@pytest.fixture(scope="module")
def sim():
    cfg = SimConfig(n_background_genes=1500)
    conc = [0.5, 1, 2, 4, 8, 16, 32, 64, 128, 256]
    ds, truth = generate(two_group_design(conc, conc), cfg, seed=12)
    return ds, truth, fit_plugins(ds)


def test_optical_is_array_minimum(sim):
    ds, _, fit = sim
    np.testing.assert_array_equal(fit.optical, ds.intensities.min(axis=(0, 2)))
    assert estimate_optical(ds, 0) == fit.optical[0]


def test_log_floor():
    np.testing.assert_allclose(log_floor(np.array([[10.0, 30.2]]), np.array([10.0, 30.0])),
                               np.log([[0.5, 0.5]]))


def test_plugin_estimates_roughly_recover_truth(sim):
    _, _, fit = sim
    assert fit.sigma_N == pytest.approx(0.6, rel=0.15)
    assert fit.rho_N == pytest.approx(0.7, rel=0.15)
    assert fit.sigma_S == pytest.approx(0.25, rel=0.15)
    assert fit.rho_S == pytest.approx(0.6, rel=0.15)


def test_identifiability_and_ranges(sim):
    _, _, fit = sim
    assert 0 <= fit.rho_N <= RHO_MAX and 0 <= fit.rho_S <= RHO_MAX
    assert fit.sigma_N > 0 and fit.sigma_S > 0
    assert abs(fit.nu.mean()) < 1e-15
    # phi is linear in affinity and vanishes at the mean affinity
    np.testing.assert_allclose(fit.phi.mean(), 0.0, atol=1e-12)
    np.testing.assert_allclose(fit.phi, fit.phi_slope * (fit.alpha_pm - fit.alpha_pm.mean()))


def test_background_subset_and_signal_stratum_disjoint(sim):
    ds, _, fit = sim
    assert not np.any(fit.background_probes & fit.signal_genes[ds.probe_gene])
    assert fit.background_probes.sum() >= 50


def test_noiseless_probe_effects_track_truth():
    cfg = SimConfig(n_background_genes=400, sigma_N=0.0, sigma_S=0.0)
    conc = [1, 4, 16, 64, 256]
    ds, truth = generate(two_group_design(conc, conc), cfg, seed=3)
    fit = fit_plugins(ds)
    assert np.corrcoef(fit.phi, truth.params.phi)[0, 1] >= 0.99


def test_half_price_mode_without_mismatch():
    cfg = SimConfig(n_background_genes=1500, mismatch=False)
    ds, truth = generate(two_group_design([1, 8, 64], [1, 8, 64]), cfg, seed=9)
    fit = fit_plugins(ds, mode="half_price")
    assert fit.mode == "half_price"
    assert np.all(np.isfinite(fit.mu_pm))
    # the curve keeps the ranking of the true backgrounds
    assert np.corrcoef(fit.mu_pm[:, 0], truth.params.mu[:, 0, 0])[0, 1] > 0.9
    with pytest.raises(ChannelMissingError):
        fit_background(ds, mode="pm_mm")


def test_too_few_background_probes():
    cfg = SimConfig(n_background_genes=0, probes_per_gene=11)
    ds, _ = generate(two_group_design([64.0] * 30, [64.0] * 30), cfg, seed=0)
    with pytest.raises(InsufficientDataError, match="insufficient background probes"):
        fit_background(ds)


def test_json_round_trip(sim):
    _, _, fit = sim
    back = BackgroundFit.from_json(fit.to_json())
    np.testing.assert_array_equal(back.mu_pm, fit.mu_pm)
    np.testing.assert_array_equal(back.phi, fit.phi)
    assert back.sigma_S == fit.sigma_S and back.rho_N == fit.rho_N


@given(st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_clamp_rho_range(total, within):
    assert 0.0 <= clamp_rho(total, within) <= RHO_MAX


# ---- array offsets -------------------------------------------------------------

X = np.array([0, 0, 0, 1, 1, 1.0])


def test_nu_zero_for_symmetric_changes():
    b = np.r_[np.linspace(-1, 1, 21)]
    nu = estimate_nu(b, np.ones_like(b), X)
    np.testing.assert_allclose(nu, 0.0, atol=1e-15)


@given(st.floats(-2, 2))
def test_nu_absorbs_constant_shift(c):
    rng = np.random.default_rng(0)
    b = rng.normal(size=30)
    se = rng.uniform(0.1, 1, size=30)
    w = 1 / se ** 2
    b = b - np.sum(w * b) / np.sum(w) + c
    nu = estimate_nu(b, se, X)
    shift = nu[3] - nu[0]
    assert abs(np.sum(w * (b - shift)) / np.sum(w)) <= 1e-12
    assert abs(nu.mean()) <= 1e-15
    assert shift == pytest.approx(c, abs=1e-12)


def test_nu_needs_usable_genes():
    with pytest.raises(InsufficientDataError, match="no usable genes"):
        estimate_nu(np.ones(20), np.full(20, np.inf), X)
    with pytest.raises(InsufficientDataError):
        estimate_nu(np.ones(5), np.ones(5), X)
