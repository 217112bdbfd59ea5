import math
from decimal import Decimal, getcontext
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probelevel.errors import InvalidCorrelationError
from probelevel.model import (ArrayMeta, ModelParams, ProbeLevelDataset, expected_intensity,
                              intensity_covariance, moment_pair, theta_from_betas,
                              variance_profile)


def one_probe_params(mu, theta, phi, nu, sN, rN, sS, rS, optical=25.0, I=2):
    return ModelParams(
        optical=np.full(I, optical), mu=np.full((1, I, 1), mu), sigma_N=sN, rho_N=rN,
        nu=np.asarray(nu, float), phi=np.array([phi]), theta=np.full((1, I, 1), theta),
        sigma_S=sS, rho_S=rS, probe_gene=np.array([0]))


def mc_pair(params, n, rng):
    """Draw n replicate pairs (array 0, array 1) of one probe."""
    def exch(s, r):
        shared = rng.standard_normal((n, 1))
        own = rng.standard_normal((n, 2))
        return s * (math.sqrt(r) * shared + math.sqrt(1 - r) * own)
    xi = exch(params.sigma_N, params.rho_N)
    eps = exch(params.sigma_S, params.rho_S)
    mu = params.mu[0, :, 0]
    s = params.theta[0, :, 0] + params.nu + params.phi[0]
    return params.optical + np.exp(mu + xi) + np.exp(s + eps)


def test_moments_match_monte_carlo_over_random_draws():
    rng = np.random.default_rng(20)
    failures = 0
    for _ in range(50):
        p = one_probe_params(rng.uniform(3, 6), rng.uniform(2, 8), rng.uniform(-0.5, 0.5),
                             rng.uniform(-0.3, 0.3, size=2), rng.uniform(0.1, 0.6),
                             rng.uniform(0, 0.9), rng.uniform(0.1, 0.4), rng.uniform(0, 0.9))
        y = mc_pair(p, 40000, rng)
        n = y.shape[0]
        m0 = expected_intensity(p, 0, 0, 0)
        v0 = intensity_covariance(p, 0, 0, (0, 0))
        c01 = intensity_covariance(p, 0, 0, (0, 1))
        d = y - y.mean(axis=0)
        se_mean = y[:, 0].std() / math.sqrt(n)
        se_var = (d[:, 0] ** 2).std() / math.sqrt(n)
        se_cov = (d[:, 0] * d[:, 1]).std() / math.sqrt(n)
        failures += abs(y[:, 0].mean() - m0) > 4 * se_mean
        failures += abs((d[:, 0] ** 2).mean() - v0) > 4 * se_var
        failures += abs((d[:, 0] * d[:, 1]).mean() - c01) > 4 * se_cov
    assert failures == 0


@settings(max_examples=50)
@given(st.floats(0, 6), st.floats(-2, 8), st.floats(0.01, 1), st.floats(0, 0.99),
       st.floats(0.01, 1), st.floats(0, 0.99))
def test_moment_invariants(mu, theta, sN, rN, sS, rS):
    p = one_probe_params(mu, theta, 0.0, [0.1, -0.1], sN, rN, sS, rS)
    m = moment_pair(p, 0, 0, (0, 1))
    assert m.gamma1 > 0 and m.gamma2 >= 0
    assert m.V >= m.W * (1 - 1e-12) and m.W >= 0


def test_absent_gene_has_no_specific_term():
    p = one_probe_params(4.0, -np.inf, 0.0, [0, 0], 0.5, 0.5, 0.3, 0.5)
    assert p.gamma2()[0, 0, 0] == 0.0
    assert expected_intensity(p, 0, 0, 0) == pytest.approx(25 + math.exp(4 + 0.125))


def test_invalid_correlation():
    with pytest.raises(InvalidCorrelationError, match="invalid correlation"):
        one_probe_params(4, 4, 0, [0, 0], 0.5, 1.0, 0.3, 0.5)
    with pytest.raises(InvalidCorrelationError):
        one_probe_params(4, 4, 0, [0, 0], 0.5, 0.5, 0.3, -0.1)


def test_theta_from_betas():
    th = theta_from_betas([1.0, 2.0], [0.5, -1.0], [0, 0, 1, 1])
    np.testing.assert_allclose(th, [[1, 1, 1.5, 1.5], [2, 2, 1, 1]])


# ---- variance profile --------------------------------------------------------

PROFILE = SimpleNamespace(sigma_N=math.sqrt(0.1), rho_N=0.5, sigma_S=math.sqrt(0.05), rho_S=0.8)


def test_variance_profile_frozen_value():
    # 50-digit decimal evaluation of the profile at these settings
    getcontext().prec = 50
    g1, g2 = Decimal(1000), Decimal(100)
    sN2, sS2 = Decimal("0.1"), Decimal("0.05")
    ref = (g1 ** 2 * (sN2.exp() - (Decimal("0.5") * sN2).exp())
           + g2 ** 2 * (sS2.exp() - (Decimal("0.8") * sS2).exp())) / g2 ** 2
    assert float(ref) == pytest.approx(5.400442492145994, rel=1e-15)
    assert variance_profile(PROFILE, 3, 100.0, gamma1=1000.0) == pytest.approx(
        5.400442492145994, rel=1e-13)


def test_variance_profile_limit_and_slope():
    limit = math.exp(0.05) - math.exp(0.8 * 0.05)
    assert variance_profile(PROFILE, 3, 1e12, gamma1=1000.0) == pytest.approx(limit, abs=1e-12)
    assert variance_profile(PROFILE, 3, np.inf, gamma1=1000.0) == pytest.approx(limit, abs=1e-15)
    lo = variance_profile(PROFILE, 3, 1.0, gamma1=1000.0)
    half = variance_profile(PROFILE, 3, 0.5, gamma1=1000.0)
    assert half / lo == pytest.approx(4.0, rel=1e-4)


@given(st.floats(0.01, 1e6), st.floats(1.0001, 10))
def test_variance_profile_decreasing_and_bounded(g2, factor):
    a = variance_profile(PROFILE, 3, g2, gamma1=500.0)
    b = variance_profile(PROFILE, 3, g2 * factor, gamma1=500.0)
    limit = math.exp(0.05) - math.exp(0.04)
    assert b < a
    assert b >= limit


def test_variance_profile_absolute_scale():
    v = variance_profile(PROFILE, 3, 200.0, gamma1=1000.0, n_probes=11)
    assert v == pytest.approx(2 * variance_profile(PROFILE, 3, 200.0, gamma1=1000.0) / 33)
    with pytest.raises(ValueError):
        variance_profile(PROFILE, 3, [0.0, 1.0], gamma1=1.0)


# ---- dataset container --------------------------------------------------------

def small_dataset():
    Y = np.arange(2 * 3 * 2 * 2, dtype=float).reshape(6, 2, 2)  # 6 probes, 2 arrays, PM/MM
    arrays = [ArrayMeta("a", 0), ArrayMeta("b", 1)]
    return ProbeLevelDataset(["g0", "g1"], np.array([0, 0, 0, 1, 1, 1]), ["A" * 25] * 6,
                             arrays, ("PM", "MM"), Y)


def test_dataset_accessors():
    ds = small_dataset()
    assert (ds.n_genes, ds.n_arrays, ds.n_probes) == (2, 2, 6)
    np.testing.assert_array_equal(ds.probe_index, [0, 1, 2, 0, 1, 2])
    np.testing.assert_array_equal(ds.channel("MM"), ds.intensities[:, :, 1])
    sub = ds.select_arrays([1])
    assert sub.array_ids == ["b"] and sub.intensities.shape == (6, 1, 2)
    np.testing.assert_array_equal(ds.arrays_with_condition(1), [1])
