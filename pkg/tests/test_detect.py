import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import wilcoxon_enumeration_p
from probelevel.background import fit_plugins
from probelevel.core import normal_sf
from probelevel.detect import (call_from_p, detect_dataset, detection_scores, effective_arrays,
                               mas5_detect, model_detect)
from probelevel.errors import DataError, InsufficientDataError
from probelevel.sim import SimConfig, generate, two_group_design


@given(st.floats(0, 1))
def test_calls_follow_thresholds(p):
    c = call_from_p(p)
    assert c == ("P" if p < 0.4 else "A" if p > 0.6 else "M")


def test_call_boundaries():
    assert call_from_p(0.4) == "M" and call_from_p(0.6) == "M"
    assert call_from_p(0.3999) == "P" and call_from_p(0.6001) == "A"


def test_mas5_uses_discrimination_scores():
    rng = np.random.default_rng(1)
    pm = rng.uniform(100, 300, size=11)
    mm = rng.uniform(100, 300, size=11)
    r = (pm - mm) / (pm + mm)
    res = mas5_detect(pm, mm)
    assert res.p_value == wilcoxon_enumeration_p(list(r), 0.015)
    assert res.statistic == pytest.approx(np.median(r))
    assert res.variant == "mas5"


def test_mas5_strong_signal_present():
    pm = np.linspace(500, 900, 11)
    res = mas5_detect(pm, pm / 3)
    assert res.p_value == 1 / 2 ** 11 and res.call == "P"
    with pytest.raises(DataError):
        mas5_detect(np.zeros(4), np.zeros(4))


def test_model_detect_statistic():
    mu = np.full((5, 3), 4.0)
    pm = 20 + np.exp(mu + 0.3)
    res = model_detect(pm, mu, 0.5, 0.6, 20.0)
    t = 0.3 / 0.5 * math.sqrt(5 * effective_arrays(3, 0.6))
    assert res.statistic == pytest.approx(t, rel=1e-12)
    assert res.p_value == pytest.approx(normal_sf(t), rel=1e-12)
    assert effective_arrays(3, 0.0) == 3 and effective_arrays(3, 1.0) == 1


def test_model_detect_errors():
    with pytest.raises(InsufficientDataError):
        model_detect(np.ones(2), np.ones(2), 0.5, 0.5, 0.0)
    with pytest.raises(DataError, match="no background model"):
        model_detect(np.ones(4), None, 0.5, 0.5, 0.0)


@settings(max_examples=40)
@given(st.integers(0, 2 ** 31), st.floats(1.0, 10.0))
def test_model_p_never_increases_with_more_signal(seed, factor):
    rng = np.random.default_rng(seed)
    mu = rng.normal(4, 0.5, size=(11, 3))
    pm = 30 + np.exp(mu + rng.normal(0, 0.6, size=mu.shape))
    base = model_detect(pm, mu, 0.6, 0.7, 30.0).p_value
    more = model_detect(pm * factor, mu, 0.6, 0.7, 30.0).p_value
    assert 0.0 <= more <= base <= 1.0


def test_variants_differ_only_through_background_input():
    rng = np.random.default_rng(2)
    mu = rng.normal(4, 0.5, size=(11, 3))
    pm = 30 + np.exp(mu + rng.normal(0, 0.6, size=mu.shape))
    a = model_detect(pm, mu, 0.6, 0.7, 30.0, variant="model_pm_mm")
    b = model_detect(pm, mu, 0.6, 0.7, 30.0, variant="model_half_price")
    assert a.p_value == b.p_value and a.statistic == b.statistic


def test_null_calibration_on_simulated_absent_genes():
    cfg = SimConfig(n_background_genes=2500)
    ds, truth = generate(two_group_design([1, 4], [1, 4]), cfg, seed=30)
    fit = fit_plugins(ds)
    res = detect_dataset(ds, fit)
    absent = ~truth.present.any(axis=1)
    p = np.array([r.p_value for r in res]).reshape(ds.n_genes, 2)[absent].ravel()
    assert abs(np.mean(p < 0.05) - 0.05) <= 0.015
    scores = detection_scores(ds, fit)
    assert scores.shape == (ds.n_genes, ds.n_arrays)
    assert np.all((scores >= 0) & (scores <= 1))
