import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from ionreadout.detector import (NO_DEPUMPING, DepumpingSpec, EmccdModel, PmtModel, QubitState, amplify,
                                 calibrate_emccd, calibrate_pmt, emccd_sample, load_model, mixture_mean,
                                 mixture_pmf, multi_ion_counts, pmt_pmf, pmt_sample, retained_fraction,
                                 save_model)

B, D = QubitState.BRIGHT, QubitState.DARK


def test_state_parsing_and_other():
    assert QubitState.parse("bright") is B
    assert QubitState.parse(D) is D
    assert B.other is D


def test_pmf_without_depumping_is_poisson():
    m = PmtModel(45.642, 1.635)
    p = pmt_pmf(m, B, NO_DEPUMPING, 200)
    k = np.arange(len(p))
    assert np.allclose(p, stats.poisson.pmf(k, 45.642), atol=1e-10)
    assert (p * k).sum() == pytest.approx(45.642, rel=1e-9)


def test_zero_rate_dark_mean_exact():
    p = pmt_pmf(PmtModel(30.0, 2.5), D, NO_DEPUMPING)
    assert (p * np.arange(len(p))).sum() == pytest.approx(2.5, abs=1e-9)


@given(st.floats(0.5, 80), st.floats(0, 10), st.floats(0, 1))
def test_pmf_normalised_nonnegative(lam_i, lam_o, x):
    p = mixture_pmf(lam_i, lam_o, x / 1e-3, 1e-3)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) < 1e-9


@given(st.floats(0.5, 80), st.floats(0, 10), st.floats(0, 1))
def test_pmf_mean_matches_closed_form(lam_i, lam_o, x):
    p = mixture_pmf(lam_i, lam_o, x / 1e-3, 1e-3)
    mean = (p * np.arange(len(p))).sum()
    assert mean == pytest.approx(mixture_mean(lam_i, lam_o, x / 1e-3, 1e-3), rel=1e-7, abs=1e-9)


def test_retained_fraction_limits():
    assert retained_fraction(0, 1e-3) == 1.0
    assert retained_fraction(1e-6, 1.0) == pytest.approx(1.0, abs=1e-6)
    # x -> inf: the ion leaves almost at once
    assert retained_fraction(1e4, 1.0) == pytest.approx(1e-4, rel=1e-3)


def test_pmf_rejects_non_finite():
    with pytest.raises(ValueError):
        mixture_pmf(float("nan"), 1.0, 0.0, 1e-3)


def test_emccd_noiseless_dark_pixel():
    m = EmccdModel(signal_bright=1.0, signal_dark=0.0, read_noise_sd=0.0)
    assert set(np.unique(emccd_sample(m, D, seed=1, size=1000))) == {925}


def test_clamp_spike_and_floor():
    m = EmccdModel(signal_bright=10.0, signal_dark=0.0, read_noise_sd=400.0)
    x = emccd_sample(m, D, seed=3, size=50_000)
    assert x.min() == 500
    spike = np.sum(x == 500)
    assert spike > 20 * max(np.sum(x == 501), 1)


def test_clamp_disabled_goes_below_bias():
    m = EmccdModel(signal_bright=10.0, signal_dark=0.0, read_noise_sd=400.0, clamp_enabled=False)
    assert emccd_sample(m, D, seed=3, size=20_000).min() < 500


@given(st.integers(0, 2**32 - 1))
def test_seeded_sampling_is_bit_identical(seed):
    m = EmccdModel(signal_bright=40.0, signal_dark=0.5, read_noise_sd=100.0)
    dep = DepumpingSpec(10.0, 30.0)
    assert np.array_equal(emccd_sample(m, B, dep, seed, 64), emccd_sample(m, B, dep, seed, 64))


def test_gamma_gain_moments():
    m = EmccdModel(signal_bright=1.0, signal_dark=0.0, gain=20.0, read_noise_sd=0.0,
                   baseline_mean=500.0, clamp_enabled=False)
    rng = np.random.default_rng(0)
    out = amplify(np.full(200_000, 30), m, rng) - 500
    # Gamma(30, 20): mean 600, variance 12000
    assert out.mean() == pytest.approx(600, rel=5e-3)
    assert out.var() == pytest.approx(12_000, rel=2e-2)


def test_calibrate_emccd_examples():
    m = calibrate_emccd(9568, 998.9, 925, 20)
    assert m.signal_bright == pytest.approx(432.15)
    assert m.signal_dark == pytest.approx(3.695)
    assert calibrate_emccd(925, 925, 925, 20).signal_bright == 0
    with pytest.raises(ValueError):
        calibrate_emccd(900, 998.9, 925, 20)


def test_calibrate_emccd_round_trip():
    m = calibrate_emccd(9568, 998.9, 925, 20, read_noise_sd=150.0)
    x = emccd_sample(m, B, seed=11, size=1_000_000)
    assert x.mean() == pytest.approx(9568, rel=2e-3)


def test_calibrate_pmt_with_depumping_restores_means():
    dep = DepumpingSpec(12.5, 28.0)
    m = calibrate_pmt(45.642, 1.635, dep)
    pb = pmt_pmf(m, B, dep)
    pd = pmt_pmf(m, D, dep)
    assert (pb * np.arange(len(pb))).sum() == pytest.approx(45.642, rel=1e-8)
    assert (pd * np.arange(len(pd))).sum() == pytest.approx(1.635, rel=1e-8)


def test_multi_ion_pmt_additivity():
    m = PmtModel(45.6, 0.0)
    x = multi_ion_counts(m, [B, B], seed=2, size=200_000)
    assert x.mean() == pytest.approx(91.2, abs=3 * math.sqrt(91.2 / 200_000))


def test_multi_ion_shared_area_single_baseline():
    m = calibrate_emccd(9568, 998.9, 925, 20, read_noise_sd=150.0, clamp_enabled=False)
    n = 200_000
    x = multi_ion_counts(m, [D, D], seed=4, size=n)
    se = x.std() / math.sqrt(n)
    assert abs(x.mean() - 1072.8) < 3 * se


def test_multi_ion_individual_shape_and_errors():
    m = PmtModel(45.6, 1.6)
    assert multi_ion_counts(m, [B, D], shared_area=False, seed=1, size=10).shape == (10, 2)
    with pytest.raises(ValueError):
        multi_ion_counts(m, [], seed=1)
    with pytest.raises(ValueError):
        multi_ion_counts([m, EmccdModel(1.0, 0.0)], [B, D])


@pytest.mark.parametrize("kwargs", [
    dict(baseline_mean=400.0), dict(excess_noise_factor=2.5), dict(gain=0.0),
    dict(signal_bright=0.1, signal_dark=0.2),
])
def test_emccd_invariants(kwargs):
    base = dict(signal_bright=10.0, signal_dark=1.0)
    with pytest.raises(ValueError):
        EmccdModel(**{**base, **kwargs})


def test_model_json_round_trip(tmp_path):
    for m in (PmtModel(45.6, 1.6), EmccdModel(48.0, 0.4, gain=190.0, read_noise_sd=1078.0)):
        save_model(m, tmp_path / "m.json")
        assert load_model(tmp_path / "m.json") == m


def test_pmt_sample_seed_type():
    m = PmtModel(10.0, 1.0)
    assert isinstance(pmt_sample(m, "bright", seed=1), int)
    assert pmt_sample(m, "bright", seed=np.random.default_rng(1), size=5).shape == (5,)
