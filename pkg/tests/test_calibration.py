import math

import numpy as np
import pytest

from ionreadout import calibration as cal
from ionreadout.detector import QubitState, emccd_sample, mixture_mean, pmt_pmf
from ionreadout.discriminator import optimal_threshold
from ionreadout.histogram import CountHistogram
from ionreadout.scans import shutter_closed_counts


def test_pmt_depumping_refit_reproduces_constants():
    dep, model = cal.fit_pmt_depumping()
    assert dep.rate_dark_to_bright == pytest.approx(cal.DEPUMPING.rate_dark_to_bright, rel=1e-5)
    assert dep.rate_bright_to_dark == pytest.approx(cal.DEPUMPING.rate_bright_to_dark, rel=1e-5)
    assert model.lambda_bright == pytest.approx(cal.PMT_MODEL.lambda_bright, rel=1e-7)
    assert model.lambda_dark == pytest.approx(cal.PMT_MODEL.lambda_dark, rel=1e-6)


@pytest.mark.parametrize("state, mean, sd", [(QubitState.BRIGHT, cal.PMT_BRIGHT_MEAN, cal.PMT_BRIGHT_SD),
                                             (QubitState.DARK, cal.PMT_DARK_MEAN, cal.PMT_DARK_SD)])
def test_pmt_model_matches_reference_moments(state, mean, sd):
    p = pmt_pmf(cal.PMT_MODEL, state, cal.DEPUMPING)
    k = np.arange(len(p))
    m = p @ k
    assert m == pytest.approx(mean, rel=1e-6)
    assert math.sqrt(p @ k**2 - m * m) == pytest.approx(sd, rel=1e-4)


def test_mixture_moments_mean_agrees_with_closed_form():
    m, _ = cal.mixture_moments(45.0, 1.5, 30.0)
    assert m == pytest.approx(mixture_mean(45.0, 1.5, 30.0, cal.WINDOW), rel=1e-10)


def test_emccd_refit_reproduces_constants():
    m = cal.fit_emccd_moments()
    for field in ("signal_bright", "signal_dark", "gain", "read_noise_sd"):
        assert getattr(m, field) == pytest.approx(getattr(cal.CAMERA_MODEL, field), rel=1e-4)


@pytest.mark.parametrize("state, mean, sd", [(QubitState.BRIGHT, cal.CAMERA_BRIGHT_MEAN, cal.CAMERA_BRIGHT_SD),
                                             (QubitState.DARK, cal.CAMERA_DARK_MEAN, cal.CAMERA_DARK_SD)])
def test_camera_model_matches_reference_moments(state, mean, sd):
    m, s = cal.clamped_moments(cal.photoelectron_pmf(cal.CAMERA_MODEL, state, cal.DEPUMPING), cal.CAMERA_MODEL)
    assert m == pytest.approx(mean, rel=1e-5)
    assert s == pytest.approx(sd, rel=1e-4)


def test_clamped_moments_agree_with_sampling():
    x = emccd_sample(cal.CAMERA_MODEL, QubitState.BRIGHT, cal.DEPUMPING, seed=3, size=200_000)
    m, s = cal.clamped_moments(cal.photoelectron_pmf(cal.CAMERA_MODEL, "bright", cal.DEPUMPING),
                               cal.CAMERA_MODEL)
    assert abs(x.mean() - m) < 4 * s / math.sqrt(len(x))
    assert x.std() == pytest.approx(s, rel=0.01)


def test_shutter_closed_mean():
    model_mean = cal.shutter_closed_mean(cal.CAMERA_MODEL)
    assert model_mean == pytest.approx(930.16, abs=0.05)
    x = shutter_closed_counts(cal.CAMERA_MODEL, 200_000, seed=4)
    assert abs(x.mean() - model_mean) < 4 * x.std() / math.sqrt(len(x))


def test_model_spam_minima():
    t, s = cal.pmt_spam_curve()
    i = int(np.argmin(s))
    assert t[i] == 9 and s[i] == pytest.approx(0.003032, abs=2e-6)
    t, s = cal.camera_spam_curve(thresholds=np.arange(3000, 5001, 10))
    i = int(np.argmin(s))
    assert abs(t[i] - 3890) <= 20 and s[i] == pytest.approx(0.00528, abs=2e-5)
    # flat bottom: moving the threshold by 100 costs almost nothing
    near = s[np.abs(t - t[i]) <= 100]
    assert near.max() - s[i] < 1e-4


def test_camera_model_curve_matches_sampled_optimum():
    rng = np.random.default_rng(7)
    hb = CountHistogram.from_samples(emccd_sample(cal.CAMERA_MODEL, "bright", cal.DEPUMPING, rng, 100_000))
    hd = CountHistogram.from_samples(emccd_sample(cal.CAMERA_MODEL, "dark", cal.DEPUMPING, rng, 100_000))
    _, s = optimal_threshold(hb, hd)
    assert s == pytest.approx(0.00528, abs=0.0015)


def test_two_ion_signal_refit():
    assert cal.fit_two_ion_signal() == pytest.approx(cal.TWO_ION_SIGNAL, rel=1e-6)
    assert cal.two_ion_bright_probability(cal.TWO_ION_SIGNAL) == pytest.approx(0.93696, abs=1e-6)
    assert cal.two_ion_camera_model().signal_bright == cal.TWO_ION_SIGNAL


def test_psf_refit_reproduces_crosstalk():
    psf = cal.fit_psf()
    assert psf.spike_fraction == pytest.approx(cal.PSF.spike_fraction, rel=1e-4)
    assert psf.spike_decay == pytest.approx(cal.PSF.spike_decay, rel=1e-4)
    assert cal.pair_crosstalk(cal.PSF, cal.SEPARATION_LARGE) == pytest.approx(0.01315, rel=1e-4)
    assert cal.pair_crosstalk(cal.PSF, cal.SEPARATION_SMALL) == pytest.approx(0.0153, rel=1e-4)
