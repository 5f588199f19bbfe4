import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ionreadout import calibration as cal
from ionreadout.detector import EmccdModel
from ionreadout.optics import (BinningArea, FrameGeometry, IonSite, PsfModel, areas_from_json, areas_to_json,
                               binned_readout, check_areas, expected_image, ion_pair, load_image,
                               psf_intensity, roi_fraction, save_image, software_binned_readout,
                               square_areas)

G = FrameGeometry()
CENTER = IonSite(256.3, 255.7)


def test_peak_at_center():
    for psf in (PsfModel(), cal.PSF):
        x = np.linspace(-5, 5, 101)
        vals = psf_intensity(psf, x[None, :], x[:, None])
        assert np.unravel_index(vals.argmax(), vals.shape) == (50, 50)


def test_pure_gaussian_at_one_sigma():
    psf = PsfModel(core_sigma=2.0)
    assert psf_intensity(psf, 2.0, 0.0) == pytest.approx(psf_intensity(psf, 0, 0) * math.exp(-0.5))


@pytest.mark.parametrize("psf", [PsfModel(), cal.PSF, PsfModel(1.2, 0.6, 3.0, 0.3)])
def test_psf_normalised(psf):
    half = 20 * max(psf.core_sigma, psf.spike_decay) + 10  # exponential tails need a wide box
    x = np.arange(-half, half, 0.25) + 0.125
    assert psf_intensity(psf, x[None, :], x[:, None]).sum() * 0.25**2 == pytest.approx(1, abs=1e-6)


def test_roi_full_and_far():
    psf = PsfModel(1.5)
    assert roi_fraction(psf, IonSite(100, 100), BinningArea(85, 85, 30, 30)) == pytest.approx(1, abs=1e-4)
    assert roi_fraction(psf, IonSite(100, 100), BinningArea(200, 200, 30, 30)) < 1e-6


def test_roi_matches_fine_grid():
    site, area = IonSite(250.4, 240.8), BinningArea(245, 250, 12, 9)
    fine = roi_fraction(cal.PSF, site, area, subsample=32)
    assert roi_fraction(cal.PSF, site, area) == pytest.approx(fine, abs=1e-4)


def test_partition_sums_to_one():
    g = FrameGeometry(128, 128)
    site = IonSite(60.2, 70.9)
    parts = [BinningArea(x, y, 32, 32) for x in range(0, 128, 32) for y in range(0, 128, 32)]
    assert sum(roi_fraction(cal.PSF, site, a, g) for a in parts) == pytest.approx(1, abs=1e-4)


@given(st.integers(2, 30))
def test_roi_monotone_under_translation(shift):
    site = IonSite(200.5, 200.5)
    near = roi_fraction(cal.PSF, site, BinningArea(205 + shift - 1, 190, 10, 20))
    far = roi_fraction(cal.PSF, site, BinningArea(205 + shift, 190, 10, 20))
    assert far <= near + 1e-15


def test_area_outside_frame():
    with pytest.raises(ValueError):
        roi_fraction(cal.PSF, CENTER, BinningArea(500, 500, 30, 30), G)


def test_image_sums_to_brightness_and_is_linear():
    img = expected_image(G, cal.PSF, [CENTER], 48.0)
    assert img.sum() == pytest.approx(48.0, rel=1e-6)
    img3 = expected_image(G, cal.PSF, [CENTER], 3 * 48.0)
    assert np.array_equal(img3, expected_image(G, cal.PSF, [CENTER], 48.0) * 3) or np.allclose(
        img3, 3 * img, rtol=1e-15, atol=0)


def test_two_equal_sites_symmetric():
    g = FrameGeometry(64, 64)
    sites = [IonSite(32.0, 22.0), IonSite(32.0, 42.0)]
    img = expected_image(g, cal.PSF, sites, 1.0)
    # pixel centres sit at i + 0.5; reflection about y = 32 maps row r to 63 - r
    assert np.allclose(img, img[::-1, :], atol=1e-15)
    assert np.allclose(img, img[:, ::-1], atol=1e-15)


def test_crosstalk_in_reference_range():
    s1, s2 = ion_pair(G, cal.SEPARATION_SMALL)
    a1, a2 = square_areas([s1, s2], cal.SEPARATION_SMALL)
    assert 0.01 <= roi_fraction(cal.PSF, s1, a2) <= 0.02


def test_rotating_spikes_reduces_crosstalk():
    s1, s2 = ion_pair(G, cal.SEPARATION_SMALL)
    _, a2 = square_areas([s1, s2], cal.SEPARATION_SMALL)
    aligned = roi_fraction(cal.PSF, s1, a2)
    rotated = roi_fraction(cal.PSF.rotated(math.pi / 4), s1, a2)
    assert rotated * 2 <= aligned


def test_fit_psf_recovers_defaults():
    psf = cal.fit_psf()
    assert psf.spike_fraction == pytest.approx(cal.PSF.spike_fraction, rel=1e-4)
    assert psf.spike_decay == pytest.approx(cal.PSF.spike_decay, rel=1e-4)


def test_overlapping_areas_rejected():
    with pytest.raises(ValueError):
        check_areas([BinningArea(0, 0, 10, 10), BinningArea(5, 5, 10, 10)])
    with pytest.raises(ValueError):
        binned_readout(np.zeros((20, 20)), [BinningArea(0, 0, 10, 10), BinningArea(5, 5, 10, 10)],
                       EmccdModel(1.0, 0.0))


def test_zero_image_gives_baseline_readout():
    m = EmccdModel(1.0, 0.0, read_noise_sd=50.0, clamp_enabled=False)
    x = binned_readout(np.zeros((40, 40)), [BinningArea(0, 0, 10, 10)], m, seed=1, size=50_000)
    assert x.mean() == pytest.approx(925, abs=3 * 50 / math.sqrt(50_000))
    assert x.std() == pytest.approx(50, rel=0.02)


def test_binned_means_match_expectation():
    m = EmccdModel(50.0, 0.0, gain=20.0, read_noise_sd=100.0, clamp_enabled=False)
    s1, s2 = ion_pair(G, cal.SEPARATION_LARGE)
    areas = square_areas([s1, s2], cal.SEPARATION_LARGE)
    img = expected_image(G, cal.PSF, [s1], 2000.0)
    n = 100_000
    x = binned_readout(img, areas, m, seed=5, size=n)
    for j, a in enumerate(areas):
        expected = m.gain * roi_fraction(cal.PSF, s1, a, subsample=1) * 2000.0 + m.baseline_mean
        assert abs(x[:, j].mean() - expected) < 3 * x[:, j].std() / math.sqrt(n)
    assert x[:, 0].mean() > 10 * (x[:, 1].mean() - m.baseline_mean)


@given(st.floats(0.5, 2000.0))
def test_hardware_binning_beats_software_binning(read_noise):
    # dark frame: all variance comes from the readout chain
    m = EmccdModel(50.0, 0.0, gain=20.0, read_noise_sd=read_noise, clamp_enabled=False)
    area = BinningArea(5, 5, 30, 30)
    img = np.zeros((40, 40))
    hw = binned_readout(img, [area], m, seed=1, size=2000)[:, 0]
    sw = software_binned_readout(img, area, m, seed=1, size=2000)
    assert hw.var() < sw.var()


def test_hardware_binning_with_light():
    m = EmccdModel(50.0, 0.0, gain=20.0, read_noise_sd=100.0, clamp_enabled=False)
    img = expected_image(FrameGeometry(40, 40), PsfModel(1.5), [IonSite(20, 20)], 30.0)
    area = BinningArea(5, 5, 30, 30)
    hw = binned_readout(img, [area], m, seed=1, size=4000)[:, 0]
    sw = software_binned_readout(img, area, m, seed=1, size=4000)
    assert hw.var() < sw.var() / 5


def test_image_and_area_files(tmp_path):
    g = FrameGeometry(16, 8)
    img = np.arange(128, dtype=np.float32).reshape(8, 16)
    save_image(img, tmp_path / "img.bin", g)
    raw = (tmp_path / "img.bin").read_bytes()
    assert len(raw) == 16 + 128 * 4
    back, g2 = load_image(tmp_path / "img.bin")
    assert np.array_equal(back, img) and g2 == g
    areas = [BinningArea(1, 2, 3, 4), BinningArea(9, 9, 2, 2)]
    assert areas_from_json(areas_to_json(areas)) == areas
