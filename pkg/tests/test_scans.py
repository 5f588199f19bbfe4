import numpy as np
import pytest
from hypothesis import given, strategies as st

from ionreadout import calibration as cal
from ionreadout.scans import bright_probability, reference_grid, shutter_closed_counts, simulate_scan


def test_reference_grid():
    g = reference_grid()
    assert len(g) == 3250 and g[0] == pytest.approx(0.4e-6) and g[-1] == pytest.approx(1300e-6)
    assert np.all(np.diff(g) > 0)


@given(st.floats(1e-7, 1e-5))
def test_bright_probability_landmarks(t_pi):
    p = bright_probability([0.0, t_pi / 2, t_pi, 2 * t_pi], t_pi)
    assert np.allclose(p, [0, 0.5, 1, 0], atol=1e-12)


def test_scan_is_seeded_and_validated():
    t = reference_grid()[:50]
    a = simulate_scan(cal.PMT_MODEL, t, 2.84e-6, 20, cal.DEPUMPING, seed=1)
    b = simulate_scan(cal.PMT_MODEL, t, 2.84e-6, 20, cal.DEPUMPING, seed=1)
    assert np.array_equal(a.mean_counts, b.mean_counts) and np.array_equal(a.sd, b.sd)
    with pytest.raises(ValueError):
        simulate_scan(cal.PMT_MODEL, t, 2.84e-6, 1)
    with pytest.raises(ValueError):
        simulate_scan(cal.PMT_MODEL, t, 2.84e-6, 10, sd="guess")


def test_scan_means_follow_the_model():
    t = np.array([1e-9, 2.84e-6])
    s = simulate_scan(cal.CAMERA_MODEL, t, 2.84e-6, 50_000, cal.DEPUMPING, seed=2, sd="model")
    assert abs(s.mean_counts[0] - cal.CAMERA_DARK_MEAN) < 4 * s.sd[0]
    assert abs(s.mean_counts[1] - cal.CAMERA_BRIGHT_MEAN) < 4 * s.sd[1]


def test_shutter_closed_counts_clamped():
    x = shutter_closed_counts(cal.CAMERA_MODEL, 10_000, seed=3)
    assert x.min() == cal.CAMERA_BIAS
