import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ionreadout.detector import QubitState
from ionreadout.discriminator import (CalibrationWarning, PreparationScheme, ThresholdWarning,
                                      TwoIonThresholds, check_camera_threshold, classify, classify_global,
                                      crosstalk_estimate, joint_outcomes, joint_outcomes_from_bool,
                                      marginals_from_abundance, optimal_threshold,
                                      optimize_two_ion_thresholds, outcome_counts, preparation_error,
                                      preparation_error_exact, spam_curve, spam_error, spam_error_exact)
from ionreadout.histogram import CountHistogram

B, D = QubitState.BRIGHT, QubitState.DARK
hist = st.lists(st.integers(0, 60), min_size=1, max_size=80).map(CountHistogram.from_samples)


def brute_spam(hb, hd, t):
    nb, nd = hb.occurrences, hd.occurrences
    wrong = sum(int(n) for c, n in enumerate(nb) if c < t) + sum(int(n) for c, n in enumerate(nd) if c >= t)
    return Fraction(wrong, hb.total + hd.total)


@given(hist, hist, st.integers(0, 70))
def test_spam_error_matches_definition(hb, hd, t):
    assert spam_error_exact(hb, hd, t) == brute_spam(hb, hd, t)


@given(hist, hist)
def test_optimal_threshold_is_smallest_exhaustive_minimum(hb, hd):
    top = max(hb.max_count, hd.max_count) + 1
    values = [brute_spam(hb, hd, t) for t in range(top + 1)]
    best = min(values)
    t, s = optimal_threshold(hb, hd)
    assert t == values.index(best)
    assert s == float(best)


@given(hist, hist)
def test_curve_matches_pointwise(hb, hd):
    t, s = spam_curve(hb, hd)
    assert all(s[i] == spam_error(hb, hd, int(ti)) for i, ti in enumerate(t))


def test_equal_shots_give_one_half_at_extremes():
    hb = CountHistogram.from_samples([5, 6, 7, 9])
    hd = CountHistogram.from_samples([0, 1, 1, 3])
    t, s = spam_curve(hb, hd)
    assert s[0] == 0.5 and s[-1] == 0.5


def test_spam_curve_range_validation():
    h = CountHistogram([1, 1])
    with pytest.raises(ValueError):
        spam_curve(h, h, [])
    with pytest.raises(ValueError):
        spam_curve(h, h, [-1, 2])
    with pytest.raises(ValueError):
        spam_curve(h, CountHistogram([]))


def test_camera_threshold_warning():
    with pytest.warns(ThresholdWarning):
        check_camera_threshold(500)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        check_camera_threshold(501)


@pytest.mark.parametrize("occ, scheme, expected", [
    ((97642, 2344, 14), "dark", "2.358"), ((25469, 50219, 24312), "superposition", "0.688"),
    ((5, 2769, 97226), "bright", "2.774"), ((98708, 1285, 7), "dark", "1.292"),
    ((25668, 50144, 24188), "superposition", "0.812"), ((10, 6294, 93696), "bright", "6.304"),
])
def test_preparation_error_reference_rows(occ, scheme, expected):
    e = preparation_error_exact(occ, scheme) * 100
    assert f"{float(e):.3f}" == expected


def test_preparation_error_perfect_and_validation():
    assert preparation_error((25, 50, 25), PreparationScheme.SUPERPOSITION) == 0
    assert preparation_error((0, 0, 100), "bright") == 0
    with pytest.raises(ValueError):
        preparation_error((1, 2), "dark")
    with pytest.raises(ValueError):
        preparation_error((0, 0, 0), "dark")


@given(st.tuples(st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 1000)).filter(lambda m: sum(m) > 0))
def test_preparation_error_bounded(m):
    for scheme in PreparationScheme:
        assert 0 <= preparation_error_exact(m, scheme) <= 1


def test_classify_forms():
    assert classify(10, 10) is B and classify(9, 10) is D
    assert classify(np.array([9, 10]), 10).tolist() == [False, True]
    th = TwoIonThresholds(6000, 18000)
    assert [classify_global(c, th) for c in (5999, 6000, 17999, 18000)] == [0, 1, 1, 2]
    assert classify_global(np.array([5999, 6000, 18000]), th).tolist() == [0, 1, 2]
    assert outcome_counts([0, 2, 2, 1]) == (1, 1, 2)
    with pytest.raises(ValueError):
        TwoIonThresholds(10, 10)


def test_two_ion_threshold_search_matches_brute_force():
    rng = np.random.default_rng(7)
    samples = {
        "dark": rng.poisson(1.0, 300),
        "bright": rng.poisson(20.0, 300),
        "superposition": rng.poisson(np.repeat([1.0, 10.0, 20.0], 100)),
    }
    th, err = optimize_two_ion_thresholds(samples)
    cands = np.unique(np.concatenate(list(samples.values()) + [[max(map(max, samples.values())) + 1]]))
    best = None
    for t1 in cands:
        for t2 in cands[cands > t1]:
            tot = sum(preparation_error(outcome_counts(classify_global(v, TwoIonThresholds(int(t1), int(t2)))),
                                        k) for k, v in samples.items())
            if best is None or tot < best[0] - 1e-15:
                best = (tot, int(t1), int(t2))
    assert err == pytest.approx(best[0], abs=1e-12)
    assert (th.t1, th.t2) == best[1:]


def test_reference_marginals_exact():
    j = marginals_from_abundance(["25.4", "25.3", "24.7", "24.5"])
    assert j.p1_dark == Fraction("50.7") and j.p2_dark == Fraction("50.1")


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=50))
def test_joint_outcomes_consistent(pairs):
    states = [(B if a else D, B if b else D) for a, b in pairs]
    j = joint_outcomes(states)
    k = joint_outcomes_from_bool([a for a, _ in pairs], [b for _, b in pairs])
    assert j.abundance == k.abundance
    assert sum(j.abundance.values()) == 1
    assert j.p1_dark == Fraction(sum(not a for a, _ in pairs), len(pairs))
    assert j.p2_dark == Fraction(sum(not b for _, b in pairs), len(pairs))


@pytest.mark.parametrize("bright, dark, own, counts, pct", [
    (("7764", "1259.7"), ("1196.5", "1166.3"), 0, 93.4, 1.4022),
    (("1239.8", "7705"), ("1157.9", "1201.7"), 1, 81.9, 1.2437),
])
def test_crosstalk_reference_large_separation(bright, dark, own, counts, pct):
    r = crosstalk_estimate(bright, dark, own)
    assert float(r.crosstalk_counts) == pytest.approx(counts, abs=1e-9)
    assert float(r.crosstalk_fraction) * 100 == pytest.approx(pct, abs=5e-5)


def test_crosstalk_negative_excess_is_clamped():
    with pytest.warns(CalibrationWarning):
        r = crosstalk_estimate([100, 10], [20, 30], 0)
    assert r.clamped_areas == (1,)
    assert r.crosstalk_fraction == 0
    with pytest.raises(ValueError), pytest.warns(CalibrationWarning):
        crosstalk_estimate([10, 10], [20, 30], 0)
