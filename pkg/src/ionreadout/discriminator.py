"""Threshold state discrimination and the readout error metrics built on
it: SPAM error, two-ion preparation error, joint outcomes and crosstalk.

Error fractions are formed from exact integers (or decimal inputs read as
exact rationals) and only converted to float at the end.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .detector import QubitState
from .histogram import CountHistogram

log = logging.getLogger(__name__)

CAMERA_BIAS = 500


class ThresholdWarning(UserWarning):
    pass


class CalibrationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TwoIonThresholds:
    t1: int
    t2: int

    def __post_init__(self):
        if not 0 <= self.t1 < self.t2:
            raise ValueError("need 0 <= t1 < t2")


class PreparationScheme(enum.Enum):
    DARK = "dark"
    SUPERPOSITION = "superposition"
    BRIGHT = "bright"

    def theory(self, n: int) -> tuple[Fraction, Fraction, Fraction]:
        """Ideal number of shots with 0, 1 and 2 ions bright out of ``n``."""
        n = Fraction(n)
        if self is PreparationScheme.DARK:
            return n, Fraction(0), Fraction(0)
        if self is PreparationScheme.BRIGHT:
            return Fraction(0), Fraction(0), n
        return n / 4, n / 2, n / 4


def _check(*hists: CountHistogram):
    for h in hists:
        if h.total <= 0:
            raise ValueError("histogram is empty")


def check_camera_threshold(t: int, bias: int = CAMERA_BIAS) -> None:
    if t <= bias:
        warnings.warn(f"threshold {t} is not above the camera bias {bias}; "
                      "the firmware spike will perturb S(t)", ThresholdWarning, stacklevel=2)


def _misassigned(hist_bright: CountHistogram, hist_dark: CountHistogram, length: int):
    """Integer numerator of S(t) for t = 0..length-1."""
    nb = hist_bright.dense(length)
    nd = hist_dark.dense(length)
    below_b = np.concatenate([[0], np.cumsum(nb)[:-1]])
    at_or_above_d = hist_dark.total - np.concatenate([[0], np.cumsum(nd)[:-1]])
    return below_b + at_or_above_d


def spam_error_exact(hist_bright: CountHistogram, hist_dark: CountHistogram, t: int) -> Fraction:
    _check(hist_bright, hist_dark)
    if t < 0:
        raise ValueError("threshold must be >= 0")
    nb = hist_bright.occurrences
    nd = hist_dark.occurrences
    wrong = int(nb[:t].sum()) + int(nd[t:].sum())
    return Fraction(wrong, hist_bright.total + hist_dark.total)


def spam_error(hist_bright: CountHistogram, hist_dark: CountHistogram, t: int) -> float:
    """Fraction of shots misassigned when counts >= t are called bright."""
    return float(spam_error_exact(hist_bright, hist_dark, t))


def spam_curve(hist_bright: CountHistogram, hist_dark: CountHistogram, t_range=None):
    """S(t) over ``t_range`` (default 0..max observed + 1); returns (t, S)."""
    _check(hist_bright, hist_dark)
    top = max(hist_bright.max_count, hist_dark.max_count) + 1
    if t_range is None:
        t = np.arange(top + 1)
    else:
        t = np.asarray(list(t_range), dtype=np.int64)
        if t.size == 0:
            raise ValueError("empty threshold range")
        if t.min() < 0:
            raise ValueError("thresholds must be >= 0")
    wrong = _misassigned(hist_bright, hist_dark, max(top, int(t.max())) + 1)
    return t, wrong[t] / (hist_bright.total + hist_dark.total)


def optimal_threshold(hist_bright: CountHistogram, hist_dark: CountHistogram) -> tuple[int, float]:
    """Smallest t in [0, max observed + 1] minimizing S(t)."""
    _check(hist_bright, hist_dark)
    top = max(hist_bright.max_count, hist_dark.max_count) + 1
    wrong = _misassigned(hist_bright, hist_dark, top + 1)
    t = int(np.argmin(wrong))
    return t, float(Fraction(int(wrong[t]), hist_bright.total + hist_dark.total))


def classify(count, t: int):
    """Bright when ``count >= t``. Works elementwise on arrays."""
    if np.ndim(count):
        return np.asarray(count) >= t
    return QubitState.BRIGHT if count >= t else QubitState.DARK


def classify_global(count, thresholds: TwoIonThresholds):
    """Number of bright ions (0, 1, 2) from one shared-area count."""
    if np.ndim(count):
        c = np.asarray(count)
        return (c >= thresholds.t1).astype(np.int64) + (c >= thresholds.t2)
    if count < thresholds.t1:
        return 0
    return 1 if count < thresholds.t2 else 2


def outcome_counts(bright_numbers, n_ions: int = 2) -> tuple[int, ...]:
    """Occurrences of 0..n_ions bright in a sequence of global classifications."""
    return tuple(int(v) for v in np.bincount(np.asarray(bright_numbers, dtype=np.int64),
                                             minlength=n_ions + 1)[: n_ions + 1])


def preparation_error_exact(occurrences, scheme) -> Fraction:
    scheme = PreparationScheme(scheme) if not isinstance(scheme, PreparationScheme) else scheme
    m = [int(v) for v in occurrences]
    if len(m) != 3:
        raise ValueError("need occurrences for 0, 1 and 2 bright")
    if any(v < 0 for v in m):
        raise ValueError("occurrences must be non-negative")
    n = sum(m)
    if n <= 0:
        raise ValueError("no shots")
    theory = scheme.theory(n)
    return sum(abs(mi - ti) for mi, ti in zip(m, theory)) / 2 / n


def preparation_error(occurrences, scheme) -> float:
    """Half the L1 distance between measured and ideal outcome counts, per shot."""
    return float(preparation_error_exact(occurrences, scheme))


def optimize_two_ion_thresholds(samples: dict, candidates=None):
    """Exhaustive (t1, t2) scan minimizing the summed preparation errors.

    ``samples`` maps each PreparationScheme to an array of shared-area
    counts. Candidates default to every distinct observed count plus one
    past the maximum.
    """
    samples = {PreparationScheme(k) if not isinstance(k, PreparationScheme) else k: np.asarray(v)
               for k, v in samples.items()}
    if candidates is None:
        allc = np.concatenate(list(samples.values()))
        candidates = np.unique(np.concatenate([allc, [allc.max() + 1]]))
    candidates = np.asarray(candidates, dtype=np.int64)
    # sorted counts make each (t1, t2) lookup a pair of searchsorted calls
    sorted_s = {k: np.sort(v) for k, v in samples.items()}
    below = {k: np.searchsorted(v, candidates, side="left") for k, v in sorted_s.items()}
    best = None
    for i in range(len(candidates)):
        j = np.arange(i + 1, len(candidates))
        if j.size == 0:
            break
        total = np.zeros(j.size)
        for k, v in sorted_s.items():
            n = len(v)
            m0 = below[k][i]
            m1 = below[k][j] - m0
            m2 = n - below[k][j]
            th = [float(x) for x in k.theory(n)]
            total += (abs(m0 - th[0]) + np.abs(m1 - th[1]) + np.abs(m2 - th[2])) / (2 * n)
        jj = int(np.argmin(total))
        if best is None or total[jj] < best[0] - 1e-15:
            best = (float(total[jj]), int(candidates[i]), int(candidates[j[jj]]))
    return TwoIonThresholds(best[1], best[2]), best[0]


# --------------------------------------------------------------------------
# Joint outcomes of individually read ions

JOINT_ORDER = ((QubitState.DARK, QubitState.DARK), (QubitState.DARK, QubitState.BRIGHT),
               (QubitState.BRIGHT, QubitState.DARK), (QubitState.BRIGHT, QubitState.BRIGHT))


@dataclass(frozen=True)
class JointOutcomes:
    abundance: dict  # (state1, state2) -> Fraction
    p1_dark: Fraction
    p2_dark: Fraction
    shots: int | None = None

    def as_floats(self) -> dict:
        return {
            "abundance": {f"{a.value},{b.value}": float(v) for (a, b), v in self.abundance.items()},
            "p1_dark": float(self.p1_dark),
            "p2_dark": float(self.p2_dark),
            "shots": self.shots,
        }


def _marginals(abundance: dict) -> JointOutcomes:
    dd, db = abundance[JOINT_ORDER[0]], abundance[JOINT_ORDER[1]]
    bd = abundance[JOINT_ORDER[2]]
    return dd + db, dd + bd


def joint_outcomes(classifications) -> JointOutcomes:
    """Relative abundances of the four two-ion outcomes and the per-ion
    probabilities of reading dark."""
    pairs = [(QubitState.parse(a), QubitState.parse(b)) for a, b in classifications]
    if not pairs:
        raise ValueError("no classifications")
    n = len(pairs)
    abundance = {k: Fraction(sum(1 for p in pairs if p == k), n) for k in JOINT_ORDER}
    p1, p2 = _marginals(abundance)
    return JointOutcomes(abundance, p1, p2, n)


def joint_outcomes_from_bool(bright1, bright2) -> JointOutcomes:
    """Vectorized :func:`joint_outcomes` from per-shot bright flags."""
    b1 = np.asarray(bright1, dtype=bool)
    b2 = np.asarray(bright2, dtype=bool)
    n = b1.size
    if n == 0:
        raise ValueError("no classifications")
    counts = {
        JOINT_ORDER[0]: int(np.sum(~b1 & ~b2)), JOINT_ORDER[1]: int(np.sum(~b1 & b2)),
        JOINT_ORDER[2]: int(np.sum(b1 & ~b2)), JOINT_ORDER[3]: int(np.sum(b1 & b2)),
    }
    abundance = {k: Fraction(v, n) for k, v in counts.items()}
    p1, p2 = _marginals(abundance)
    return JointOutcomes(abundance, p1, p2, n)


def marginals_from_abundance(abundances) -> JointOutcomes:
    """Marginals from the four abundances in (dd, db, bd, bb) order.

    Inputs such as ``"25.4"`` or ``0.254`` are read as exact decimals.
    """
    vals = [Fraction(str(v)) for v in abundances]
    if len(vals) != 4:
        raise ValueError("need four abundances")
    abundance = dict(zip(JOINT_ORDER, vals))
    p1, p2 = _marginals(abundance)
    return JointOutcomes(abundance, p1, p2)


# --------------------------------------------------------------------------
# Crosstalk from measured area means

@dataclass(frozen=True)
class CrosstalkReport:
    own_area: int
    excess: tuple  # per area, Fraction
    crosstalk_counts: Fraction
    crosstalk_fraction: Fraction
    clamped_areas: tuple = ()

    def as_floats(self) -> dict:
        return {
            "own_area": self.own_area,
            "excess": [float(e) for e in self.excess],
            "crosstalk_counts": float(self.crosstalk_counts),
            "crosstalk_fraction": float(self.crosstalk_fraction),
            "clamped_areas": list(self.clamped_areas),
        }


def crosstalk_estimate(bright_area_means, dark_area_means, own_area: int,
                       noise_floor: float = 0.0) -> CrosstalkReport:
    """Counts above the dark level in the wrong areas, absolute and as a
    fraction of the excess in all areas.

    Negative excesses are clamped to zero for the fraction; one below
    ``-noise_floor`` raises a :class:`CalibrationWarning`.
    """
    bright = [Fraction(str(v)) for v in bright_area_means]
    dark = [Fraction(str(v)) for v in dark_area_means]
    if len(bright) != len(dark):
        raise ValueError("bright and dark means must cover the same areas")
    if len(bright) < 2:
        raise ValueError("need at least two areas")
    if not 0 <= own_area < len(bright):
        raise ValueError("own_area out of range")
    excess = [b - d for b, d in zip(bright, dark)]
    clamped = []
    for j, e in enumerate(excess):
        if e < 0:
            clamped.append(j)
            if e < -Fraction(str(noise_floor)):
                warnings.warn(f"area {j} shows negative excess {float(e):.3g}; clamped to zero",
                              CalibrationWarning, stacklevel=2)
    pos = [max(e, Fraction(0)) for e in excess]
    xt_counts = sum(e for j, e in enumerate(excess) if j != own_area)
    denom = sum(pos)
    if denom == 0:
        raise ValueError("no excess counts in any area")
    xt_frac = sum(e for j, e in enumerate(pos) if j != own_area) / denom
    return CrosstalkReport(own_area, tuple(excess), xt_counts, xt_frac, tuple(clamped))
