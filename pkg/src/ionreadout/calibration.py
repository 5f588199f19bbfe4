"""Calibrated default models and the routines that fit them.

Reference detector figures come as means with standard errors over
``N = 10**5`` shots; the widths used below are ``se * sqrt(N)``. The frozen
constants are the output of the fit functions in this module and are
re-derived in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
from scipy import integrate, optimize, special

from .detector import (DepumpingSpec, EmccdModel, PmtModel, QubitState, calibrate_pmt,
                       mixture_pmf)
from .optics import FrameGeometry, PsfModel, crosstalk_fraction, ion_pair, square_areas

SHOTS = 100_000
WINDOW = 400e-6

PMT_BRIGHT_MEAN = 45.642
PMT_DARK_MEAN = 1.635
PMT_BRIGHT_SD = 0.023 * math.sqrt(SHOTS)
PMT_DARK_SD = 0.007 * math.sqrt(SHOTS)

CAMERA_BRIGHT_MEAN = 9568.0
CAMERA_DARK_MEAN = 998.9
CAMERA_BRIGHT_SD = 7.0 * math.sqrt(SHOTS)
CAMERA_DARK_SD = 2.4 * math.sqrt(SHOTS)
CAMERA_BASELINE = 925.0
CAMERA_BIAS = 500.0

# fitted by fit_pmt_depumping to the PMT histogram widths
DEPUMPING = DepumpingSpec(rate_dark_to_bright=12.503603248479308,
                          rate_bright_to_dark=27.96746716510208)
PMT_MODEL = PmtModel(lambda_bright=45.889232504926085, lambda_dark=1.5242402774984833)

# fitted by fit_emccd_moments with the additive offset pinned at the bias
CAMERA_MODEL = EmccdModel(signal_bright=48.0070235545391, signal_dark=0.43339486008711486,
                          gain=189.92916813852875, baseline_mean=CAMERA_BIAS, bias=CAMERA_BIAS,
                          read_noise_sd=1078.2531631338882)

# fitted by fit_psf to the large- and small-separation crosstalk fractions
PSF = PsfModel(core_sigma=1.5, spike_fraction=0.30322456, spike_decay=7.4306589)
SEPARATION_LARGE = 19.6  # 5.5 um at 280 nm per pixel
SEPARATION_SMALL = 16.4  # 4.6 um

# per-ion signal for the two-ion shared-area camera run, see fit_two_ion_signal
TWO_ION_SIGNAL = 59.04621801291212
TWO_ION_THRESHOLDS = (6000, 18000)

_ZX, _ZW = np.polynomial.hermite_e.hermegauss(80)
_ZW = _ZW / _ZW.sum()


def mixture_moments(mean_initial: float, mean_other: float, rate: float,
                    window: float = WINDOW) -> tuple[float, float]:
    """Mean and variance of the single-jump count mixture."""
    x = rate * window

    def raw(p):
        f = lambda u: x * math.exp(-x * u) * (mean_initial * u + mean_other * (1 - u)) ** p
        return math.exp(-x) * mean_initial ** p + integrate.quad(f, 0, 1, epsabs=1e-13)[0]

    m1, m2 = raw(1), raw(2)
    return m1, m1 + m2 - m1 * m1


def fit_pmt_depumping(bright_mean=PMT_BRIGHT_MEAN, dark_mean=PMT_DARK_MEAN,
                      bright_sd=PMT_BRIGHT_SD, dark_sd=PMT_DARK_SD,
                      window=WINDOW) -> tuple[DepumpingSpec, PmtModel]:
    """Depumping rates whose mixtures reproduce both histogram widths.

    The Poisson means are re-solved at every step so the mixture means stay
    pinned to the measured ones.
    """
    def model_for(logx):
        xbd, xdb = np.exp(logx)
        dep = DepumpingSpec(xdb / window, xbd / window)
        return dep, calibrate_pmt(bright_mean, dark_mean, dep, window)

    def residual(logx):
        dep, mdl = model_for(logx)
        _, vb = mixture_moments(mdl.lambda_bright, mdl.lambda_dark, dep.rate_bright_to_dark, window)
        _, vd = mixture_moments(mdl.lambda_dark, mdl.lambda_bright, dep.rate_dark_to_bright, window)
        return [math.sqrt(vb) / bright_sd - 1, math.sqrt(vd) / dark_sd - 1]

    sol = optimize.least_squares(residual, np.log([0.01, 0.005]), xtol=1e-12)
    return model_for(sol.x)


def photoelectron_pmf(model: EmccdModel, initial, depump: DepumpingSpec = DEPUMPING,
                      max_count: int | None = None) -> np.ndarray:
    initial = QubitState.parse(initial)
    if initial is QubitState.BRIGHT:
        return mixture_pmf(model.signal_bright, model.signal_dark, depump.rate_bright_to_dark,
                           model.window, max_count)
    return mixture_pmf(model.signal_dark, model.signal_bright, depump.rate_dark_to_bright,
                       model.window, max_count)


def clamped_moments(pe_pmf, model: EmccdModel) -> tuple[float, float]:
    """Mean and sd of camera counts for a photoelectron pmf.

    Rounding is ignored; the clamp at the bias is exact. Read noise is
    integrated by Gauss-Hermite quadrature and the gamma gain in closed form.
    """
    p = np.asarray(pe_pmf, dtype=float)
    b, sig, g, enf = model.bias, model.read_noise_sd, model.gain, model.excess_noise_factor
    c0 = model.baseline_mean - b
    m1 = np.empty(len(p))
    m2 = np.empty(len(p))
    if sig > 0:
        r = c0 / sig
        phi = math.exp(-0.5 * r * r) / math.sqrt(2 * math.pi)
        m1[0] = c0 * special.ndtr(r) + sig * phi
        m2[0] = (c0 * c0 + sig * sig) * special.ndtr(r) + c0 * sig * phi
    else:
        m1[0], m2[0] = max(c0, 0.0), max(c0, 0.0) ** 2
    if len(p) > 1:
        n = np.arange(1, len(p))[:, None]
        if enf > 1:
            k, th = n / (enf - 1), g * (enf - 1)
            c = c0 + sig * _ZX[None, :]
            a = np.maximum(-c, 0) / th
            q0, q1, q2 = (special.gammaincc(k + j, a) for j in range(3))
            e1 = k * th * q1 + c * q0
            e2 = k * (k + 1) * th * th * q2 + 2 * c * k * th * q1 + c * c * q0
            m1[1:], m2[1:] = e1 @ _ZW, e2 @ _ZW
        else:
            c = c0 + g * n + sig * _ZX[None, :]
            m1[1:], m2[1:] = np.maximum(c, 0) @ _ZW, np.maximum(c, 0) ** 2 @ _ZW
    e1, e2 = p @ m1, p @ m2
    mean = b + e1
    return mean, math.sqrt(max(b * b + 2 * b * e1 + e2 - mean * mean, 0.0))


def shutter_closed_mean(model: EmccdModel) -> float:
    """Mean reading with no light, including the clamp."""
    return clamped_moments([1.0], model)[0]


def fit_emccd_moments(bright=(CAMERA_BRIGHT_MEAN, CAMERA_BRIGHT_SD),
                      dark=(CAMERA_DARK_MEAN, CAMERA_DARK_SD),
                      depump: DepumpingSpec = DEPUMPING, offset: float = CAMERA_BIAS,
                      start=(1065.0, 190.0, 48.0, 0.48), **settings) -> EmccdModel:
    """Read noise, gain and both signal levels from the bright/dark mean and sd.

    The additive offset is held fixed (it cannot go below the bias).
    """
    targets = np.array([dark[0], dark[1], bright[0], bright[1]])

    def build(q):
        sig, g, sb, sd = q
        return EmccdModel(signal_bright=sb, signal_dark=max(sd, 0.0), gain=g, baseline_mean=offset,
                          read_noise_sd=sig, **{"bias": CAMERA_BIAS, **settings})

    def residual(q):
        if q[3] < 0 or q[2] <= q[3]:
            return np.full(4, 1e3)
        m = build(q)
        md, sdd = clamped_moments(photoelectron_pmf(m, QubitState.DARK, depump, 400), m)
        mb, sdb = clamped_moments(photoelectron_pmf(m, QubitState.BRIGHT, depump, 400), m)
        return np.array([md, sdd, mb, sdb]) / targets - 1

    sol = optimize.least_squares(residual, start, x_scale=[100, 50, 5, 0.1], xtol=1e-12, ftol=1e-12)
    return build(sol.x)


def count_cdf_matrix(model: EmccdModel, thresholds, max_pe: int) -> np.ndarray:
    """``C[n, j] = P(count < thresholds[j] | n photoelectrons)``.

    Independent of the light level, so one matrix serves every pmf.
    """
    t = np.asarray(thresholds, dtype=float)
    edge = t - 0.5 - model.baseline_mean  # counts are rounded
    sig, th = model.read_noise_sd, model.gain * (model.excess_noise_factor - 1)
    out = np.empty((max_pe + 1, len(t)))
    if sig > 0:
        out[0] = special.ndtr(edge / sig)
    else:
        out[0] = (edge > 0).astype(float)
    n = np.arange(1, max_pe + 1)[:, None]
    acc = np.zeros((max_pe, len(t)))
    if th > 0:
        k = n / (model.excess_noise_factor - 1)
        for z, w in zip(_ZX, _ZW):
            acc += w * special.gammainc(k, np.maximum(edge[None, :] - sig * z, 0) / th)
    else:
        for z, w in zip(_ZX, _ZW):
            acc += w * (model.gain * n + sig * z < edge[None, :])
    out[1:] = acc
    if model.clamp_enabled:
        out[:, t <= model.bias] = 0.0
    return out


def camera_spam_curve(model: EmccdModel = CAMERA_MODEL, depump: DepumpingSpec = DEPUMPING,
                      thresholds=None) -> tuple[np.ndarray, np.ndarray]:
    """Model S(t) for the camera, exact up to quadrature."""
    if thresholds is None:
        thresholds = np.arange(600, 12001, 5)
    pb = photoelectron_pmf(model, QubitState.BRIGHT, depump)
    pd = photoelectron_pmf(model, QubitState.DARK, depump)
    size = max(len(pb), len(pd))
    C = count_cdf_matrix(model, thresholds, size - 1)
    pb = np.pad(pb, (0, size - len(pb)))
    pd = np.pad(pd, (0, size - len(pd)))
    return np.asarray(thresholds), (pb @ C + 1 - pd @ C) / 2


def pmt_spam_curve(model: PmtModel = PMT_MODEL, depump: DepumpingSpec = DEPUMPING,
                   max_count: int = 200) -> tuple[np.ndarray, np.ndarray]:
    from .detector import pmt_pmf
    pb = pmt_pmf(model, QubitState.BRIGHT, depump, max_count)
    pd = pmt_pmf(model, QubitState.DARK, depump, max_count)
    size = max(len(pb), len(pd))
    cb = np.concatenate([[0.0], np.cumsum(np.pad(pb, (0, size - len(pb))))])
    cd = np.concatenate([[0.0], np.cumsum(np.pad(pd, (0, size - len(pd))))])
    return np.arange(size + 1), (cb + 1 - cd) / 2


def two_ion_bright_probability(signal: float, model: EmccdModel = CAMERA_MODEL,
                               depump: DepumpingSpec = DEPUMPING,
                               threshold: int = TWO_ION_THRESHOLDS[1]) -> float:
    """P(shared-area count >= threshold) with both ions bright."""
    m = replace(model, signal_bright=signal)
    p1 = photoelectron_pmf(m, QubitState.BRIGHT, depump)
    p2 = np.convolve(p1, p1)
    C = count_cdf_matrix(m, [threshold], len(p2) - 1)
    return float(1 - p2 @ C[:, 0])


def fit_two_ion_signal(target: float = 0.93696, model: EmccdModel = CAMERA_MODEL,
                       depump: DepumpingSpec = DEPUMPING) -> float:
    """Per-ion bright signal that reproduces the two-bright classification rate."""
    return optimize.brentq(lambda s: two_ion_bright_probability(s, model, depump) - target,
                           30.0, 120.0, xtol=1e-6)


def two_ion_camera_model() -> EmccdModel:
    return replace(CAMERA_MODEL, signal_bright=TWO_ION_SIGNAL)


def pair_crosstalk(psf: PsfModel, separation: float, geometry: FrameGeometry | None = None) -> float:
    """Fraction of ion 1's binned light landing in ion 2's area."""
    geometry = geometry or FrameGeometry()
    s1, s2 = ion_pair(geometry, separation)
    a1, a2 = square_areas([s1, s2], separation)
    return crosstalk_fraction(psf, s1, a1, [a2])


def fit_psf(targets=((SEPARATION_LARGE, 0.01315), (SEPARATION_SMALL, 0.0153)),
            core_sigma: float = 1.5) -> PsfModel:
    """Spike fraction and decay length matching crosstalk at two separations."""
    def residual(p):
        psf = PsfModel(core_sigma, p[0], p[1])
        return [pair_crosstalk(psf, sep) / x - 1 for sep, x in targets]

    sol = optimize.least_squares(residual, [0.25, 10.0], bounds=([0.01, 1.0], [0.95, 200.0]))
    return PsfModel(core_sigma, float(sol.x[0]), float(sol.x[1]))
