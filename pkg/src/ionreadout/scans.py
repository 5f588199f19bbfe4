"""Simulated Rabi and beat scans: pulse-length sweeps averaged over shots."""

from __future__ import annotations

import itertools

import numpy as np

from .detector import (NO_DEPUMPING, DepumpingSpec, EmccdModel, QubitState, _rng, amplify, pmt_pmf,
                       sample_states)
from .fitters import RabiSeries


def bright_probability(durations, t_pi: float, phase: float = 0.0) -> np.ndarray:
    """Population transferred from dark to bright by a resonant pulse."""
    return np.sin(np.pi * np.asarray(durations) / (2 * t_pi) + phase / 2) ** 2


def _moments_by_bright_count(model, depump: DepumpingSpec, n_ions: int) -> np.ndarray:
    """First and second raw moments of one shot's output given k of n ions bright."""
    if isinstance(model, EmccdModel):
        from .calibration import clamped_moments, photoelectron_pmf
        bright, dark = (photoelectron_pmf(model, s, depump) for s in (QubitState.BRIGHT, QubitState.DARK))
    else:
        bright, dark = (pmt_pmf(model, s, depump) for s in (QubitState.BRIGHT, QubitState.DARK))
    out = np.empty((n_ions + 1, 2))
    for k in range(n_ions + 1):
        pmf = np.array([1.0])
        for part in [bright] * k + [dark] * (n_ions - k):
            pmf = np.convolve(pmf, part)
        if isinstance(model, EmccdModel):
            mean, sd = clamped_moments(pmf, model)
            out[k] = mean, sd * sd + mean * mean
        else:
            n = np.arange(len(pmf))
            out[k] = pmf @ n, pmf @ (n * n)
    return out


def exact_standard_error(model, durations, t_pis, shots: int,
                         depump: DepumpingSpec = NO_DEPUMPING) -> np.ndarray:
    """Standard error of each point's shot average under the generating model."""
    t_pis = np.atleast_1d(np.asarray(t_pis, dtype=float))
    if len(t_pis) > 8:
        raise ValueError("exact standard errors support at most 8 ions")
    moments = _moments_by_bright_count(model, depump, len(t_pis))
    p = np.array([bright_probability(durations, t) for t in t_pis])
    m1 = np.zeros(p.shape[1])
    m2 = np.zeros(p.shape[1])
    for mask in itertools.product((0, 1), repeat=len(t_pis)):
        w = np.prod([pi if b else 1 - pi for pi, b in zip(p, mask)], axis=0)
        m1 += w * moments[sum(mask), 0]
        m2 += w * moments[sum(mask), 1]
    return np.sqrt(np.maximum(m2 - m1 * m1, 0.0) / shots)


def simulate_scan(model, durations, t_pis, shots: int, depump: DepumpingSpec = NO_DEPUMPING,
                  seed=None, sd: str = "sample") -> RabiSeries:
    """Mean detector output per pulse length for ions read out in one area.

    Each ion is projected independently with its own π-time. Camera signals
    are summed before a single amplification, as in hardware binning. The
    per-point sd is the standard error of the mean: estimated from the shots
    (``sd="sample"``) or exact under the generating model (``sd="model"``).
    Sample estimates are poor where few counts arrive per shot, and weighting
    by them biases fits toward low points.
    """
    if sd not in ("sample", "model"):
        raise ValueError("sd must be 'sample' or 'model'")
    rng = _rng(seed)
    durations = np.asarray(durations, dtype=float)
    t_pis = np.atleast_1d(np.asarray(t_pis, dtype=float))
    if shots < 2:
        raise ValueError("need at least two shots per point")
    signal = np.zeros((len(durations), shots), dtype=np.int64)
    for t_pi in t_pis:
        p = bright_probability(durations, t_pi)[:, None]
        bright = rng.random((len(durations), shots)) < p
        signal += sample_states(model, bright, depump, rng)
    counts = amplify(signal, model, rng) if isinstance(model, EmccdModel) else signal
    counts = counts.astype(float)
    mean = counts.mean(axis=1)
    if sd == "model":
        se = exact_standard_error(model, durations, t_pis, shots, depump)
    else:
        se = counts.std(axis=1, ddof=1) / np.sqrt(shots)
    return RabiSeries(durations, mean, se, shots)


def shutter_closed_counts(model: EmccdModel, shots: int, seed=None) -> np.ndarray:
    """Camera readings with no light on the sensor."""
    return amplify(np.zeros(shots, dtype=np.int64), model, _rng(seed))


def reference_grid(step: float = 0.4e-6, stop: float = 1300e-6) -> np.ndarray:
    """Pulse lengths from one step to ``stop`` inclusive."""
    n = int(round(stop / step))
    return step * np.arange(1, n + 1)
