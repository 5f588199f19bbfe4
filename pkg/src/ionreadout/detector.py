"""Photon-count generation for bright/dark ions read out by a PMT or an
EMCCD camera, including optical depumping during the detection window.

Depumping is treated in the single-jump approximation: during one window
the ion changes state at most once, at an exponentially distributed time.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy import integrate, stats

DETECTION_WINDOW = 400e-6

PMF_TAIL_TOL = 1e-9
PMF_MAX_COUNT_CAP = 2_000_000


class QubitState(enum.Enum):
    BRIGHT = "bright"
    DARK = "dark"

    @property
    def other(self) -> "QubitState":
        return QubitState.DARK if self is QubitState.BRIGHT else QubitState.BRIGHT

    @classmethod
    def parse(cls, value) -> "QubitState":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


@dataclass(frozen=True)
class DepumpingSpec:
    """Transition rates (1/s) active while the detection laser is on."""

    rate_dark_to_bright: float = 0.0
    rate_bright_to_dark: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and >= 0, got {v}")

    def rate_from(self, initial: QubitState) -> float:
        if initial is QubitState.BRIGHT:
            return self.rate_bright_to_dark
        return self.rate_dark_to_bright


NO_DEPUMPING = DepumpingSpec()


@dataclass(frozen=True)
class PmtModel:
    """Mean detected counts per window for each state."""

    lambda_bright: float
    lambda_dark: float
    window: float = DETECTION_WINDOW

    def __post_init__(self):
        _check_finite(self)
        if not self.lambda_bright > self.lambda_dark >= 0:
            raise ValueError("need lambda_bright > lambda_dark >= 0")
        if self.window <= 0:
            raise ValueError("window must be positive")

    def mean_for(self, state: QubitState) -> float:
        return self.lambda_bright if state is QubitState.BRIGHT else self.lambda_dark


@dataclass(frozen=True)
class EmccdModel:
    """EMCCD readout of one binning area.

    Signals are mean photoelectrons per window. ``excess_noise_factor`` is
    the variance inflation of the EM register (2 in the high-gain limit).
    """

    signal_bright: float
    signal_dark: float
    gain: float = 20.0
    baseline_mean: float = 925.0
    bias: float = 500.0
    read_noise_sd: float = 150.0
    excess_noise_factor: float = 2.0
    clamp_enabled: bool = True
    window: float = DETECTION_WINDOW

    def __post_init__(self):
        _check_finite(self)
        if not self.baseline_mean >= self.bias >= 0:
            raise ValueError("need baseline_mean >= bias >= 0")
        if self.gain <= 0:
            raise ValueError("gain must be positive")
        if not 1.0 <= self.excess_noise_factor <= 2.0:
            raise ValueError("excess_noise_factor must lie in [1, 2]")
        if not self.signal_bright >= self.signal_dark >= 0:
            raise ValueError("need signal_bright >= signal_dark >= 0")
        if self.read_noise_sd < 0 or self.window <= 0:
            raise ValueError("read_noise_sd must be >= 0 and window > 0")

    def mean_for(self, state: QubitState) -> float:
        return self.signal_bright if state is QubitState.BRIGHT else self.signal_dark


def _check_finite(obj):
    for f in fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, float) and not math.isfinite(v):
            raise ValueError(f"{f.name} must be finite")


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def retained_fraction(rate: float, window: float) -> float:
    """Expected fraction of the window spent in the initial state."""
    x = rate * window
    if x == 0:
        return 1.0
    if x < 1e-6:
        return 1.0 - x / 2 + x * x / 6
    return math.exp(-x) + (1.0 - math.exp(-x) * (1.0 + x)) / x


def mixture_mean(mean_initial: float, mean_other: float, rate: float, window: float) -> float:
    a = retained_fraction(rate, window)
    return a * mean_initial + (1.0 - a) * mean_other


# --------------------------------------------------------------------------
# Probability mass functions

def mixture_pmf(mean_initial: float, mean_other: float, rate: float, window: float,
                max_count: int | None = None) -> np.ndarray:
    """Count pmf over 0..K of a Poisson source that may switch mean once.

    K starts at ``max_count`` (or a heuristic) and is extended until the
    missing tail mass is below 1e-9.
    """
    for v in (mean_initial, mean_other, rate, window):
        if not math.isfinite(v):
            raise ValueError("parameters must be finite")
    if mean_initial < 0 or mean_other < 0 or rate < 0 or window <= 0:
        raise ValueError("means and rate must be >= 0, window > 0")
    top = max(mean_initial, mean_other)
    k_max = max_count if max_count is not None else int(top + 12 * math.sqrt(top) + 30)
    x = rate * window
    while True:
        k = np.arange(k_max + 1)
        pmf = math.exp(-x) * stats.poisson.pmf(k, mean_initial)
        if x > 0:
            def integrand(u):
                mu = mean_initial * u + mean_other * (1.0 - u)
                return x * math.exp(-x * u) * stats.poisson.pmf(k, mu)

            jump, _ = integrate.quad_vec(integrand, 0.0, 1.0, epsrel=1e-8, epsabs=1e-15)
            pmf = pmf + jump
        if 1.0 - pmf.sum() < PMF_TAIL_TOL:
            return pmf
        if k_max >= PMF_MAX_COUNT_CAP:
            raise ValueError(
                f"pmf tail mass {1.0 - pmf.sum():.3g} still above {PMF_TAIL_TOL} "
                f"at max_count={k_max}")
        k_max = min(2 * k_max + 1, PMF_MAX_COUNT_CAP)


def pmt_pmf(model: PmtModel, initial: QubitState, depump: DepumpingSpec = NO_DEPUMPING,
            max_count: int | None = None) -> np.ndarray:
    """Probability of each PMT count 0..K for an ion prepared in ``initial``."""
    initial = QubitState.parse(initial)
    return mixture_pmf(model.mean_for(initial), model.mean_for(initial.other),
                       depump.rate_from(initial), model.window, max_count)


# --------------------------------------------------------------------------
# Sampling

def sample_signal(mean_initial: float, mean_other: float, rate: float, window: float,
                  rng: np.random.Generator, size=None):
    """Poisson counts with at most one switch of the mean inside the window."""
    if rate > 0:
        tau = rng.exponential(1.0 / rate, size=size)
        u = np.minimum(tau / window, 1.0)
        mu = mean_initial * u + mean_other * (1.0 - u)
    else:
        mu = np.broadcast_to(mean_initial, () if size is None else size)
    return rng.poisson(mu)


def sample_states(model, bright, depump: DepumpingSpec, rng: np.random.Generator):
    """Signal counts (photons or photoelectrons) for a boolean array of
    initial states, one independent draw per element."""
    bright = np.asarray(bright, dtype=bool)
    init = np.where(bright, model.mean_for(QubitState.BRIGHT), model.mean_for(QubitState.DARK))
    other = np.where(bright, model.mean_for(QubitState.DARK), model.mean_for(QubitState.BRIGHT))
    rate = np.where(bright, depump.rate_bright_to_dark, depump.rate_dark_to_bright)
    e = rng.exponential(size=bright.shape)
    with np.errstate(divide="ignore"):
        u = np.minimum(e / (rate * model.window), 1.0)
    return rng.poisson(init * u + other * (1.0 - u))


def read_out(model, signal, rng: np.random.Generator):
    """Detector output for given signal counts: identity for a PMT, EM gain
    and readout electronics for a camera."""
    if isinstance(model, EmccdModel):
        return amplify(signal, model, rng)
    return np.asarray(signal, dtype=np.int64)


def amplify(photoelectrons, model: EmccdModel, rng: np.random.Generator):
    """EM gain, read noise, baseline offset, rounding and firmware clamp."""
    n = np.asarray(photoelectrons, dtype=np.float64)
    enf = model.excess_noise_factor
    if enf == 1.0:
        electrons = n * model.gain
    else:
        electrons = rng.gamma(n / (enf - 1.0), model.gain * (enf - 1.0))
    noise = rng.normal(0.0, model.read_noise_sd, size=n.shape) if model.read_noise_sd > 0 else 0.0
    counts = np.rint(electrons + noise + model.baseline_mean)
    if model.clamp_enabled:
        counts = np.maximum(counts, model.bias)
    counts = counts.astype(np.int64)
    return counts if counts.ndim else int(counts)


def pmt_sample(model: PmtModel, initial: QubitState, depump: DepumpingSpec = NO_DEPUMPING,
               seed=None, size=None):
    initial = QubitState.parse(initial)
    rng = _rng(seed)
    out = sample_signal(model.mean_for(initial), model.mean_for(initial.other),
                        depump.rate_from(initial), model.window, rng, size)
    return out if np.ndim(out) else int(out)


def emccd_sample(model: EmccdModel, initial: QubitState, depump: DepumpingSpec = NO_DEPUMPING,
                 seed=None, size=None):
    """Camera count(s) for one binning area holding one ion.

    ``seed`` may be an int or a ``numpy.random.Generator``; a fixed int gives
    a bit-identical stream.
    """
    initial = QubitState.parse(initial)
    rng = _rng(seed)
    pe = sample_signal(model.mean_for(initial), model.mean_for(initial.other),
                       depump.rate_from(initial), model.window, rng, size)
    return amplify(pe, model, rng)


def multi_ion_counts(models, states, depump: DepumpingSpec = NO_DEPUMPING,
                     shared_area: bool = True, seed=None, size=None):
    """Counts for several ions, either in one shared area or one area each.

    In a shared camera area the photoelectrons of all ions are summed before
    a single pass through gain, read noise and baseline. Returns shape
    ``size`` when shared, else ``size + (n_ions,)``.
    """
    states = [QubitState.parse(s) for s in states]
    if not states:
        raise ValueError("need at least one ion")
    if isinstance(models, (PmtModel, EmccdModel)):
        models = [models] * len(states)
    models = list(models)
    if len(models) != len(states):
        raise ValueError("one model per ion required")
    kinds = {type(m) for m in models}
    if len(kinds) != 1:
        raise ValueError("cannot mix PMT and EMCCD models")
    camera = kinds.pop() is EmccdModel
    if camera and shared_area and len({m.baseline_mean for m in models}) != 1:
        raise ValueError("shared area requires identical baselines")
    rng = _rng(seed)
    signals = [
        sample_signal(m.mean_for(s), m.mean_for(s.other), depump.rate_from(s), m.window, rng, size)
        for m, s in zip(models, states)
    ]
    if shared_area:
        total = np.sum(signals, axis=0)
        if camera:
            return amplify(total, models[0], rng)
        return total if np.ndim(total) else int(total)
    if camera:
        signals = [amplify(pe, m, rng) for pe, m in zip(signals, models)]
    out = np.stack([np.asarray(s) for s in signals], axis=-1)
    return out if size is not None else [int(v) for v in out]


# --------------------------------------------------------------------------
# Calibration from measured histogram means

def _solve_mixture_means(obs_bright: float, obs_dark: float, depump: DepumpingSpec,
                         window: float) -> tuple[float, float]:
    """Invert observed (bright, dark) means for the underlying state means."""
    ab = retained_fraction(depump.rate_bright_to_dark, window)
    ad = retained_fraction(depump.rate_dark_to_bright, window)
    mat = np.array([[ab, 1.0 - ab], [1.0 - ad, ad]])
    mb, md = np.linalg.solve(mat, [obs_bright, obs_dark])
    return float(mb), float(md)


def calibrate_pmt(bright_mean: float, dark_mean: float, depump: DepumpingSpec = NO_DEPUMPING,
                  window: float = DETECTION_WINDOW) -> PmtModel:
    """PMT model whose depumped histogram means equal the given means."""
    if not bright_mean > dark_mean >= 0:
        raise ValueError("need bright_mean > dark_mean >= 0")
    lb, ld = _solve_mixture_means(bright_mean, dark_mean, depump, window)
    if ld < 0:
        raise ValueError("depumping too strong for the requested dark mean")
    return PmtModel(lb, ld, window)


def calibrate_emccd(bright_mean: float, dark_mean: float, baseline_mean: float, gain: float,
                    depump: DepumpingSpec | None = None, **settings) -> EmccdModel:
    """EMCCD model reproducing measured bright/dark count means.

    Without ``depump`` the signals are plain (mean - baseline) / gain; with
    it, they are corrected so the depumped histograms keep those means.
    Remaining keyword arguments are passed to :class:`EmccdModel`.
    """
    if not (bright_mean >= dark_mean >= baseline_mean > 0):
        raise ValueError("need bright_mean >= dark_mean >= baseline_mean > 0")
    if gain <= 0:
        raise ValueError("gain must be positive")
    sb = (bright_mean - baseline_mean) / gain
    sd = (dark_mean - baseline_mean) / gain
    if depump is not None:
        window = settings.get("window", DETECTION_WINDOW)
        sb, sd = _solve_mixture_means(sb, sd, depump, window)
        if sd < 0:
            raise ValueError("depumping too strong for the requested dark mean")
    return EmccdModel(signal_bright=sb, signal_dark=sd, gain=gain,
                      baseline_mean=baseline_mean, **settings)


# --------------------------------------------------------------------------
# JSON with explicit units

_UNITS = {
    "pmt": {"lambda_bright": "counts/window", "lambda_dark": "counts/window", "window": "s"},
    "emccd": {
        "signal_bright": "photoelectrons/window", "signal_dark": "photoelectrons/window",
        "gain": "counts/photoelectron", "baseline_mean": "counts", "bias": "counts",
        "read_noise_sd": "counts", "excess_noise_factor": "1", "clamp_enabled": "bool",
        "window": "s",
    },
    "depumping": {"rate_dark_to_bright": "1/s", "rate_bright_to_dark": "1/s"},
}
_TYPES = {"pmt": PmtModel, "emccd": EmccdModel, "depumping": DepumpingSpec}


def model_to_dict(model) -> dict:
    kind = {v: k for k, v in _TYPES.items()}[type(model)]
    return {"type": kind, **asdict(model), "units": _UNITS[kind]}


def model_from_dict(data: dict):
    kind = data.get("type")
    if kind not in _TYPES:
        raise ValueError(f"unknown model type {kind!r}")
    cls = _TYPES[kind]
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names - {"type", "units"}
    if unknown:
        raise ValueError(f"unknown fields for {kind}: {sorted(unknown)}")
    return cls(**{k: v for k, v in data.items() if k in names})


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
