"""Least-squares fits of Rabi oscillations (one tone and a two-tone beat),
Poisson fits to count histograms and the background ratio of a fitted
oscillation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, special

from .histogram import CountHistogram

MAX_ITER = 500
XTOL = 1e-10


class FitError(RuntimeError):
    pass


@dataclass
class RabiSeries:
    durations: np.ndarray  # s
    mean_counts: np.ndarray
    sd: np.ndarray
    shots_per_point: int | None = None

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=float)
        self.mean_counts = np.asarray(self.mean_counts, dtype=float)
        self.sd = (np.zeros_like(self.mean_counts) if self.sd is None
                   else np.asarray(self.sd, dtype=float))
        n = len(self.durations)
        if len(self.mean_counts) != n or len(self.sd) != n:
            raise ValueError("durations, mean_counts and sd must have equal length")
        if n > 1 and np.any(np.diff(self.durations) <= 0):
            raise ValueError("durations must be strictly increasing")
        if np.any(self.sd < 0):
            raise ValueError("sd must be non-negative")

    def __len__(self):
        return len(self.durations)

    @property
    def weights(self) -> np.ndarray:
        """1/sd^2, with unit weight wherever sd is zero."""
        w = np.ones_like(self.sd)
        pos = self.sd > 0
        w[pos] = 1.0 / self.sd[pos] ** 2
        return w

    def shifted(self, delta: float) -> "RabiSeries":
        return RabiSeries(self.durations + delta, self.mean_counts, self.sd, self.shots_per_point)

    def scaled(self, c: float) -> "RabiSeries":
        return RabiSeries(self.durations, c * self.mean_counts, c * self.sd, self.shots_per_point)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["duration_us", "mean_counts", "sd"])
        for t, m, s in zip(self.durations, self.mean_counts, self.sd):
            w.writerow([repr(float(t * 1e6)), repr(float(m)), repr(float(s))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source, shots_per_point=None) -> "RabiSeries":
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
            source = Path(source).read_text()
        rows = list(csv.reader(io.StringIO(source)))
        if not rows or [h.strip() for h in rows[0]] != ["duration_us", "mean_counts", "sd"]:
            raise ValueError("Rabi CSV must start with header 'duration_us,mean_counts,sd'")
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, 3)
        return cls(data[:, 0] * 1e-6, data[:, 1], data[:, 2], shots_per_point)


# --------------------------------------------------------------------------
# Models and their derivatives

def rabi_model(params, t):
    a, t_pi, phi, b = params
    return a * np.sin(np.pi * t / t_pi + phi) + b


def rabi_jacobian(params, t):
    a, t_pi, phi, b = params
    theta = np.pi * t / t_pi + phi
    c = np.cos(theta)
    return np.column_stack([np.sin(theta), -a * c * np.pi * t / t_pi**2, a * c, np.ones_like(t)])


def beat_model(params, t):
    a1, tp1, p1, a2, tp2, p2, b = params
    return rabi_model((a1, tp1, p1, b), t) + a2 * np.sin(np.pi * t / tp2 + p2)


def beat_jacobian(params, t):
    a1, tp1, p1, a2, tp2, p2, b = params
    j1 = rabi_jacobian((a1, tp1, p1, b), t)
    j2 = rabi_jacobian((a2, tp2, p2, b), t)
    return np.column_stack([j1[:, :3], j2[:, :3], np.ones_like(t)])


def objective(model, params, t, y, weights):
    r = y - model(params, t)
    return float(np.sum(weights * r * r))


def objective_gradient(jacobian, model, params, t, y, weights):
    """Gradient of the weighted sum of squared residuals."""
    r = y - model(params, t)
    return -2.0 * jacobian(params, t).T @ (weights * r)


# --------------------------------------------------------------------------
# Damped Gauss-Newton

def levenberg_marquardt(model, jacobian, p0, t, y, weights, max_iter=MAX_ITER, xtol=XTOL):
    """Minimize sum(w * (y - model)^2). Returns (params, info).

    Rejected steps multiply the damping by 10, accepted ones divide it by 3.
    Converges when an accepted step changes the parameters by less than
    ``xtol`` relative to their norm.
    """
    sw = np.sqrt(weights)
    p = np.asarray(p0, dtype=float).copy()
    r = sw * (y - model(p, t))
    cost0 = cost = float(r @ r)
    mu = 1e-3
    for it in range(1, max_iter + 1):
        jac = sw[:, None] * jacobian(p, t)
        d = np.sum(jac * jac, axis=0)
        d = np.maximum(d, 1e-12 * max(d.max(), 1e-300))
        while True:
            lhs = np.vstack([jac, np.diag(np.sqrt(mu * d))])
            rhs = np.concatenate([r, np.zeros(len(p))])
            step = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
            trial = p + step
            r_new = sw * (y - model(trial, t))
            c_new = float(r_new @ r_new)
            if np.isfinite(c_new) and c_new <= cost:
                p, r, cost = trial, r_new, c_new
                mu = max(mu / 3.0, 1e-15)
                break
            mu *= 10.0
            if mu > 1e20:
                # no descent direction left: stationary point
                return p, {"iterations": it, "cost": cost, "initial_cost": cost0,
                           "converged": True, "jacobian": jac}
        if np.linalg.norm(step) <= xtol * (np.linalg.norm(p) + xtol):
            jac = sw[:, None] * jacobian(p, t)
            return p, {"iterations": it, "cost": cost, "initial_cost": cost0,
                       "converged": True, "jacobian": jac}
    raise FitError(f"no convergence after {max_iter} iterations")


def _covariance(jac, cost, n_params):
    dof = max(jac.shape[0] - n_params, 1)
    return np.linalg.pinv(jac.T @ jac) * (cost / dof)


# --------------------------------------------------------------------------
# Frequency seeding

def _spectrum(t, y, w, pad=16):
    """Amplitude spectrum of weighted, mean-subtracted data on a uniform grid."""
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
        grid = np.linspace(t[0], t[-1], len(t))
        y = np.interp(grid, t, y)
        w = np.interp(grid, t, w)
        dt = np.diff(grid)
    step = dt[0]
    yc = (y - np.average(y, weights=w)) * np.sqrt(w / w.mean())
    n = pad * len(yc)
    amp = np.abs(np.fft.rfft(yc, n))
    freq = np.fft.rfftfreq(n, step)
    return freq, amp


def _local_maxima(amp):
    idx = np.flatnonzero((amp[1:-1] > amp[:-2]) & (amp[1:-1] >= amp[2:])) + 1
    return idx[np.argsort(amp[idx])[::-1]]


def _tone_columns(t, freqs):
    """Design-matrix columns sin/cos(pi t / t_pi) for frequencies 1/(2 t_pi)."""
    ang = 2 * np.pi * np.outer(t, freqs)
    return np.sin(ang), np.cos(ang)


def _linear_tones(t, y, w, freqs):
    """Best amplitudes/phases/offset for fixed tone frequencies."""
    s, c = _tone_columns(t, np.atleast_1d(freqs))
    x = np.column_stack([s, c, np.ones_like(t)])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(x * sw[:, None], y * sw, rcond=None)
    k = len(np.atleast_1d(freqs))
    r = sw * (y - x @ coef)
    amps = np.hypot(coef[:k], coef[k:2 * k])
    phases = np.arctan2(coef[k:2 * k], coef[:k])
    return amps, phases, coef[-1], float(r @ r)


def _check_span(t, n_min=8):
    if len(t) < n_min:
        raise FitError(f"need at least {n_min} samples")


def _seed_single(t, y, w):
    span = t[-1] - t[0]
    if span <= 0:
        raise FitError("durations do not span a positive interval")
    freq, amp = _spectrum(t, y, w)
    peaks = _local_maxima(amp)
    peaks = peaks[freq[peaks] > 0]
    if peaks.size == 0:
        raise FitError("no oscillation found in the spectrum")
    f0 = freq[peaks[0]]
    if f0 * span < 1.0:
        raise FitError("series spans less than one oscillation period")
    grid = f0 + np.linspace(-1, 1, 41) / span
    grid = grid[grid > 0]
    best = min(grid, key=lambda f: _linear_tones(t, y, w, f)[3])
    amps, phases, b, _ = _linear_tones(t, y, w, best)
    return np.array([amps[0], 1.0 / (2 * best), phases[0], b])


# --------------------------------------------------------------------------
# Results

def _canonical_tone(a, t_pi, phi):
    """Flip signs so A > 0 and t_pi > 0; returns new values and sign factors."""
    sa = st = sp = 1.0
    if t_pi < 0:
        t_pi, phi, a = -t_pi, -phi, -a
        st, sp, sa = -1.0, -1.0, -1.0
    if a < 0:
        a, phi = -a, phi + np.pi
        sa = -sa
    return a, t_pi, float(np.mod(phi, 2 * np.pi)), (sa, st, sp)


@dataclass
class RabiFit:
    A: float
    t_pi: float
    phi: float
    B: float
    covariance: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def params(self):
        return np.array([self.A, self.t_pi, self.phi, self.B])

    @property
    def stderr(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def predict(self, t):
        return rabi_model(self.params, np.asarray(t, dtype=float))

    def as_dict(self) -> dict:
        d = {"A": self.A, "t_pi": self.t_pi, "phi": self.phi, "B": self.B,
             "stderr": dict(zip(["A", "t_pi", "phi", "B"], self.stderr.tolist())),
             "covariance": self.covariance.tolist()}
        d["diagnostics"] = {k: v for k, v in self.diagnostics.items() if k != "jacobian"}
        return d


@dataclass
class BeatFit:
    A1: float
    t_pi1: float
    phi1: float
    A2: float
    t_pi2: float
    phi2: float
    B: float
    covariance: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)

    NAMES = ("A1", "t_pi1", "phi1", "A2", "t_pi2", "phi2", "B")

    @property
    def params(self):
        return np.array([getattr(self, n) for n in self.NAMES])

    @property
    def stderr(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def predict(self, t):
        return beat_model(self.params, np.asarray(t, dtype=float))

    @property
    def dominant(self) -> tuple[float, float, float]:
        """(A, t_pi, phi) of the stronger tone."""
        if self.A1 >= self.A2:
            return self.A1, self.t_pi1, self.phi1
        return self.A2, self.t_pi2, self.phi2

    def as_dict(self) -> dict:
        d = {n: float(getattr(self, n)) for n in self.NAMES}
        d["stderr"] = dict(zip(self.NAMES, self.stderr.tolist()))
        d["covariance"] = self.covariance.tolist()
        d["diagnostics"] = {k: v for k, v in self.diagnostics.items() if k != "jacobian"}
        return d


# --------------------------------------------------------------------------
# Fits

def _prepare(series: RabiSeries):
    """Rescale time and counts to order one for the solver."""
    t = series.durations
    ts = float(np.max(np.abs(t))) or 1.0
    ys = float(np.std(series.mean_counts)) or float(np.max(np.abs(series.mean_counts))) or 1.0
    w = series.weights
    if np.any(series.sd > 0):
        w = w * ys**2
    return t / ts, series.mean_counts / ys, w, ts, ys


def fit_rabi(series: RabiSeries, seed_guess: RabiFit | None = None) -> RabiFit:
    """Weighted fit of A*sin(pi*t/t_pi + phi) + B."""
    _check_span(series.durations)
    t, y, w, ts, ys = _prepare(series)
    if seed_guess is not None:
        p0 = np.array([seed_guess.A / ys, seed_guess.t_pi / ts, seed_guess.phi, seed_guess.B / ys])
    else:
        p0 = _seed_single(t, y, w)
    p, info = levenberg_marquardt(rabi_model, rabi_jacobian, p0, t, y, w)
    cov = _covariance(info["jacobian"], info["cost"], 4)
    a, t_pi, phi, signs = _canonical_tone(*p[:3])
    scale = np.array([ys * signs[0], ts * signs[1], signs[2], ys])
    cov = cov * np.outer(scale, scale)
    info["initial_params"] = (p0 * [ys, ts, 1, ys]).tolist()
    return RabiFit(a * ys, t_pi * ts, phi, p[3] * ys, cov, info)


def _seed_beat(t, y, w):
    span = t[-1] - t[0]
    freq, amp = _spectrum(t, y, w)
    peaks = _local_maxima(amp)
    peaks = peaks[freq[peaks] > 0]
    if peaks.size == 0:
        raise FitError("no oscillation found in the spectrum")
    fa = freq[peaks[0]]
    if fa * span < 1.0:
        raise FitError("series spans less than one oscillation period")
    candidates = []
    for k in peaks[1:6]:
        if amp[k] > 0.25 * amp[peaks[0]] and abs(freq[k] - fa) > 1.5 / span:
            candidates.append(tuple(sorted((fa, freq[k]))))
            break
    # around the main peak the two tones may be unresolved: scan pairs
    grid = fa + np.linspace(-2, 2, 21) / span
    grid = grid[grid > 0]
    s, c = _tone_columns(t, grid)
    sw = np.sqrt(w)
    cols = np.column_stack([s, c, np.ones_like(t)]) * sw[:, None]
    gram = cols.T @ cols
    rhs = cols.T @ (y * sw)
    yy = float((y * sw) @ (y * sw))
    k = len(grid)
    best = (np.inf, None)
    for i in range(k):
        for j in range(i + 1, k):
            idx = [i, j, k + i, k + j, 2 * k]
            g = gram[np.ix_(idx, idx)]
            r = rhs[idx]
            try:
                coef = np.linalg.solve(g, r)
            except np.linalg.LinAlgError:
                continue
            res = yy - r @ coef
            if res < best[0]:
                best = (res, (grid[i], grid[j]))
    if best[1] is not None:
        candidates.append(best[1])
    if not candidates:
        candidates.append((fa - 1.0 / span, fa + 1.0 / span))
    seeds = []
    for f1, f2 in candidates:
        amps, phases, b, res = _linear_tones(t, y, w, [f1, f2])
        seeds.append((res, np.array([amps[0], 1 / (2 * f1), phases[0],
                                     amps[1], 1 / (2 * f2), phases[1], b])))
    return min(seeds, key=lambda s: s[0])[1]


def _canonical_beat(p, cov, ts, ys):
    a1, t1, p1, s1 = _canonical_tone(*p[:3])
    a2, t2, p2, s2 = _canonical_tone(*p[3:6])
    scale = np.array([ys * s1[0], ts * s1[1], s1[2], ys * s2[0], ts * s2[1], s2[2], ys])
    cov = cov * np.outer(scale, scale)
    vals = [a1 * ys, t1 * ts, p1, a2 * ys, t2 * ts, p2, p[6] * ys]
    if vals[4] < vals[1]:
        order = [3, 4, 5, 0, 1, 2, 6]
        vals = [vals[i] for i in order]
        cov = cov[np.ix_(order, order)]
    return vals, cov


def fit_beat(series: RabiSeries, initial: BeatFit | None = None) -> BeatFit:
    """Weighted two-tone fit A1 sin(pi t/t_pi1 + phi1) + A2 sin(pi t/t_pi2 + phi2) + B.

    Tones are returned with t_pi1 <= t_pi2. Raises :class:`FitError` when the
    two tones collapse onto one frequency.
    """
    _check_span(series.durations)
    t, y, w, ts, ys = _prepare(series)
    if initial is not None:
        p0 = np.array([initial.A1 / ys, initial.t_pi1 / ts, initial.phi1,
                       initial.A2 / ys, initial.t_pi2 / ts, initial.phi2, initial.B / ys])
    else:
        p0 = _seed_beat(t, y, w)
    p, info = levenberg_marquardt(beat_model, beat_jacobian, p0, t, y, w)

    single = fit_rabi(series)
    single_cost = single.diagnostics["cost"]
    if info["cost"] > single_cost * (1 + 1e-12):
        # two-tone optimum stuck above the one-tone optimum: restart from it
        a, tp, ph = single.A / ys, single.t_pi / ts, single.phi
        f_split = 1 / (2 * tp) + 1 / (t[-1] - t[0])
        p_alt = np.array([a, tp, ph, 0.0, 1 / (2 * f_split), ph, single.B / ys])
        p, info = levenberg_marquardt(beat_model, beat_jacobian, p_alt, t, y, w)

    cov = _covariance(info["jacobian"], info["cost"], 7)
    vals, cov = _canonical_beat(p, cov, ts, ys)
    info["single_tone_cost"] = single_cost
    info["initial_params"] = p0.tolist()
    fit = BeatFit(*vals, covariance=cov, diagnostics=info)
    weak = min(fit.A1, fit.A2) <= 1e-6 * max(fit.A1, fit.A2)
    info["second_tone_negligible"] = bool(weak)
    if not weak and abs(fit.t_pi2 - fit.t_pi1) <= 1e-9 * fit.t_pi1:
        raise FitError("unresolved tones: both pi-times collapsed to the same value")
    return fit


def beat_envelope_minimum(fit_or_tpi1, t_pi2: float | None = None) -> float:
    """First null of the beat envelope, 1 / (2 |f1 - f2|) with f = 1 / (2 t_pi)."""
    if t_pi2 is None:
        t_pi1, t_pi2 = fit_or_tpi1.t_pi1, fit_or_tpi1.t_pi2
    else:
        t_pi1 = fit_or_tpi1
    if t_pi1 <= 0 or t_pi2 <= 0:
        raise ValueError("pi-times must be positive")
    f1, f2 = 1 / (2 * t_pi1), 1 / (2 * t_pi2)
    if f1 == f2:
        raise ValueError("equal pi-times have no beat")
    return 1 / (2 * abs(f1 - f2))


def background_ratio(fit: RabiFit, baseline: float = 0.0) -> float:
    """Min / (Max - Min) of the fitted curve, after subtracting ``baseline``."""
    if fit.A == 0:
        raise ValueError("zero amplitude")
    b = fit.B - baseline
    hi, lo = b + abs(fit.A), b - abs(fit.A)
    if lo < 0:
        raise ValueError(f"fitted minimum {lo:.4g} is negative; baseline over-subtracted?")
    return lo / (hi - lo)


# --------------------------------------------------------------------------
# Poisson histogram fit

@dataclass
class PoissonFit:
    lam: float
    amplitude: float
    exclusion_floor: int | None = None
    scale: float = 1.0

    @property
    def mean_counts(self) -> float:
        return self.lam * self.scale

    def predict(self, counts):
        """Expected occurrences at raw count values (per unit of scaled count)."""
        x = np.asarray(counts, dtype=float) / self.scale
        logp = x * np.log(self.lam) - self.lam - special.gammaln(x + 1)
        return self.amplitude * np.exp(logp) / self.scale

    def as_dict(self) -> dict:
        return {"lambda": self.lam, "amplitude": self.amplitude, "mean_counts": self.mean_counts,
                "exclusion_floor": self.exclusion_floor, "scale": self.scale}


def fit_poisson_hist(hist: CountHistogram, exclusion_floor: int | None = None,
                     scale: float = 1.0) -> PoissonFit:
    """Maximum-likelihood Poisson rate of ``count / scale`` over counts above
    ``exclusion_floor``; the likelihood is truncated at the floor."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    occ = hist.occurrences
    k = np.arange(len(occ))
    keep = occ > 0
    if exclusion_floor is not None:
        keep &= k > exclusion_floor
    w = occ[keep].astype(float)
    if w.sum() == 0:
        raise ValueError("all histogram mass excluded")
    x = k[keep] / scale
    mass = float(w.sum())
    xbar = float((w * x).sum() / mass)
    cut = None
    if exclusion_floor is not None and exclusion_floor / scale >= 0:
        cut = math.floor(exclusion_floor / scale)
    if cut is None or xbar == 0:
        return PoissonFit(xbar, mass, exclusion_floor, scale)

    def nll(loglam):
        lam = math.exp(loglam)
        # P(X > cut) = regularized lower incomplete gamma P(cut + 1, lam)
        tail = special.gammainc(cut + 1, lam)
        if tail <= 0:
            return np.inf
        return -(xbar * loglam - lam) + math.log(tail)

    lo = math.log(max(xbar, 1e-12)) - 5
    hi = math.log(max(xbar, 1e-12)) + 1
    res = optimize.minimize_scalar(nll, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    return PoissonFit(math.exp(res.x), mass, exclusion_floor, scale)
