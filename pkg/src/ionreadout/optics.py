"""Imaging geometry: a point-spread function with two perpendicular
diffraction spikes, ion sites, hardware-binned areas and the optical
crosstalk between them."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import special

from .detector import EmccdModel, amplify

PIXEL_SCALE = 280e-9
SUBSAMPLE = 4


@dataclass(frozen=True)
class FrameGeometry:
    width: int = 512
    height: int = 512
    pixel_scale: float = PIXEL_SCALE  # m per pixel in object space

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.pixel_scale <= 0:
            raise ValueError("frame dimensions and pixel_scale must be positive")

    def to_pixels(self, meters: float) -> float:
        return meters / self.pixel_scale


@dataclass(frozen=True)
class PsfModel:
    """Gaussian core plus a cross of two exponential ridges.

    Each ridge has a Gaussian transverse profile of width ``core_sigma``.
    Longitudinally it is a two-sided exponential of length ``spike_decay``
    convolved with the same Gaussian, so the cross is as smooth as the core
    and pixel-centre sampling stays accurate.
    """

    core_sigma: float = 1.5
    spike_fraction: float = 0.0
    spike_decay: float = 10.0
    spike_angle: float = math.pi / 2

    def __post_init__(self):
        if self.core_sigma <= 0 or self.spike_decay <= 0:
            raise ValueError("core_sigma and spike_decay must be positive")
        if not 0 <= self.spike_fraction < 1:
            raise ValueError("spike_fraction must lie in [0, 1)")

    def rotated(self, delta: float) -> "PsfModel":
        return PsfModel(self.core_sigma, self.spike_fraction, self.spike_decay,
                        self.spike_angle + delta)


@dataclass(frozen=True)
class IonSite:
    x: float
    y: float


@dataclass(frozen=True)
class BinningArea:
    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError("binning area must have positive size")

    def inside(self, geometry: FrameGeometry) -> bool:
        return (self.x0 >= 0 and self.y0 >= 0 and self.x0 + self.w <= geometry.width
                and self.y0 + self.h <= geometry.height)

    def overlaps(self, other: "BinningArea") -> bool:
        return not (self.x0 + self.w <= other.x0 or other.x0 + other.w <= self.x0
                    or self.y0 + self.h <= other.y0 or other.y0 + other.h <= self.y0)

    @property
    def slices(self):
        return slice(self.y0, self.y0 + self.h), slice(self.x0, self.x0 + self.w)


def check_areas(areas, geometry: FrameGeometry | None = None) -> None:
    areas = list(areas)
    for i, a in enumerate(areas):
        if geometry is not None and not a.inside(geometry):
            raise ValueError(f"binning area {i} lies outside the frame")
        for j in range(i):
            if a.overlaps(areas[j]):
                raise ValueError(f"binning areas {j} and {i} overlap")


# --------------------------------------------------------------------------
# PSF

def _gauss(u, sigma):
    return np.exp(-0.5 * (u / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


def _smoothed_exponential(s, decay, sigma):
    # two-sided exponential (unit integral) convolved with N(0, sigma)
    a = sigma / decay
    r = s / sigma
    lo = 0.5 * a * a - s / decay + special.log_ndtr(r - a)
    hi = 0.5 * a * a + s / decay + special.log_ndtr(-r - a)
    return (np.exp(lo) + np.exp(hi)) / (2 * decay)


def psf_intensity(psf: PsfModel, dx, dy):
    """Intensity density (1/pixel^2) at offset (dx, dy) from the source."""
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    s = psf.core_sigma
    core = _gauss(dx, s) * _gauss(dy, s)
    if psf.spike_fraction == 0:
        return core
    c, si = math.cos(psf.spike_angle), math.sin(psf.spike_angle)
    along = dx * c + dy * si
    across = -dx * si + dy * c
    ridges = 0.5 * (_smoothed_exponential(along, psf.spike_decay, s) * _gauss(across, s)
                    + _smoothed_exponential(across, psf.spike_decay, s) * _gauss(along, s))
    return (1 - psf.spike_fraction) * core + psf.spike_fraction * ridges


def _subpixel_offsets(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def roi_fraction(psf: PsfModel, site: IonSite, area: BinningArea,
                 geometry: FrameGeometry | None = None, subsample: int = SUBSAMPLE) -> float:
    """Fraction of the site's light landing in ``area``.

    Pixel (i, j) covers [i, i+1) x [j, j+1); each pixel is integrated with a
    ``subsample`` x ``subsample`` midpoint rule.
    """
    if geometry is not None and not area.inside(geometry):
        raise ValueError("binning area lies outside the frame")
    off = _subpixel_offsets(subsample)
    xs = (area.x0 + np.arange(area.w)[:, None] + off[None, :]).ravel() - site.x
    ys = (area.y0 + np.arange(area.h)[:, None] + off[None, :]).ravel() - site.y
    vals = psf_intensity(psf, xs[None, :], ys[:, None])
    return float(vals.sum() / subsample**2)


def crosstalk_fraction(psf: PsfModel, site: IonSite, own: BinningArea, others) -> float:
    """Light in the other areas over light in all areas, for one site."""
    own_f = roi_fraction(psf, site, own)
    wrong = sum(roi_fraction(psf, site, a) for a in others)
    return wrong / (own_f + wrong)


def expected_image(geometry: FrameGeometry, psf: PsfModel, sites, brightness,
                   subsample: int = 1) -> np.ndarray:
    """Expected photoelectrons per pixel, shape (height, width)."""
    sites = list(sites)
    brightness = np.broadcast_to(np.asarray(brightness, dtype=float), (len(sites),))
    off = _subpixel_offsets(subsample)
    xs = (np.arange(geometry.width)[:, None] + off[None, :]).ravel()
    ys = (np.arange(geometry.height)[:, None] + off[None, :]).ravel()
    img = np.zeros((geometry.height, geometry.width))
    for site, b in zip(sites, brightness):
        if not (0 <= site.x < geometry.width and 0 <= site.y < geometry.height):
            raise ValueError(f"site {site} outside the frame")
        if b == 0:
            continue
        vals = psf_intensity(psf, xs[None, :] - site.x, ys[:, None] - site.y)
        if subsample > 1:
            vals = vals.reshape(geometry.height, subsample, geometry.width, subsample).mean(axis=(1, 3))
        img += b * vals
    return img


def area_sums(image: np.ndarray, areas) -> np.ndarray:
    return np.array([image[a.slices].sum() for a in areas])


def binned_readout(image: np.ndarray, areas, emccd: EmccdModel, seed=None, size=None):
    """Hardware-binned camera counts, one per area.

    The expected photoelectrons of each area are Poisson-sampled as a whole
    and amplified once, so every area carries a single read-noise sample.
    """
    areas = list(areas)
    check_areas(areas)
    rng = np.random.default_rng(seed)
    mu = area_sums(image, areas)
    shape = (len(areas),) if size is None else tuple(np.atleast_1d(size)) + (len(areas),)
    pe = rng.poisson(np.broadcast_to(mu, shape))
    return amplify(pe, emccd, rng)


def software_binned_readout(image: np.ndarray, area: BinningArea, emccd: EmccdModel,
                            seed=None, size=None):
    """Sum of individually read pixels; each pixel gets its own read noise
    and baseline. For comparison with :func:`binned_readout` only."""
    rng = np.random.default_rng(seed)
    mu = image[area.slices]
    shape = mu.shape if size is None else (size,) + mu.shape
    pe = rng.poisson(np.broadcast_to(mu, shape))
    pix = amplify(pe, emccd, rng)
    return pix.sum(axis=(-2, -1))


# --------------------------------------------------------------------------
# Default two-ion layout

def ion_pair(geometry: FrameGeometry, separation_px: float, axis_angle: float = math.pi / 2,
             center=None) -> tuple[IonSite, IonSite]:
    """Two sites separated along ``axis_angle`` (pi/2 is the frame's y axis)."""
    cx, cy = center if center is not None else (geometry.width / 2, geometry.height / 2)
    hx = 0.5 * separation_px * math.cos(axis_angle)
    hy = 0.5 * separation_px * math.sin(axis_angle)
    return IonSite(cx - hx, cy - hy), IonSite(cx + hx, cy + hy)


def square_areas(sites, separation_px: float, gap: int = 5, max_side: int = 30):
    """Square areas centred on each site, shrunk so neighbours keep ``gap``."""
    side = int(min(max_side, math.floor(separation_px - gap)))
    if side <= 0:
        raise ValueError("ions too close for the requested gap")
    return [BinningArea(int(round(s.x - side / 2)), int(round(s.y - side / 2)), side, side)
            for s in sites]


# --------------------------------------------------------------------------
# Serialization

def save_image(image: np.ndarray, path, geometry: FrameGeometry | None = None) -> None:
    """Little-endian float32 grid behind a 16-byte header; JSON sidecar holds
    the geometry."""
    image = np.asarray(image, dtype="<f4")
    h, w = image.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IIII", w, h, 0, 0))
        fh.write(image.tobytes(order="C"))
    if geometry is not None:
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(asdict(geometry), indent=2) + "\n")


def load_image(path) -> tuple[np.ndarray, FrameGeometry | None]:
    path = Path(path)
    raw = path.read_bytes()
    w, h, _, _ = struct.unpack("<IIII", raw[:16])
    data = np.frombuffer(raw[16:], dtype="<f4")
    if data.size != w * h:
        raise ValueError("image payload does not match header dimensions")
    sidecar = path.with_suffix(path.suffix + ".json")
    geometry = FrameGeometry(**json.loads(sidecar.read_text())) if sidecar.exists() else None
    return data.reshape(h, w).copy(), geometry


def areas_to_json(areas) -> str:
    return json.dumps([asdict(a) for a in areas])


def areas_from_json(text: str):
    return [BinningArea(**{k: int(d[k]) for k in ("x0", "y0", "w", "h")}) for d in json.loads(text)]
