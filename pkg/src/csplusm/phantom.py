"""Synthetic dynamic phantoms, coil sensitivities and simulated acquisition.

The cine phantom is a body ellipse containing a myocardial ellipse, a bright
blood pool whose semi-axes oscillate sinusoidally, and two dark papillary
discs that move with the contraction. Shapes are rasterized with 2x2
supersampling. Magnitudes lie in [0, 1]; a smooth polynomial phase makes the
image genuinely complex.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import CoilMaps, DataError, ImageSequence, KSpaceData, SamplingMask
from .operators import encode_array, ifft2c

KINDS = ("cine", "perfusion", "static")

BODY = 0.45
MYOCARDIUM = 0.25
BLOOD = 1.0
PAPILLARY = 0.3
SUPERSAMPLE = 2


@dataclass(frozen=True)
class PhantomSpec:
    kind: str = "cine"
    frames: int = 24
    height: int = 128
    width: int = 128
    motion_amplitude: float = 6.0
    period: int = 24
    uptake_rate: float = 0.15
    seed: int = 0
    resp_amplitude: float = 0.0
    resp_period: int = 120

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown phantom kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.frames < 1:
            raise DataError("frames must be positive")
        if self.kind in ("cine", "perfusion") and self.frames < 2:
            raise DataError(f"{self.kind} phantoms need at least 2 frames")
        if self.height < 16 or self.width < 16:
            raise DataError("phantom grid must be at least 16x16")
        if self.motion_amplitude < 0 or self.resp_amplitude < 0:
            raise DataError("motion amplitudes must be nonnegative")
        if self.period < 1 or self.resp_period < 1:
            raise DataError("periods must be positive")
        if self.uptake_rate <= 0:
            raise DataError("uptake_rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CineGeometry:
    """Shape parameters of one frame, in pixel units."""

    cx: float
    cy: float
    a: float  # blood-pool semi-axis along x
    b: float  # blood-pool semi-axis along y
    wall: float
    papillary: tuple
    pap_radius: float
    shift_y: float


def _phase_angle(k: int, period: int) -> float:
    # k mod period keeps frames k and k + period bitwise identical
    return 2.0 * np.pi * (k % period) / period


def geometry(spec: PhantomSpec, k: int) -> CineGeometry:
    h, w = spec.height, spec.width
    s = min(h, w)
    a0, b0 = 0.17 * s, 0.14 * s
    if spec.kind == "cine":
        osc = np.sin(_phase_angle(k, spec.period))
    else:
        osc = 0.0
    a = a0 + spec.motion_amplitude * osc
    b = b0 + 0.8 * spec.motion_amplitude * osc
    shift = 0.0
    if spec.kind != "static" and spec.resp_amplitude > 0:
        shift = spec.resp_amplitude * np.sin(_phase_angle(k, spec.resp_period))
    cx = (w - 1) / 2.0 - 0.04 * w
    cy = (h - 1) / 2.0 + shift
    paps = ((cx + 0.45 * a, cy + 0.55 * b), (cx - 0.35 * a, cy + 0.6 * b))
    return CineGeometry(cx, cy, max(a, 1.0), max(b, 1.0), 0.07 * s, paps, 0.035 * s, shift)


def _subpixel_grid(h: int, w: int):
    n = SUPERSAMPLE
    off = (np.arange(n) + 0.5) / n - 0.5
    ys = (np.arange(h)[:, None] + off[None, :]).ravel()
    xs = (np.arange(w)[:, None] + off[None, :]).ravel()
    return np.meshgrid(ys, xs, indexing="ij")


def _downsample(img: np.ndarray, h: int, w: int) -> np.ndarray:
    n = SUPERSAMPLE
    return img.reshape(h, n, w, n).mean(axis=(1, 3))


def _in_ellipse(yy, xx, cy, cx, ry, rx):
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def blood_pool_fraction(spec: PhantomSpec, k: int) -> np.ndarray:
    """Supersampled coverage of the blood-pool ellipse (papillary discs included)."""
    g = geometry(spec, k)
    yy, xx = _subpixel_grid(spec.height, spec.width)
    inside = _in_ellipse(yy, xx, g.cy, g.cx, g.b, g.a).astype(np.float64)
    return _downsample(inside, spec.height, spec.width)


def _gamma_variate(k: int, rate: float, alpha: float = 3.0) -> float:
    t_peak = 1.0 / rate
    t = k / t_peak
    return float(t ** alpha * np.exp(alpha * (1.0 - t)))


def _magnitude_frame(spec: PhantomSpec, k: int, yy, xx) -> np.ndarray:
    h, w = spec.height, spec.width
    g = geometry(spec, k)
    img = np.zeros(yy.shape)
    img[_in_ellipse(yy, xx, (h - 1) / 2.0 + g.shift_y, (w - 1) / 2.0, 0.40 * h, 0.44 * w)] = BODY
    img[_in_ellipse(yy, xx, g.cy, g.cx, g.b + g.wall, g.a + g.wall)] = MYOCARDIUM
    blood = BLOOD
    if spec.kind == "perfusion":
        blood = 0.15 + 0.85 * _gamma_variate(k, spec.uptake_rate)
    img[_in_ellipse(yy, xx, g.cy, g.cx, g.b, g.a)] = blood
    for px, py in g.papillary:
        img[_in_ellipse(yy, xx, py, px, g.pap_radius, g.pap_radius)] = PAPILLARY
    return _downsample(img, h, w)


def smooth_phase(height: int, width: int, seed: int) -> np.ndarray:
    """Low-order polynomial phase map in radians."""
    rng = np.random.default_rng(seed)
    coef = rng.uniform(-0.4, 0.4, size=6)
    y = np.linspace(-1.0, 1.0, height)[:, None]
    x = np.linspace(-1.0, 1.0, width)[None, :]
    return np.pi * (coef[0] + coef[1] * x + coef[2] * y + coef[3] * x * y
                    + 0.5 * coef[4] * x ** 2 + 0.5 * coef[5] * y ** 2)


def generate_magnitude(spec: PhantomSpec) -> np.ndarray:
    yy, xx = _subpixel_grid(spec.height, spec.width)
    if spec.kind == "static":
        f0 = _magnitude_frame(spec, 0, yy, xx)
        return np.repeat(f0[None], spec.frames, axis=0)
    return np.stack([_magnitude_frame(spec, k, yy, xx) for k in range(spec.frames)])


def generate_phantom(spec: PhantomSpec) -> ImageSequence:
    """Complex phantom sequence, deterministic in ``spec``."""
    mag = generate_magnitude(spec)
    phase = np.exp(1j * smooth_phase(spec.height, spec.width, spec.seed))
    return ImageSequence(mag * phase[None])


def generate_coilmaps(coils: int, height: int, width: int, seed: int = 0) -> CoilMaps:
    """Gaussian coil profiles around the image border with smooth linear phase.

    Coil c sits at angle pi/4 + 2*pi*c/coils on the circle through the
    midpoints of the image edges. The maps are normalized jointly so that
    sum_c |c|^2 = 1 at every pixel.
    """
    if coils < 1:
        raise DataError("need at least one coil")
    if height < 1 or width < 1:
        raise DataError("coil map grid must be non-empty")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    radius = 0.5 * max(height, width)
    width_px = 0.45 * max(height, width)
    maps = np.empty((coils, height, width), dtype=np.complex128)
    for c in range(coils):
        ang = np.pi / 4 + 2 * np.pi * c / coils
        py, px = cy - radius * np.sin(ang), cx + radius * np.cos(ang)
        prof = np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2 * width_px ** 2))
        sx, sy, p0 = rng.uniform(-1.0, 1.0, size=3)
        ph = np.pi * (sx * (xx - cx) / width + sy * (yy - cy) / height + p0)
        maps[c] = prof * np.exp(1j * ph)
    sos = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return CoilMaps(maps / sos[None])


def full_mask(frames: int, height: int, width: int) -> SamplingMask:
    # accel_requested must exceed 1; a full mask reports the smallest value above it
    return SamplingMask(np.ones((frames, height, width), dtype=np.uint8), np.nextafter(1.0, 2.0))


def acquire(u_true: ImageSequence, maps: CoilMaps, mask: SamplingMask, noise_sigma: float = 0.0,
            seed: int = 0) -> KSpaceData:
    """Encode ``u_true`` and add complex Gaussian noise at sampled positions only.

    The noise has E|n|^2 = noise_sigma^2 (noise_sigma / sqrt(2) per real part).
    """
    if noise_sigma < 0:
        raise DataError("noise_sigma must be nonnegative")
    y = encode_array(np.asarray(u_true.data, dtype=np.complex128), maps.data, mask.data)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        n = rng.standard_normal(y.shape + (2,)) * (noise_sigma / np.sqrt(2.0))
        y += (n[..., 0] + 1j * n[..., 1]) * mask.data[:, None]
    return KSpaceData(y, mask, noise_sigma)


def undersample(y_full: KSpaceData, mask: SamplingMask) -> KSpaceData:
    """Retrospectively keep only the entries selected by ``mask``."""
    if mask.data.shape != y_full.mask.data.shape:
        raise DataError("mask does not match k-space grid")
    if np.any(mask.data > y_full.mask.data):
        raise DataError("mask selects entries that were not acquired")
    return KSpaceData(y_full.data * mask.data[:, None], mask, y_full.noise_sigma)


def coil_images(y: KSpaceData) -> np.ndarray:
    return ifft2c(y.data)
