"""Image-quality metrics: SSIM, sLMSE and RMSE on magnitude images."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import DataError, ImageSequence

C1 = 0.01 ** 2
C2 = 0.03 ** 2


def _pair(u, u_hat) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u)
    u_hat = np.asarray(u_hat)
    if np.iscomplexobj(u) or np.iscomplexobj(u_hat):
        raise DataError("metrics take real (magnitude) images")
    if u.shape != u_hat.shape:
        raise DataError(f"image shapes differ: {u.shape} vs {u_hat.shape}")
    if u.size == 0:
        raise DataError("empty image")
    return u.astype(np.float64), u_hat.astype(np.float64)


def ssim(u, u_hat, c1: float = C1, c2: float = C2, window: int = 8,
         scale: Optional[float] = None) -> float:
    """Mean SSIM over all ``window`` x ``window`` windows (uniform weights).

    Both images are divided by ``scale`` first, by default ``max|u|`` of the
    reference ``u``. Local variances and covariance use the 1/n convention.
    """
    u, v = _pair(u, u_hat)
    if u.ndim != 2:
        raise DataError(f"ssim expects 2-D images, got {u.shape}")
    if min(u.shape) < window:
        raise DataError(f"image {u.shape} is smaller than the {window}x{window} window")
    if scale is None:
        scale = float(np.max(np.abs(u)))
    if scale > 0:
        u = u / scale
        v = v / scale
    wu = sliding_window_view(u, (window, window))
    wv = sliding_window_view(v, (window, window))
    ax = (-2, -1)
    mu_u = wu.mean(axis=ax)
    mu_v = wv.mean(axis=ax)
    du = wu - mu_u[..., None, None]
    dv = wv - mu_v[..., None, None]
    var_u = (du * du).mean(axis=ax)
    var_v = (dv * dv).mean(axis=ax)
    cov = (du * dv).mean(axis=ax)
    num = (2 * mu_u * mu_v + c1) * (2 * cov + c2)
    den = (mu_u ** 2 + mu_v ** 2 + c1) * (var_u + var_v + c2)
    return float(np.mean(num / den))


def _lmse(u: np.ndarray, v: np.ndarray, patch: int, step: int) -> float:
    d = (u - v) ** 2
    total = 0.0
    h, w = d.shape
    for i in range(0, h - patch + 1, step):
        for j in range(0, w - patch + 1, step):
            total += d[i:i + patch, j:j + patch].sum()
    return total


def slmse(u, u_hat, patch: int = 20, step: int = 10, raw: bool = False) -> float:
    """Inverted localized MSE: 1 - LMSE(u, u_hat) / LMSE(u, 0).

    LMSE sums squared errors over ``patch`` x ``patch`` patches placed every
    ``step`` pixels. 1 means a perfect match. ``raw=True`` returns the plain
    ratio LMSE(u, u_hat) / LMSE(u, 0) instead (0 means perfect).
    """
    u, v = _pair(u, u_hat)
    if u.ndim != 2:
        raise DataError(f"slmse expects 2-D images, got {u.shape}")
    if u.shape[0] < patch or u.shape[1] < patch:
        raise DataError(f"image {u.shape} is smaller than one {patch}x{patch} patch")
    ref = _lmse(u, np.zeros_like(u), patch, step)
    if ref == 0:
        raise DataError("reference image is zero on every patch")
    ratio = _lmse(u, v, patch, step) / ref
    return ratio if raw else 1.0 - ratio


def rmse(u, u_hat) -> float:
    u = np.asarray(u)
    u_hat = np.asarray(u_hat)
    if u.shape != u_hat.shape:
        raise DataError(f"image shapes differ: {u.shape} vs {u_hat.shape}")
    return float(np.sqrt(np.mean(np.abs(u - u_hat) ** 2)))


@dataclass
class MetricReport:
    ssim: float
    slmse: float
    rmse: float
    per_frame: list = field(default_factory=list)

    def row(self, method: str, accel) -> dict:
        return {"method": method, "accel": accel, "ssim": self.ssim,
                "slmse": self.slmse, "rmse": self.rmse}


def _as_frames(x) -> np.ndarray:
    arr = np.abs(x.data) if isinstance(x, ImageSequence) else np.abs(np.asarray(x))
    if arr.ndim == 2:
        arr = arr[None]
    return arr


def evaluate(gold, recon) -> MetricReport:
    """Frame-averaged SSIM and sLMSE plus RMSE between magnitude sequences.

    SSIM uses the gold standard's sequence-wide maximum as the common scale.
    """
    g = _as_frames(gold)
    r = _as_frames(recon)
    if g.shape != r.shape:
        raise DataError(f"sequence shapes differ: {g.shape} vs {r.shape}")
    scale = float(g.max())
    per = []
    for gk, rk in zip(g, r):
        per.append((ssim(gk, rk, scale=scale), slmse(gk, rk), rmse(gk, rk)))
    arr = np.array(per)
    return MetricReport(float(arr[:, 0].mean()), float(arr[:, 1].mean()), rmse(g, r), per)


def temporal_profile(u, region: tuple[int, int, int, int]) -> np.ndarray:
    """Mean |u| inside ``region = (row0, row1, col0, col1)`` (half-open) per frame."""
    arr = _as_frames(u)
    r0, r1, c0, c1 = region
    _, h, w = arr.shape
    if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
        raise DataError(f"region {region} lies outside the {h}x{w} image")
    return arr[:, r0:r1, c0:c1].mean(axis=(1, 2))
