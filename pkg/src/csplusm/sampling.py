"""Variable-density random Cartesian k-t undersampling."""

from __future__ import annotations

import math

import numpy as np

from .core import DataError, SamplingMask


def row_weights(height: int, density_power: float) -> np.ndarray:
    """Unnormalized selection weight (1 - |r|/r_max)^p of each phase-encode row.

    ``r`` is the offset from the center row ``height // 2``. ``r_max`` is one
    past the largest offset so the outermost rows keep a small nonzero chance.
    """
    r = np.abs(np.arange(height) - height // 2)
    r_max = r.max() + 1.0
    return (1.0 - r / r_max) ** density_power


def center_block(height: int, center_lines: int) -> np.ndarray:
    lo = height // 2 - center_lines // 2
    return np.arange(lo, lo + center_lines)


def make_mask(frames: int, height: int, width: int, accel: float, center_lines: int = 8,
              density_power: float = 3.0, seed: int = 0, vary_frames: bool = True) -> SamplingMask:
    """Draw a line mask with ``round(height / accel)`` phase-encode rows per frame.

    The ``center_lines`` rows nearest the k-space center are always acquired;
    the rest are drawn without replacement with probability proportional to
    :func:`row_weights`. Frame ``k`` uses the generator seeded with
    ``seed ^ k``; with ``vary_frames=False`` frame 0's rows are reused for
    every frame.
    """
    if frames < 1 or height < 1 or width < 1:
        raise DataError("mask dimensions must be positive")
    if not accel > 1:
        raise DataError(f"acceleration must exceed 1, got {accel}")
    if center_lines < 0 or density_power < 0:
        raise DataError("center_lines and density_power must be nonnegative")
    n_rows = max(1, int(round(height / accel)))
    if center_lines > math.ceil(height / accel) or (center_lines > 0 and accel > height / center_lines):
        raise DataError(
            f"infeasible: {center_lines} central lines cannot fit acceleration {accel} on {height} rows")
    n_rows = max(n_rows, center_lines)
    achieved = height / n_rows
    if abs(achieved - accel) > 0.05 * accel:
        raise DataError(f"acceleration {accel} is not reachable on {height} rows (nearest {achieved:.3f})")

    center = center_block(height, center_lines)
    outer = np.setdiff1d(np.arange(height), center)
    w = row_weights(height, density_power)[outer]
    p = w / w.sum()
    extra = n_rows - center_lines

    data = np.zeros((frames, height, width), dtype=np.uint8)
    for k in range(frames):
        if k == 0 or vary_frames:
            rng = np.random.default_rng(seed ^ k)
            picked = rng.choice(outer, size=extra, replace=False, p=p) if extra > 0 else outer[:0]
            rows = np.concatenate([center, picked])
        data[k, rows, :] = 1
    return SamplingMask(data, accel, seed, center_lines, density_power)
