"""Linear operators of the reconstruction model and their adjoints.

Array conventions: image sequences are (frames, height, width); vector
fields put their 2 components on axis -3, so a gradient of a (T, H, W) stack
is (T, 2, H, W) with component 0 = d/dx (along columns) and 1 = d/dy (along
rows). Fourier transforms are unitary and centered (zero frequency at index
n // 2 on each axis).
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.fft as sfft

from .core import CoilMaps, DataError, ImageSequence, KSpaceData, SamplingMask

Shape = tuple


class LinearOperator:
    """A linear map with an explicit adjoint.

    ``in_shape``/``out_shape`` are array shapes, or tuples of shapes for block
    operators whose values are tuples of arrays.
    """

    def __init__(self, apply: Callable, adjoint: Callable, in_shape: Shape, out_shape: Shape,
                 dtype=np.complex128, name: str = ""):
        self._apply = apply
        self._adjoint = adjoint
        self.in_shape = in_shape
        self.out_shape = out_shape
        self.dtype = np.dtype(dtype)
        self.name = name

    def __call__(self, x):
        return self._apply(x)

    def apply(self, x):
        return self._apply(x)

    def adjoint(self, y):
        return self._adjoint(y)

    @property
    def H(self) -> "LinearOperator":
        return LinearOperator(self._adjoint, self._apply, self.out_shape, self.in_shape,
                              self.dtype, f"{self.name}^H")

    def __repr__(self):
        return f"LinearOperator({self.name or '?'}: {self.in_shape} -> {self.out_shape})"


def is_block_shape(shape) -> bool:
    return len(shape) > 0 and isinstance(shape[0], tuple)


def stack(*ops: LinearOperator) -> LinearOperator:
    """Vertical stack [A; B; ...]: x -> (Ax, Bx, ...)."""
    in_shape = ops[0].in_shape
    for op in ops[1:]:
        if op.in_shape != in_shape:
            raise DataError(f"cannot stack operators with inputs {in_shape} and {op.in_shape}")

    def apply(x):
        return tuple(op.apply(x) for op in ops)

    def adjoint(ys):
        out = ops[0].adjoint(ys[0])
        for op, y in zip(ops[1:], ys[1:]):
            out = out + op.adjoint(y)
        return out

    dtype = np.result_type(*[op.dtype for op in ops])
    name = "[" + "; ".join(op.name or "?" for op in ops) + "]"
    return LinearOperator(apply, adjoint, in_shape, tuple(op.out_shape for op in ops), dtype, name)


def identity(shape: Shape, dtype=np.complex128) -> LinearOperator:
    return LinearOperator(lambda x: x.copy(), lambda y: y.copy(), shape, shape, dtype, "I")


def scaling(shape: Shape, alpha: float, dtype=np.complex128) -> LinearOperator:
    return LinearOperator(lambda x: alpha * x, lambda y: np.conj(alpha) * y, shape, shape, dtype,
                          f"{alpha}I")


# block-vector helpers shared with the solver

def vdot(a, b) -> complex:
    """<a, b> = sum conj(a) * b over arrays or tuples of arrays."""
    if isinstance(a, tuple):
        return sum(vdot(x, y) for x, y in zip(a, b))
    return np.vdot(a, b)


def norm(a) -> float:
    if isinstance(a, tuple):
        return float(np.sqrt(sum(norm(x) ** 2 for x in a)))
    return float(np.linalg.norm(a.ravel()))


def random_like(shape, rng: np.random.Generator, dtype=np.complex128):
    if is_block_shape(shape):
        return tuple(random_like(s, rng, dtype) for s in shape)
    x = rng.standard_normal(shape)
    if np.dtype(dtype).kind == "c":
        x = x + 1j * rng.standard_normal(shape)
    return x


def operator_norm(op: LinearOperator, iters: int = 100, seed: int = 0) -> float:
    """Power-method estimate of ||op|| = sqrt(largest eigenvalue of op^H op).

    Deterministic for a given seed; approaches the true norm from below.
    """
    if iters < 1:
        raise DataError("power method needs at least one iteration")
    rng = np.random.default_rng(seed)
    x = random_like(op.in_shape, rng, op.dtype)
    x = x / norm(x)
    est = 0.0
    for _ in range(iters):
        y = op.adjoint(op.apply(x))
        ny = norm(y)
        if ny == 0.0:
            return 0.0
        est = ny
        x = y / ny
    return float(np.sqrt(est))


# Fourier encoding

def fft2c(x: np.ndarray) -> np.ndarray:
    """Centered unitary 2-D DFT over the last two axes."""
    ax = (-2, -1)
    return sfft.fftshift(sfft.fft2(sfft.ifftshift(x, axes=ax), norm="ortho"), axes=ax)


def ifft2c(k: np.ndarray) -> np.ndarray:
    ax = (-2, -1)
    return sfft.fftshift(sfft.ifft2(sfft.ifftshift(k, axes=ax), norm="ortho"), axes=ax)


def _ifft1c(k: np.ndarray, axis: int) -> np.ndarray:
    return sfft.fftshift(sfft.ifft(sfft.ifftshift(k, axes=axis), axis=axis, norm="ortho"), axes=axis)


def _check_encoding_dims(frames_hw: tuple, maps: np.ndarray, mask: np.ndarray) -> None:
    t, h, w = frames_hw
    if maps.shape[1:] != (h, w):
        raise DataError(f"coil maps {maps.shape[1:]} do not match image grid {(h, w)}")
    if mask.shape != (t, h, w):
        raise DataError(f"mask shape {mask.shape} does not match image sequence {(t, h, w)}")


def encode_array(u: np.ndarray, maps: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """(T, H, W) image -> (T, C, H, W) masked k-space."""
    _check_encoding_dims(u.shape, maps, mask)
    k = fft2c(maps[None, :, :, :] * u[:, None, :, :])
    k *= mask[:, None, :, :]
    return k


def encode_adjoint_array(y: np.ndarray, maps: np.ndarray, mask: np.ndarray) -> np.ndarray:
    _check_encoding_dims((y.shape[0],) + y.shape[2:], maps, mask)
    if y.shape[1] != maps.shape[0]:
        raise DataError(f"k-space has {y.shape[1]} coils, maps have {maps.shape[0]}")
    img = ifft2c(y * mask[:, None, :, :])
    return np.sum(np.conj(maps)[None] * img, axis=1)


def encode(u: ImageSequence, maps: CoilMaps, mask: SamplingMask, noise_sigma: float = 0.0) -> KSpaceData:
    """Multi-coil Cartesian encoding y = mask * F(c * u) per frame and coil."""
    k = encode_array(np.asarray(u.data, dtype=np.complex128), maps.data, mask.data)
    return KSpaceData(k, mask, noise_sigma)


def encode_adjoint(y: KSpaceData, maps: CoilMaps) -> ImageSequence:
    """u = sum_c conj(c) * F^-1(mask * y_c) per frame."""
    return ImageSequence(encode_adjoint_array(y.data, maps.data, y.mask.data))


def encoding_operator(maps: np.ndarray, mask: np.ndarray) -> LinearOperator:
    t, h, w = mask.shape
    c = maps.shape[0]
    m = mask.astype(np.float64)
    return LinearOperator(lambda u: encode_array(u, maps, m),
                          lambda y: encode_adjoint_array(y, maps, m),
                          (t, h, w), (t, c, h, w), np.complex128, "A")


class LineEncoding:
    """Encoding restricted to the sampled phase-encode rows.

    Equivalent to :func:`encode_array` up to a fixed unitary map on the
    measurement space: only an FFT along y is taken and only the sampled
    rows are kept (as a partial DFT matrix), with the x-direction transform
    and the centering phase moved onto the data. Residual norms, ``A^H A`` and ``A^H y`` are
    unchanged, so a solver run on this representation produces the same
    image iterates at about a third of the cost.

    Requires a line mask with the same number of rows in every frame.
    """

    def __init__(self, maps: np.ndarray, mask: np.ndarray):
        t, h, w = mask.shape
        full_rows = mask.all(axis=2)
        if not np.all(full_rows | ~mask.any(axis=2)):
            raise DataError("LineEncoding needs a line (full-row) mask")
        counts = full_rows.sum(axis=1)
        if not np.all(counts == counts[0]):
            raise DataError("LineEncoding needs equal row counts per frame")
        self.maps = maps
        self.conj_maps = np.conj(maps)
        self.shape = (t, h, w)
        self.coils = maps.shape[0]
        # centered row j <-> uncentered FFT index (j - h//2) mod h
        self.rows_c = np.stack([np.flatnonzero(r) for r in full_rows])
        self.rows_u = (self.rows_c - h // 2) % h
        # partial DFT along y: one (rows x H) matrix per frame
        n = np.arange(h)
        self._dft = np.exp(-2j * np.pi * self.rows_u[:, :, None] * n[None, None, :] / h) / np.sqrt(h)
        self._idft = np.ascontiguousarray(np.conj(np.swapaxes(self._dft, 1, 2)))
        self.phase = np.exp(2j * np.pi * self.rows_u * (h // 2) / h)[:, None, :, None]
        self.out_shape = (t, self.coils, self.rows_c.shape[1], w)

    def apply(self, u: np.ndarray) -> np.ndarray:
        z = self.maps[None] * u[:, None]
        return np.matmul(self._dft[:, None], z)

    def adjoint(self, r: np.ndarray) -> np.ndarray:
        z = np.matmul(self._idft[:, None], r)
        z *= self.conj_maps[None]
        return z.sum(axis=1)

    def to_range(self, y: np.ndarray) -> np.ndarray:
        """Map centered k-space data to this operator's measurement space."""
        rows = np.take_along_axis(y, self.rows_c[:, None, :, None], axis=2)
        return np.conj(self.phase) * _ifft1c(rows, axis=-1)

    def operator(self) -> LinearOperator:
        return LinearOperator(self.apply, self.adjoint, self.shape, self.out_shape,
                              np.complex128, "A")


class FullEncoding:
    """Same interface as :class:`LineEncoding` for arbitrary masks."""

    def __init__(self, maps: np.ndarray, mask: np.ndarray):
        self._op = encoding_operator(maps, mask)
        self.shape = mask.shape
        self.out_shape = self._op.out_shape

    def apply(self, u):
        return self._op.apply(u)

    def adjoint(self, r):
        return self._op.adjoint(r)

    def to_range(self, y):
        return np.asarray(y, dtype=np.complex128)

    def operator(self) -> LinearOperator:
        return self._op


def make_encoding(maps: np.ndarray, mask: np.ndarray):
    """Fastest exact encoding representation available for ``mask``."""
    try:
        return LineEncoding(maps, mask)
    except DataError:
        return FullEncoding(maps, mask)


# finite differences

def grad(img: np.ndarray) -> np.ndarray:
    """Forward differences with Neumann boundary; (..., H, W) -> (..., 2, H, W)."""
    img = np.asarray(img)
    if img.ndim < 2 or img.shape[-1] < 2 or img.shape[-2] < 2:
        raise DataError(f"gradient needs height and width >= 2, got {img.shape}")
    out = np.zeros(img.shape[:-2] + (2,) + img.shape[-2:], dtype=np.result_type(img, np.float64))
    np.subtract(img[..., :, 1:], img[..., :, :-1], out=out[..., 0, :, :-1])
    np.subtract(img[..., 1:, :], img[..., :-1, :], out=out[..., 1, :-1, :])
    return out


def div(p: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`grad`; (..., 2, H, W) -> (..., H, W)."""
    p = np.asarray(p)
    if p.ndim < 3 or p.shape[-3] != 2 or p.shape[-1] < 2 or p.shape[-2] < 2:
        raise DataError(f"divergence needs (..., 2, H>=2, W>=2), got {p.shape}")
    px = p[..., 0, :, :]
    py = p[..., 1, :, :]
    out = np.zeros(p.shape[:-3] + p.shape[-2:], dtype=p.dtype)
    out[..., :, :-1] += px[..., :, :-1]
    out[..., :, 1:] -= px[..., :, :-1]
    out[..., :-1, :] += py[..., :-1, :]
    out[..., 1:, :] -= py[..., :-1, :]
    return out


def gradient_operator(shape: Shape, dtype=np.complex128) -> LinearOperator:
    gshape = tuple(shape[:-2]) + (2,) + tuple(shape[-2:])
    return LinearOperator(grad, lambda p: -div(p), tuple(shape), gshape, dtype, "grad")


def temporal_diff_array(u: np.ndarray) -> np.ndarray:
    if u.shape[0] < 2:
        raise DataError("temporal difference needs at least two frames")
    return u[1:] - u[:-1]


def temporal_diff_adjoint(r: np.ndarray) -> np.ndarray:
    out = np.zeros((r.shape[0] + 1,) + r.shape[1:], dtype=r.dtype)
    out[1:] += r
    out[:-1] -= r
    return out


def temporal_diff(u: ImageSequence) -> np.ndarray:
    """u[k+1] - u[k] for each consecutive frame pair, shape (T-1, H, W)."""
    return temporal_diff_array(np.asarray(u.data))


def temporal_diff_operator(shape: Shape, dtype=np.complex128) -> LinearOperator:
    t = shape[0]
    return LinearOperator(temporal_diff_array, temporal_diff_adjoint, tuple(shape),
                          (t - 1,) + tuple(shape[1:]), dtype, "dt")


# motion coupling

def _check_flow(u_shape: tuple, v: np.ndarray) -> None:
    t, h, w = u_shape
    if v.shape != (t - 1, 2, h, w):
        raise DataError(f"flow components {v.shape} do not fit a sequence of shape {u_shape}")


def motion_apply(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """grad(u_k) . v_k + u_{k+1} - u_k for k = 0..T-2, flow in (T-1, 2, H, W)."""
    if u.shape[0] < 2:
        raise DataError("motion operator needs at least two frames")
    _check_flow(u.shape, v)
    g = grad(u[:-1])
    out = g[:, 0] * v[:, 0]
    out += g[:, 1] * v[:, 1]
    out += u[1:]
    out -= u[:-1]
    return out


def motion_adjoint(r: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = temporal_diff_adjoint(r)
    out[:-1] -= div(v * r[:, None])
    return out


def motion_op(u: ImageSequence, v) -> np.ndarray:
    """Motion-constraint residual of ``u`` under flow ``v``.

    ``v`` is a FlowField or an array in solver layout (pairs, 2, H, W). The
    real flow acts identically on the real and imaginary parts of ``u``.
    """
    comps = v.components() if hasattr(v, "components") else np.asarray(v, dtype=np.float64)
    return motion_apply(np.asarray(u.data), comps)


def motion_operator(v: np.ndarray, shape: Shape, dtype=np.complex128) -> LinearOperator:
    """u -> motion_apply(u, v) for a frozen flow ``v``."""
    t = shape[0]
    _check_flow(tuple(shape), v)
    return LinearOperator(lambda u: motion_apply(u, v), lambda r: motion_adjoint(r, v),
                          tuple(shape), (t - 1,) + tuple(shape[1:]), dtype, "M")


def flow_data_operator(g: np.ndarray) -> LinearOperator:
    """v -> g . v pointwise, for image gradients g of shape (..., 2, H, W)."""
    vshape = g.shape
    return LinearOperator(lambda v: g[..., 0, :, :] * v[..., 0, :, :] + g[..., 1, :, :] * v[..., 1, :, :],
                          lambda r: g * r[..., None, :, :],
                          vshape, vshape[:-3] + vshape[-2:], np.float64, "grad(u).")


def compose(*ops: LinearOperator) -> LinearOperator:
    """ops[0] o ops[1] o ... (rightmost applied first)."""
    def apply(x):
        for op in reversed(ops):
            x = op.apply(x)
        return x

    def adjoint(y):
        for op in ops:
            y = op.adjoint(y)
        return y

    return LinearOperator(apply, adjoint, ops[-1].in_shape, ops[0].out_shape, ops[0].dtype)
