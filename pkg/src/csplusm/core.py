"""Domain types and the on-disk dataset container.

All arrays are row-major with the frame axis outermost. Types are immutable:
the wrapped arrays are private read-only copies and every invariant is
checked at construction, so a value that exists is a valid value.

Container layout::

    bytes 0-7   magic b"CSMD0001"
    bytes 8-11  header length, uint32 little-endian
    ...         UTF-8 JSON header {kind, dtype, shape, extras}
    ...         raw little-endian payload, row-major

Complex data is written as interleaved float32 pairs ("c64"), real data as
float32 ("f32"), masks as uint8 ("u8"). In memory everything is 64-bit.
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import numpy as np

MAGIC = b"CSMD0001"
MAX_DIM = 2**31 - 1
SOS_TOL = 1e-10
# float32 storage perturbs |c|^2 sums by a few ulp of float32
SOS_TOL_STORED = 1e-5


class CsmError(Exception):
    """Base class for all package errors."""


class DataError(CsmError, ValueError):
    """A value violates a type invariant or dimensions are inconsistent."""


class FormatError(DataError):
    """A container file is malformed."""


class SolverError(CsmError, RuntimeError):
    """An iterative solver was misconfigured or diverged."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{what} contains non-finite values")


@dataclass(frozen=True, eq=False)
class ImageSequence:
    """Dynamic image stack, shape (frames, height, width).

    Complex for reconstructions, real for magnitude images such as the
    sum-of-squares gold standard.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise DataError(f"ImageSequence needs (frames, height, width), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DataError(f"ImageSequence has an empty axis: {arr.shape}")
        dtype = np.complex128 if np.iscomplexobj(arr) else np.float64
        arr = arr.astype(dtype, copy=False)
        _check_finite(arr, "ImageSequence")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    def magnitude(self) -> "ImageSequence":
        return ImageSequence(np.abs(self.data))


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Binary k-t sampling pattern, shape (frames, height, width)."""

    data: np.ndarray
    accel_requested: float
    seed: int = 0
    center_lines: int | None = None
    density_power: float | None = None

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise DataError(f"SamplingMask needs (frames, height, width), got shape {arr.shape}")
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        if not np.all((arr == 0) | (arr == 1)):
            raise DataError("SamplingMask values must be 0 or 1")
        if not arr.any():
            raise DataError("SamplingMask samples nothing")
        if not self.accel_requested > 1:
            raise DataError(f"accel_requested must exceed 1, got {self.accel_requested}")
        achieved = arr.size / float(arr.sum())
        if abs(achieved - self.accel_requested) > 0.05 * self.accel_requested:
            raise DataError(f"achieved acceleration {achieved:.3f} is not within 5% of "
                            f"the requested {self.accel_requested}")
        object.__setattr__(self, "data", _frozen(arr.astype(np.uint8)))
        object.__setattr__(self, "accel_requested", float(self.accel_requested))
        object.__setattr__(self, "seed", int(self.seed))
        if self.center_lines is not None:
            c = int(self.center_lines)
            object.__setattr__(self, "center_lines", c)
            h = arr.shape[1]
            lo = h // 2 - c // 2
            if c > 0 and not np.all(arr[:, lo:lo + c, :] == 1):
                raise DataError("central phase-encode block is not fully sampled in every frame")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def achieved_accel(self) -> float:
        return self.data.size / float(self.data.sum())

    def rows(self, frame: int) -> np.ndarray:
        """Indices of phase-encode rows that are fully sampled in ``frame``."""
        return np.flatnonzero(self.data[frame].all(axis=1))

    def is_line_mask(self) -> bool:
        d = self.data
        return bool(np.all(d.all(axis=2) | ~d.any(axis=2)))


@dataclass(frozen=True, eq=False)
class KSpaceData:
    """Per-frame, per-coil k-space, shape (frames, coils, height, width)."""

    data: np.ndarray
    mask: SamplingMask
    noise_sigma: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 4:
            raise DataError(f"KSpaceData needs (frames, coils, height, width), got shape {arr.shape}")
        m = self.mask.data
        if (arr.shape[0],) + arr.shape[2:] != m.shape:
            raise DataError(f"k-space shape {arr.shape} does not match mask shape {m.shape}")
        arr = arr.astype(np.complex128, copy=False)
        _check_finite(arr, "KSpaceData")
        if np.any((arr != 0) & (m == 0)[:, None, :, :]):
            raise DataError("KSpaceData has nonzero entries at unsampled positions")
        if not self.noise_sigma >= 0:
            raise DataError("noise_sigma must be nonnegative")
        object.__setattr__(self, "data", _frozen(arr))
        object.__setattr__(self, "noise_sigma", float(self.noise_sigma))

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def coils(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True, eq=False)
class FlowField:
    """Displacement per frame pair, shape (pairs, height, width, 2).

    Component 0 is the column (x) displacement, component 1 the row (y)
    displacement, both in pixels per frame.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 4 or arr.shape[-1] != 2:
            raise DataError(f"FlowField needs (pairs, height, width, 2), got shape {arr.shape}")
        if np.iscomplexobj(arr):
            raise DataError("FlowField must be real")
        arr = arr.astype(np.float64, copy=False)
        _check_finite(arr, "FlowField")
        object.__setattr__(self, "data", _frozen(arr))

    @classmethod
    def from_components(cls, v: np.ndarray) -> "FlowField":
        """Build from the solver layout (pairs, 2, height, width)."""
        return cls(np.moveaxis(v, -3, -1))

    def components(self) -> np.ndarray:
        """Solver layout (pairs, 2, height, width), a writable copy."""
        return np.ascontiguousarray(np.moveaxis(self.data, -1, -3))

    @property
    def pairs(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class CoilMaps:
    """Complex receive sensitivities, shape (coils, height, width), SoS-normalized."""

    data: np.ndarray
    tol: float = field(default=SOS_TOL, repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise DataError(f"CoilMaps needs (coils, height, width), got shape {arr.shape}")
        arr = arr.astype(np.complex128, copy=False)
        _check_finite(arr, "CoilMaps")
        sos = np.sum(np.abs(arr) ** 2, axis=0)
        err = np.max(np.abs(sos - 1.0))
        if err > self.tol:
            raise DataError(f"coil maps are not SoS-normalized (max |sum|c|^2 - 1| = {err:.3g})")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def coils(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ModelParams:
    """Weights of the joint objective and the outer-loop controls.

    ``gamma`` weights image TV, ``beta`` the motion-constraint residual and
    ``delta`` the flow TV. ``normalize_derror`` selects the per-element mean
    (default) or the raw sum of absolute differences for the stopping test.
    """

    gamma: float = 0.05
    delta: float = 0.001
    beta: float = 0.02
    zeta_stop: float = 1e-5
    max_outer: int = 10
    normalize_derror: bool = True

    def __post_init__(self):
        for name in ("gamma", "delta", "beta"):
            if not getattr(self, name) >= 0:
                raise DataError(f"{name} must be nonnegative")
        if not self.zeta_stop > 0:
            raise DataError("zeta_stop must be positive")
        if int(self.max_outer) < 1:
            raise DataError("max_outer must be at least 1")


@dataclass(frozen=True)
class SolverConfig:
    """Primal-dual step sizes and stopping rule.

    ``tau``/``sigma`` may be ``"auto"``: both become 1/||K|| from the power
    method.
    """

    tau: Union[float, str] = "auto"
    sigma: Union[float, str] = "auto"
    theta: float = 1.0
    max_inner: int = 300
    inner_tol: float = 1e-5

    def __post_init__(self):
        for name in ("tau", "sigma"):
            v = getattr(self, name)
            if isinstance(v, str):
                if v != "auto":
                    raise DataError(f"{name} must be a positive number or 'auto'")
            elif not v > 0:
                raise DataError(f"{name} must be positive")
        if not 0 <= self.theta <= 1:
            raise DataError("theta must lie in [0, 1]")
        if int(self.max_inner) < 1:
            raise DataError("max_inner must be at least 1")
        if not self.inner_tol >= 0:
            raise DataError("inner_tol must be nonnegative")

    @property
    def auto(self) -> bool:
        return self.tau == "auto" or self.sigma == "auto"


Payload = Union[ImageSequence, KSpaceData, SamplingMask, FlowField, CoilMaps]

_KINDS = {
    ImageSequence: "image",
    KSpaceData: "kspace",
    SamplingMask: "mask",
    FlowField: "flow",
    CoilMaps: "coils",
}
_DTYPES = {"c64": (np.dtype("<f4"), 8), "f32": (np.dtype("<f4"), 4), "u8": (np.dtype("u1"), 1)}


def _mask_extras(mask: SamplingMask) -> dict[str, Any]:
    return {
        "accel_requested": mask.accel_requested,
        "seed": mask.seed,
        "center_lines": mask.center_lines,
        "density_power": mask.density_power,
    }


def _encode_payload(payload: Payload) -> tuple[str, np.ndarray, dict[str, Any]]:
    extras: dict[str, Any] = {}
    if isinstance(payload, ImageSequence):
        arr = payload.data
    elif isinstance(payload, KSpaceData):
        arr = payload.data
        m = payload.mask
        extras.update(_mask_extras(m))
        extras["noise_sigma"] = payload.noise_sigma
        extras["mask_shape"] = list(m.data.shape)
        extras["mask_bits"] = base64.b64encode(np.packbits(m.data.ravel()).tobytes()).decode("ascii")
    elif isinstance(payload, SamplingMask):
        arr = payload.data
        extras.update(_mask_extras(payload))
    elif isinstance(payload, FlowField):
        arr = payload.data
    elif isinstance(payload, CoilMaps):
        arr = payload.data
    else:
        raise DataError(f"cannot save object of type {type(payload).__name__}")
    if isinstance(payload, SamplingMask):
        dtype = "u8"
    elif np.iscomplexobj(arr):
        dtype = "c64"
    else:
        dtype = "f32"
    return dtype, arr, extras


def save_dataset(path: str | Path, payload: Payload, extras: dict[str, Any] | None = None) -> None:
    """Write ``payload`` to ``path`` in the container format.

    ``extras`` are merged into the header's ``extras`` object; keys the
    payload itself needs (mask metadata, noise level) take precedence.
    """
    dtype, arr, own = _encode_payload(payload)
    if any(d > MAX_DIM for d in arr.shape):
        raise DataError(f"dimension exceeds {MAX_DIM}: {arr.shape}")
    merged = dict(extras or {})
    merged.update(own)
    header = {
        "kind": _KINDS[type(payload)],
        "dtype": dtype,
        "shape": [int(d) for d in arr.shape],
        "extras": merged,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    if dtype == "c64":
        raw = np.empty(arr.shape + (2,), dtype="<f4")
        raw[..., 0] = arr.real
        raw[..., 1] = arr.imag
    else:
        raw = arr.astype(_DTYPES[dtype][0])
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(np.ascontiguousarray(raw).tobytes())


def read_header(path: str | Path) -> dict[str, Any]:
    """Parse and return only the JSON header of a container file."""
    with open(path, "rb") as fh:
        header, _ = _read_header(fh)
    return header


def _read_header(fh) -> tuple[dict[str, Any], int]:
    magic = fh.read(8)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    lb = fh.read(4)
    if len(lb) != 4:
        raise FormatError("truncated header length")
    (hlen,) = struct.unpack("<I", lb)
    hbytes = fh.read(hlen)
    if len(hbytes) != hlen:
        raise FormatError("truncated header")
    try:
        header = json.loads(hbytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object")
    for key in ("kind", "dtype", "shape"):
        if key not in header:
            raise FormatError(f"header lacks field {key!r}")
    if header["dtype"] not in _DTYPES:
        raise FormatError(f"unknown dtype {header['dtype']!r}")
    shape = header["shape"]
    if not isinstance(shape, list) or not all(isinstance(d, int) and 0 <= d <= MAX_DIM for d in shape):
        raise FormatError(f"invalid shape {shape!r}")
    header.setdefault("extras", {})
    return header, 12 + hlen


def load_dataset(path: str | Path) -> Payload:
    """Read a container file and re-validate the payload's invariants."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        header, _ = _read_header(fh)
        body = fh.read()
    dtype = header["dtype"]
    shape = tuple(header["shape"])
    np_dtype, itemsize = _DTYPES[dtype]
    expected = int(np.prod(shape, dtype=np.int64)) * itemsize
    if len(body) != expected:
        raise FormatError(f"payload has {len(body)} bytes, header implies {expected}")
    raw = np.frombuffer(body, dtype=np_dtype)
    if dtype == "c64":
        pairs = raw.reshape(shape + (2,)).astype(np.float64)
        arr = pairs[..., 0] + 1j * pairs[..., 1]
    elif dtype == "f32":
        arr = raw.reshape(shape).astype(np.float64)
    else:
        arr = raw.reshape(shape).copy()
    ex = header["extras"]
    kind = header["kind"]
    try:
        if kind == "image":
            return ImageSequence(arr)
        if kind == "mask":
            return SamplingMask(arr, ex["accel_requested"], ex.get("seed", 0),
                                ex.get("center_lines"), ex.get("density_power"))
        if kind == "kspace":
            mshape = tuple(ex["mask_shape"])
            bits = np.frombuffer(base64.b64decode(ex["mask_bits"]), dtype=np.uint8)
            mdata = np.unpackbits(bits)[: int(np.prod(mshape))].reshape(mshape)
            mask = SamplingMask(mdata, ex["accel_requested"], ex.get("seed", 0),
                                ex.get("center_lines"), ex.get("density_power"))
            return KSpaceData(arr, mask, ex.get("noise_sigma", 0.0))
        if kind == "flow":
            return FlowField(arr)
        if kind == "coils":
            return CoilMaps(arr, tol=SOS_TOL_STORED)
    except KeyError as exc:
        raise FormatError(f"header extras lack {exc}") from exc
    raise FormatError(f"unknown kind {kind!r}")
