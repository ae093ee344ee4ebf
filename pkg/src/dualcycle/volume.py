"""Dense 3D volumes, cross-sections, isotropic resampling and the RV1 file format.

Arrays are always indexed ``(z, y, x)``.  View A is blurred along ``z``
(axis 0) and View B along ``x`` (axis 2); every other module relies on this
mapping through :data:`AXIS_INDEX`.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import (
    BoundsError,
    FormatError,
    HeaderError,
    ParameterError,
    PayloadSizeError,
    UnsupportedVersionError,
)

AXIS_INDEX = {"z": 0, "y": 1, "x": 2}

# plane name -> axis held fixed by the slice
PLANE_AXIS = {"xy": "z", "xz": "y", "yz": "x"}

RV1_MAGIC = b"RAWVOL1\0"
RV1_VERSION = 1


@dataclass(frozen=True, eq=False)
class Volume3D:
    """An immutable 3D scalar field with voxel spacing in micrometers.

    ``data`` keeps float32 or float64 precision; any other dtype is promoted
    to float64.  The array is copied and marked read-only.
    """

    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    value_range_hint: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        arr = np.array(arr, copy=True, order="C")
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ParameterError(f"volume data must be 3D with all dims >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("volume data contains NaN or Inf")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 for s in spacing):
            raise ParameterError(f"spacing must be three positive values, got {self.spacing}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", spacing)
        if self.value_range_hint is not None:
            lo, hi = self.value_range_hint
            object.__setattr__(self, "value_range_hint", (float(lo), float(hi)))

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def with_data(self, data) -> "Volume3D":
        """Return a new volume with the same spacing and different values."""
        return Volume3D(data, self.spacing, self.value_range_hint)

    def __repr__(self):
        return f"Volume3D(shape={self.shape}, dtype={self.dtype}, spacing={self.spacing})"


@dataclass(frozen=True)
class SliceSpec:
    plane: str
    index: int

    def __post_init__(self):
        if self.plane not in PLANE_AXIS:
            raise ParameterError(f"plane must be one of {sorted(PLANE_AXIS)}, got {self.plane!r}")

    @property
    def axis(self) -> str:
        return PLANE_AXIS[self.plane]

    @classmethod
    def central(cls, v: Volume3D, plane: str) -> "SliceSpec":
        axis = AXIS_INDEX[PLANE_AXIS[plane]]
        return cls(plane, v.shape[axis] // 2)


def slice_array(arr: np.ndarray, plane: str, index: int) -> np.ndarray:
    axis_name = PLANE_AXIS[plane]
    axis = AXIS_INDEX[axis_name]
    n = arr.shape[axis]
    if not 0 <= index < n:
        raise BoundsError(axis_name, index, n)
    return np.take(arr, index, axis=axis)


def extract_slice(v: Volume3D, s: SliceSpec) -> np.ndarray:
    """Return the 2D cross-section of ``v`` described by ``s``.

    ``xy`` planes have shape ``(y, x)``, ``xz`` planes ``(z, x)`` and ``yz``
    planes ``(z, y)``.
    """
    return slice_array(v.data, s.plane, s.index).copy()


def max_intensity_projection(v: Volume3D, axis: str) -> np.ndarray:
    if axis not in AXIS_INDEX:
        raise ParameterError(f"axis must be one of z, y, x, got {axis!r}")
    return v.data.max(axis=AXIS_INDEX[axis])


def _linear_sample_axis(arr, axis, positions):
    """Clamp-to-edge linear interpolation of ``arr`` at fractional ``positions`` along ``axis``."""
    n = arr.shape[axis]
    pos = np.clip(np.asarray(positions, dtype=np.float64), 0.0, n - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    w = pos - lo
    shape = [1, 1, 1]
    shape[axis] = len(pos)
    w = w.reshape(shape)
    a = np.take(arr, lo, axis=axis)
    b = np.take(arr, hi, axis=axis)
    return a * (1.0 - w) + b * w


def isotropic_shape(shape, spacing, target_spacing):
    """Number of samples per axis after resampling to ``target_spacing``.

    The output grid starts on the first voxel centre and extends until it
    covers the last one.
    """
    out = []
    for n, s in zip(shape, spacing):
        ratio = (n - 1) * s / target_spacing
        out.append(int(math.ceil(ratio - 1e-9)) + 1 if n > 1 else 1)
    return tuple(out)


def resample_isotropic(v: Volume3D, target_spacing: float) -> Volume3D:
    """Trilinearly resample ``v`` onto an isotropic grid of ``target_spacing`` micrometers.

    Sample positions past the last input voxel centre are clamped to the edge.
    Single-voxel axes are carried over unchanged (nearest neighbour).
    """
    if not target_spacing > 0:
        raise ParameterError(f"target_spacing must be > 0, got {target_spacing}")
    target_spacing = float(target_spacing)
    if all(s == target_spacing for s in v.spacing):
        return Volume3D(v.data, (target_spacing,) * 3, v.value_range_hint)
    out_shape = isotropic_shape(v.shape, v.spacing, target_spacing)
    arr = v.data.astype(np.float64)
    for axis in range(3):
        if v.spacing[axis] == target_spacing or v.shape[axis] == 1:
            continue
        positions = np.arange(out_shape[axis]) * (target_spacing / v.spacing[axis])
        arr = _linear_sample_axis(arr, axis, positions)
    return Volume3D(arr.astype(v.dtype), (target_spacing,) * 3, v.value_range_hint)


# -- RV1 container ---------------------------------------------------------

def write_rv1(path, data: np.ndarray, spacing, extra: Optional[dict] = None):
    arr = np.ascontiguousarray(data, dtype="<f4")
    header = {
        "version": RV1_VERSION,
        "dims": [int(n) for n in arr.shape],
        "spacing": [float(s) for s in spacing],
        "dtype": "f32le",
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(RV1_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(arr.tobytes(order="C"))


def read_rv1(path):
    """Return ``(data, header)`` from an RV1 file. ``data`` is float32."""
    raw = Path(path).read_bytes()
    if raw[: len(RV1_MAGIC)] != RV1_MAGIC:
        raise FormatError(f"{path}: not an RV1 file (bad magic)")
    pos = len(RV1_MAGIC)
    if len(raw) < pos + 4:
        raise HeaderError(f"{path}: truncated header length")
    (hlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if len(raw) < pos + hlen:
        raise HeaderError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"{path}: malformed JSON header: {exc}") from None
    if not isinstance(header, dict):
        raise HeaderError(f"{path}: header is not a JSON object")
    pos += hlen
    if header.get("version", RV1_VERSION) != RV1_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported RV1 version {header.get('version')!r}")
    if header.get("dtype") != "f32le":
        raise UnsupportedVersionError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    try:
        dims = [int(n) for n in header["dims"]]
        spacing = [float(s) for s in header["spacing"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise HeaderError(f"{path}: missing or invalid dims/spacing: {exc}") from None
    if len(dims) != 3 or len(spacing) != 3 or min(dims) < 1:
        raise HeaderError(f"{path}: dims and spacing must each have three entries")
    expected = 4 * dims[0] * dims[1] * dims[2]
    payload = raw[pos:]
    if len(payload) != expected:
        raise PayloadSizeError(
            f"{path}: header declares {dims} ({expected} bytes) but payload has {len(payload)} bytes"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    return data, header


def save_volume(v: Volume3D, path) -> None:
    """Write ``v`` as RV1.  float64 volumes are rounded to float32."""
    extra = {}
    if v.value_range_hint is not None:
        extra["value_range_hint"] = list(v.value_range_hint)
    write_rv1(path, v.data, v.spacing, extra)


def load_volume(path) -> Volume3D:
    data, header = read_rv1(path)
    hint = header.get("value_range_hint")
    return Volume3D(data, tuple(header["spacing"]), tuple(hint) if hint else None)
