"""3D scalar and label volumes, their on-disk formats and slicing.

Arrays are indexed ``data[x, y, z]``.  The linear order used by every file
format and by all deterministic tie-breaking in this package is x-fastest,
i.e. voxel ``(x, y, z)`` sits at ``x + nx * (y + ny * z)``, which is numpy's
Fortran order for an ``(nx, ny, nz)`` array.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .exceptions import (
    CorruptHeader,
    GeometryMismatch,
    IndexOutOfRange,
    IoFailure,
    NonFiniteData,
    UnsupportedFormat,
)

__all__ = [
    "ScalarVolume",
    "LabelVolume",
    "load_volume",
    "save_volume",
    "extract_slice",
    "check_same_geometry",
    "linear_index",
]

RAW_MAGIC = b"SRGV"
RAW_VERSION = 1
_RAW_HEADER = struct.Struct("<4sHB3I3d")

NIFTI_HEADER_SIZE = 348
_NIFTI_DTYPES = {2: np.dtype("<u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}
_NIFTI_CODES = {np.dtype("<u1"): 2, np.dtype("<i2"): 4, np.dtype("<f4"): 16}


def _check_spacing(spacing) -> Tuple[float, float, float]:
    sp = tuple(float(s) for s in spacing)
    if len(sp) != 3:
        raise ValueError(f"spacing must have 3 components, got {len(sp)}")
    if not all(np.isfinite(s) and s > 0 for s in sp):
        raise ValueError(f"spacing components must be finite and > 0, got {sp}")
    return sp


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class _Volume:
    data: np.ndarray
    spacing: Tuple[float, float, float]

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    @property
    def n_voxels(self) -> int:
        return int(self.data.size)

    @property
    def voxel_volume(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def linear(self) -> np.ndarray:
        """Voxel values flattened in x-fastest order."""
        return self.data.ravel(order="F")

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ScalarVolume(_Volume):
    """Intensity grid with voxel spacing in millimetres.

    Parameters
    ----------
    data : array-like of shape (nx, ny, nz)
        Intensities; stored as float64 and made read-only.
    spacing : tuple of 3 floats
        Millimetres per voxel along x, y, z.
    """

    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"expected a non-empty 3D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteData("scalar volume contains NaN or Inf")
        object.__setattr__(self, "data", _freeze(arr))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @classmethod
    def from_linear(cls, dims, spacing, values) -> "ScalarVolume":
        values = np.asarray(values, dtype=np.float64)
        dims = tuple(int(d) for d in dims)
        if values.size != int(np.prod(dims)):
            raise CorruptHeader(f"{values.size} values for dims {dims}")
        return cls(values.reshape(dims, order="F"), spacing)


@dataclass(frozen=True, eq=False)
class LabelVolume(_Volume):
    """Non-negative integer labels on a voxel grid; 0 is background."""

    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.dtype.kind == "f":
            if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
                raise ValueError("label volume must hold integer values")
        elif raw.dtype.kind not in "iub":
            raise ValueError(f"unsupported label dtype {raw.dtype}")
        arr = np.array(raw, dtype=np.int64, copy=True)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"expected a non-empty 3D array, got shape {arr.shape}")
        if arr.size and arr.min() < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "data", _freeze(arr))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @classmethod
    def from_linear(cls, dims, spacing, values) -> "LabelVolume":
        values = np.asarray(values)
        dims = tuple(int(d) for d in dims)
        if values.size != int(np.prod(dims)):
            raise CorruptHeader(f"{values.size} values for dims {dims}")
        return cls(values.reshape(dims, order="F"), spacing)

    def unique_labels(self) -> list:
        """Distinct nonzero labels, ascending."""
        u = np.unique(self.data)
        return [int(v) for v in u if v != 0]


Volume = Union[ScalarVolume, LabelVolume]


def linear_index(dims, x, y, z):
    nx, ny, _ = dims
    return x + nx * (y + ny * z)


def check_same_geometry(a: Volume, b: Volume) -> None:
    """Raise ``GeometryMismatch`` unless ``a`` and ``b`` share dims and spacing."""
    if a.dims != b.dims or a.spacing != b.spacing:
        raise GeometryMismatch(
            f"geometry mismatch: dims {a.dims} vs {b.dims}, "
            f"spacing {a.spacing} vs {b.spacing}"
        )


# ---------------------------------------------------------------- raw format


def _save_raw(vol: Volume, path) -> None:
    kind = 1 if isinstance(vol, LabelVolume) else 0
    if kind:
        if vol.n_voxels and vol.data.max() > np.iinfo(np.uint32).max:
            raise ValueError("label exceeds u32 range")
        payload = vol.linear().astype("<u4").tobytes()
    else:
        payload = vol.linear().astype("<f8").tobytes()
    header = _RAW_HEADER.pack(RAW_MAGIC, RAW_VERSION, kind, *vol.dims, *vol.spacing)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def _load_raw(buf: bytes, kind: str) -> Volume:
    if len(buf) < _RAW_HEADER.size:
        raise CorruptHeader("truncated raw header")
    magic, version, file_kind, nx, ny, nz, sx, sy, sz = _RAW_HEADER.unpack_from(buf)
    if version != RAW_VERSION:
        raise UnsupportedFormat(f"raw format version {version} not supported")
    if file_kind not in (0, 1):
        raise CorruptHeader(f"unknown volume kind byte {file_kind}")
    dims = (nx, ny, nz)
    if min(dims) <= 0:
        raise CorruptHeader(f"non-positive dims {dims}")
    if not all(np.isfinite(s) and s > 0 for s in (sx, sy, sz)):
        raise CorruptHeader(f"invalid spacing {(sx, sy, sz)}")
    dtype = np.dtype("<u4") if file_kind == 1 else np.dtype("<f8")
    n = nx * ny * nz
    body = memoryview(buf)[_RAW_HEADER.size:]
    if len(body) != n * dtype.itemsize:
        raise CorruptHeader(
            f"payload is {len(body)} bytes, header declares {n * dtype.itemsize}"
        )
    values = np.frombuffer(body, dtype=dtype)
    return _build(values, dims, (sx, sy, sz), kind)


# -------------------------------------------------------------- NIfTI-1 (.nii)


def _load_nifti(buf: bytes, kind: str) -> Volume:
    if len(buf) < NIFTI_HEADER_SIZE:
        raise CorruptHeader("truncated NIfTI header")
    (sizeof_hdr,) = struct.unpack_from("<i", buf, 0)
    if sizeof_hdr != NIFTI_HEADER_SIZE:
        if struct.unpack_from(">i", buf, 0)[0] == NIFTI_HEADER_SIZE:
            raise UnsupportedFormat("big-endian NIfTI is not supported")
        raise UnsupportedFormat(f"sizeof_hdr is {sizeof_hdr}, expected 348")
    if buf[344:348] != b"n+1\x00":
        raise UnsupportedFormat(f"NIfTI magic {buf[344:348]!r} is not single-file n+1")
    dim = struct.unpack_from("<8h", buf, 40)
    if dim[0] != 3:
        raise UnsupportedFormat(f"only 3D volumes are supported (dim[0]={dim[0]})")
    dims = tuple(int(d) for d in dim[1:4])
    if min(dims) <= 0:
        raise CorruptHeader(f"non-positive dims {dims}")
    (datatype,) = struct.unpack_from("<h", buf, 70)
    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedFormat(f"NIfTI datatype code {datatype} not supported")
    dtype = _NIFTI_DTYPES[datatype]
    pixdim = struct.unpack_from("<8f", buf, 76)
    spacing = tuple(float(p) for p in pixdim[1:4])
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise CorruptHeader(f"invalid pixdim spacing {spacing}")
    (vox_offset,) = struct.unpack_from("<f", buf, 108)
    offset = int(vox_offset)
    if offset < NIFTI_HEADER_SIZE or offset != vox_offset:
        raise CorruptHeader(f"invalid vox_offset {vox_offset}")
    n = dims[0] * dims[1] * dims[2]
    if len(buf) - offset != n * dtype.itemsize:
        raise CorruptHeader(
            f"payload is {len(buf) - offset} bytes, header declares {n * dtype.itemsize}"
        )
    values = np.frombuffer(buf, dtype=dtype, count=n, offset=offset)
    slope, inter = struct.unpack_from("<2f", buf, 112)
    if kind == "scalar" and np.isfinite(slope) and slope != 0 and (slope, inter) != (1.0, 0.0):
        values = values.astype(np.float64) * slope + inter
    return _build(values, dims, spacing, kind)


def _nifti_dtype_for(vol: Volume) -> np.dtype:
    if isinstance(vol, ScalarVolume):
        return np.dtype("<f4")
    top = int(vol.data.max()) if vol.n_voxels else 0
    if top <= np.iinfo(np.uint8).max:
        return np.dtype("<u1")
    if top <= np.iinfo(np.int16).max:
        return np.dtype("<i2")
    if top <= 2**24:
        return np.dtype("<f4")
    raise ValueError(f"label {top} cannot be stored exactly in a NIfTI datatype")


def _nifti_header(dims, spacing, dtype: np.dtype) -> bytes:
    hdr = bytearray(NIFTI_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *dims, 1, 1, 1, 1)
    struct.pack_into("<hh", hdr, 70, _NIFTI_CODES[dtype], dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    hdr[123] = 2  # xyzt_units: mm
    struct.pack_into("<hh", hdr, 252, 0, 1)  # qform_code, sform_code
    sx, sy, sz = spacing
    struct.pack_into("<12f", hdr, 280, sx, 0, 0, 0, 0, sy, 0, 0, 0, 0, sz, 0)
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr)


def _save_nifti(vol: Volume, path) -> None:
    dtype = _nifti_dtype_for(vol)
    payload = vol.linear().astype(dtype).tobytes()
    with open(path, "wb") as fh:
        fh.write(_nifti_header(vol.dims, vol.spacing, dtype))
        fh.write(b"\x00" * 4)
        fh.write(payload)


# ------------------------------------------------------------------ public API


def _build(values: np.ndarray, dims, spacing, kind: str) -> Volume:
    if kind == "scalar":
        values = values.astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise NonFiniteData("scalar volume contains NaN or Inf")
        return ScalarVolume.from_linear(dims, spacing, values)
    if kind == "label":
        if values.dtype.kind == "f":
            if not np.all(np.isfinite(values)) or np.any(values != np.round(values)):
                raise UnsupportedFormat("label file holds non-integer values")
        if values.size and values.min() < 0:
            raise UnsupportedFormat("label file holds negative values")
        return LabelVolume.from_linear(dims, spacing, values.astype(np.int64))
    raise ValueError(f"kind must be 'scalar' or 'label', got {kind!r}")


def load_volume(path, kind: str = "scalar") -> Volume:
    """Load a ``.srgvol`` raw file or an uncompressed NIfTI-1 file.

    The format is detected from the file's magic bytes, not its extension.

    Parameters
    ----------
    path : path-like
    kind : {'scalar', 'label'}

    Raises
    ------
    IoFailure, UnsupportedFormat, CorruptHeader, NonFiniteData
    """
    if kind not in ("scalar", "label"):
        raise ValueError(f"kind must be 'scalar' or 'label', got {kind!r}")
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if buf[:2] == b"\x1f\x8b":
        raise UnsupportedFormat(f"{path}: compressed volumes are not supported")
    if buf[:4] == RAW_MAGIC:
        return _load_raw(buf, kind)
    if len(buf) >= NIFTI_HEADER_SIZE and buf[344:347] in (b"n+1", b"ni1"):
        return _load_nifti(buf, kind)
    raise UnsupportedFormat(f"{path}: not a .srgvol or NIfTI-1 file")


def _infer_format(path) -> str:
    name = os.fspath(path).lower()
    if name.endswith(".nii.gz"):
        raise UnsupportedFormat("compressed NIfTI output is not supported")
    if name.endswith(".nii"):
        return "nifti"
    return "raw"


def save_volume(vol: Volume, path, format: str | None = None) -> None:
    """Write ``vol`` as ``'raw'`` (.srgvol) or ``'nifti'`` (.nii).

    Without ``format`` the extension decides; anything but ``.nii`` is raw.
    NIfTI scalars are written as float32, labels as the narrowest of
    uint8/int16/float32 that holds them exactly.
    """
    fmt = format or _infer_format(path)
    if fmt not in ("raw", "nifti"):
        raise ValueError(f"format must be 'raw' or 'nifti', got {fmt!r}")
    try:
        if fmt == "raw":
            _save_raw(vol, path)
        else:
            _save_nifti(vol, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


_AXES = {"x": 0, "y": 1, "z": 2}


def extract_slice(vol: Volume, axis: str, index: int) -> np.ndarray:
    """Return one plane as a 2D row-major array.

    Rows run along the slower of the two remaining axes and columns along
    the faster, so the z-slice is indexed ``[y, x]``, the y-slice
    ``[z, x]`` and the x-slice ``[z, y]``.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    ax = _AXES[axis]
    size = vol.dims[ax]
    if not 0 <= index < size:
        raise IndexOutOfRange(f"{axis}-index {index} outside [0, {size})")
    plane = np.take(vol.data, index, axis=ax)
    return np.ascontiguousarray(plane.T)
