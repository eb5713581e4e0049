"""Slice stacking, VOI windowing, resampling and normalization of 3D volumes."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dicom import DicomSlice
from .errors import BadVolumeFile, InconsistentGeometry, InvalidWindow, NoOrderingKey
from .modality import Modality

DEFAULT_TARGET = (256, 256, 64)


@dataclass(eq=False)
class Volume:
    """A real-valued voxel grid indexed ``[row, col, slice]``."""

    voxels: np.ndarray
    subject_id: str = ""
    modality: Modality = Modality.FLAIR

    def __post_init__(self):
        if self.voxels.ndim != 3 or min(self.voxels.shape) <= 0:
            raise ValueError(f"volume must be a non-empty 3D grid, got shape {self.voxels.shape}")
        self.modality = Modality(self.modality)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape

    @property
    def height(self) -> int:
        return self.voxels.shape[0]

    @property
    def width(self) -> int:
        return self.voxels.shape[1]

    @property
    def depth(self) -> int:
        return self.voxels.shape[2]

    def with_voxels(self, voxels: np.ndarray) -> "Volume":
        return Volume(voxels, self.subject_id, self.modality)


def order_slices(slices: list[DicomSlice]) -> list[int]:
    """Permutation putting slices in acquisition order.

    Sorts by z position when every slice has one, otherwise by instance
    number; ties keep their input order.
    """
    if not slices:
        raise ValueError("no slices to order")
    if all(s.z_position is not None for s in slices):
        key = [s.z_position for s in slices]
    elif all(s.instance_number is not None for s in slices):
        key = [s.instance_number for s in slices]
    else:
        raise NoOrderingKey("slices share neither z position nor instance number")
    return sorted(range(len(slices)), key=key.__getitem__)


def apply_voi_lut(x, center: float, width: float, y_min: float = 0.0, y_max: float = 1.0):
    """Linear VOI windowing of rescaled values ``x`` into ``[y_min, y_max]``."""
    if not width > 1:
        raise InvalidWindow(f"window width must exceed 1, got {width}")
    if not y_min < y_max:
        raise InvalidWindow("y_min must be below y_max")
    x = np.asarray(x, dtype=np.float64)
    y = ((x - (center - 0.5)) / (width - 1) + 0.5) * (y_max - y_min) + y_min
    low = center - 0.5 - (width - 1) / 2
    high = center - 0.5 + (width - 1) / 2
    y = np.where(x <= low, y_min, np.where(x > high, y_max, y))
    # rounding can push interior values a hair past the range
    y = np.clip(y, y_min, y_max)
    return y if y.ndim else float(y)


def _resample_axis(a: np.ndarray, axis: int, size: int) -> np.ndarray:
    n = a.shape[axis]
    if size == n:
        return a
    if n == 1:
        return np.repeat(a, size, axis=axis)
    pos = np.linspace(0.0, n - 1, size) if size > 1 else np.zeros(1)
    lo = np.minimum(np.floor(pos).astype(np.intp), n - 2)
    frac = pos - lo
    shape = [1] * a.ndim
    shape[axis] = size
    frac = frac.reshape(shape)
    return np.take(a, lo, axis=axis) * (1.0 - frac) + np.take(a, lo + 1, axis=axis) * frac


def resize_volume(v: Volume, target: tuple[int, int, int]) -> Volume:
    """Corner-aligned bilinear resampling in-plane, then linear along depth."""
    if any(int(t) <= 0 for t in target):
        raise ValueError(f"target dims must be positive, got {target}")
    voxels = v.voxels
    if voxels.dtype.kind != "f":
        voxels = voxels.astype(np.float64)
    for axis, size in enumerate(target):
        voxels = _resample_axis(voxels, axis, int(size))
    return v.with_voxels(voxels)


def normalize_volume(v: Volume) -> Volume:
    """Min-max scale to [0, 1]; a constant volume becomes all zeros."""
    voxels = np.asarray(v.voxels, dtype=np.float64)
    lo, hi = voxels.min(), voxels.max()
    if hi == lo:
        return v.with_voxels(np.zeros_like(voxels))
    return v.with_voxels(np.clip((voxels - lo) / (hi - lo), 0.0, 1.0))


def stack_slices(slices: list[DicomSlice]) -> np.ndarray:
    """Ordered, rescaled and (when windowed) VOI-mapped slices as an (H, W, D) array."""
    if not slices:
        raise ValueError("no slices to stack")
    geometry = {(s.rows, s.cols) for s in slices}
    if len(geometry) > 1:
        raise InconsistentGeometry(f"mixed slice geometry {sorted(geometry)}")
    planes = []
    for i in order_slices(slices):
        s = slices[i]
        plane = s.pixels.astype(np.float64) * s.rescale_slope + s.rescale_intercept
        if s.window_center is not None and s.window_width is not None:
            plane = apply_voi_lut(plane, s.window_center, s.window_width, 0.0, 1.0)
        planes.append(plane)
    return np.stack(planes, axis=2)


def build_volume(
    slices: list[DicomSlice],
    target: tuple[int, int, int] = DEFAULT_TARGET,
    subject_id: str = "",
    modality: Modality | str = Modality.FLAIR,
) -> Volume:
    raw = Volume(stack_slices(slices), subject_id, Modality(modality))
    return normalize_volume(resize_volume(raw, target))


# ---------------------------------------------------------------------------
# VOL1 cache files

VOLUME_MAGIC = b"VOL1"
_VOLUME_HEADER = struct.Struct("<4sIIIB")


def encode_volume(v: Volume) -> bytes:
    h, w, d = v.shape
    head = _VOLUME_HEADER.pack(VOLUME_MAGIC, h, w, d, v.modality.code)
    # stored slice by slice, each slice row-major
    body = np.ascontiguousarray(np.transpose(v.voxels, (2, 0, 1)), dtype="<f4").tobytes()
    return head + body


def decode_volume(data: bytes, subject_id: str = "") -> Volume:
    if len(data) < _VOLUME_HEADER.size:
        raise BadVolumeFile("volume file shorter than its header")
    magic, h, w, d, code = _VOLUME_HEADER.unpack_from(data)
    if magic != VOLUME_MAGIC:
        raise BadVolumeFile(f"bad volume magic {magic!r}")
    if code > 3:
        raise BadVolumeFile(f"unknown modality code {code}")
    expected = h * w * d * 4
    body = data[_VOLUME_HEADER.size :]
    if h * w * d == 0 or len(body) != expected:
        raise BadVolumeFile(f"volume body has {len(body)} bytes, expected {expected}")
    voxels = np.frombuffer(body, dtype="<f4").reshape(d, h, w).transpose(1, 2, 0)
    return Volume(voxels.astype(np.float32), subject_id, Modality.from_code(code))


def write_volume(v: Volume, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(encode_volume(v))
    return path


def read_volume(path: str | Path, subject_id: str = "") -> Volume:
    return decode_volume(Path(path).read_bytes(), subject_id)
