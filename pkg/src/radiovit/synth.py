"""Synthetic DICOM datasets with a planted, learnable signal.

Positive subjects carry a bright cube at a seeded location in every
modality; negatives do not. The writer here is also the round-trip oracle
for :mod:`radiovit.dicom`.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dicom
from .dicom import DicomSlice, DatasetIndex
from .errors import IoError
from .modality import MODALITIES, Modality

MR_IMAGE_STORAGE = "1.2.840.10008.5.1.4.1.1.4"
UID_ROOT = "1.2.826.0.1.3680043.10.1045"
IMPLEMENTATION_CLASS_UID = UID_ROOT + ".1"

_MANAGED = {
    dicom.INSTANCE_NUMBER,
    dicom.IMAGE_POSITION_PATIENT,
    dicom.ROWS,
    dicom.COLUMNS,
    dicom.BITS_ALLOCATED,
    dicom.BITS_STORED,
    dicom.PIXEL_REPRESENTATION,
    dicom.WINDOW_CENTER,
    dicom.WINDOW_WIDTH,
    dicom.RESCALE_INTERCEPT,
    dicom.RESCALE_SLOPE,
    dicom.PIXEL_DATA,
    (0x0008, 0x0016),
    (0x0008, 0x0018),
    (0x0028, 0x0002),
    (0x0028, 0x0004),
    (0x0028, 0x0102),
}


def _pad(raw: bytes, fill: bytes) -> bytes:
    return raw + fill if len(raw) % 2 else raw


def _text(value: str, fill: bytes = b" ") -> bytes:
    return _pad(value.encode("ascii"), fill)


def format_decimal_string(value: float) -> str:
    """Shortest text for ``value`` that fits the 16-character DS limit."""
    text = repr(float(value))
    if text.endswith(".0"):
        text = text[:-2]
    if len(text) > 16:
        text = f"{value:.9g}"
    return text


def _element(tag, vr: str, value: bytes, explicit: bool) -> bytes:
    head = struct.pack("<HH", *tag)
    if not explicit:
        return head + struct.pack("<I", len(value)) + value
    if vr in dicom.LONG_VRS:
        return head + vr.encode() + b"\x00\x00" + struct.pack("<I", len(value)) + value
    return head + vr.encode() + struct.pack("<H", len(value)) + value


def encode_dicom(
    s: DicomSlice,
    transfer_syntax: str = dicom.EXPLICIT_VR_LITTLE_ENDIAN,
    sop_instance_uid: str | None = None,
) -> bytes:
    """Serialize a slice as a Part-10 byte string."""
    if s.pixels is None or s.pixels.shape != (s.rows, s.cols):
        raise ValueError("pixels must be a rows x cols matrix")
    explicit = transfer_syntax == dicom.EXPLICIT_VR_LITTLE_ENDIAN
    uid = sop_instance_uid or f"{UID_ROOT}.2.{s.instance_number or 0}"

    meta_body = b"".join(
        [
            _element((0x0002, 0x0001), "OB", b"\x00\x01", True),
            _element((0x0002, 0x0002), "UI", _text(MR_IMAGE_STORAGE, b"\x00"), True),
            _element((0x0002, 0x0003), "UI", _text(uid, b"\x00"), True),
            _element(dicom.TRANSFER_SYNTAX_UID, "UI", _text(transfer_syntax, b"\x00"), True),
            _element((0x0002, 0x0012), "UI", _text(IMPLEMENTATION_CLASS_UID, b"\x00"), True),
        ]
    )
    meta = _element((0x0002, 0x0000), "UL", struct.pack("<I", len(meta_body)), True) + meta_body

    us = lambda v: struct.pack("<H", v)  # noqa: E731
    items = [
        ((0x0008, 0x0016), "UI", _text(MR_IMAGE_STORAGE, b"\x00")),
        ((0x0008, 0x0018), "UI", _text(uid, b"\x00")),
        ((0x0028, 0x0002), "US", us(1)),
        ((0x0028, 0x0004), "CS", _text("MONOCHROME2")),
        (dicom.ROWS, "US", us(s.rows)),
        (dicom.COLUMNS, "US", us(s.cols)),
        (dicom.BITS_ALLOCATED, "US", us(s.bits_allocated)),
        (dicom.BITS_STORED, "US", us(s.bits_stored)),
        ((0x0028, 0x0102), "US", us(s.bits_stored - 1)),
        (dicom.PIXEL_REPRESENTATION, "US", us(s.pixel_representation)),
        (dicom.RESCALE_INTERCEPT, "DS", _text(format_decimal_string(s.rescale_intercept))),
        (dicom.RESCALE_SLOPE, "DS", _text(format_decimal_string(s.rescale_slope))),
    ]
    if s.instance_number is not None:
        items.append((dicom.INSTANCE_NUMBER, "IS", _text(str(int(s.instance_number)))))
    if s.z_position is not None:
        position = "0\\0\\" + format_decimal_string(s.z_position)
        items.append((dicom.IMAGE_POSITION_PATIENT, "DS", _text(position)))
    if s.window_center is not None:
        items.append((dicom.WINDOW_CENTER, "DS", _text(format_decimal_string(s.window_center))))
    if s.window_width is not None:
        items.append((dicom.WINDOW_WIDTH, "DS", _text(format_decimal_string(s.window_width))))
    for tag, raw in s.tags.items():
        if tag[0] != 0x0002 and tag not in _MANAGED:
            items.append((tag, "UN", _pad(raw, b"\x00")))

    pixel_bytes = np.ascontiguousarray(s.pixels, dtype=s.pixel_dtype).tobytes()
    items.append((dicom.PIXEL_DATA, "OW" if s.bits_allocated == 16 else "OB", _pad(pixel_bytes, b"\x00")))

    body = b"".join(_element(tag, vr, value, explicit) for tag, vr, value in sorted(items, key=lambda t: t[0]))
    return bytes(dicom.PREAMBLE_LENGTH) + dicom.MAGIC + meta + body


def write_dicom(s: DicomSlice, path: str | Path, **kwargs) -> Path:
    path = Path(path)
    try:
        path.write_bytes(encode_dicom(s, **kwargs))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return path


@dataclass(frozen=True)
class SynthSpec:
    num_subjects: int = 8
    dims: tuple[int, int, int] = (32, 32, 32)
    positive_fraction: float = 0.5
    lesion_size: int = 8
    lesion_delta: float = 1500.0
    noise_sigma: float = 10.0
    seed: int = 0
    background: float = 800.0

    def __post_init__(self):
        if self.num_subjects < 0:
            raise ValueError("num_subjects must be non-negative")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ValueError("positive_fraction must lie in [0, 1]")
        if any(d <= 0 for d in self.dims):
            raise ValueError("dims must be positive")
        if not 0 < self.lesion_size <= min(self.dims):
            raise ValueError("lesion must fit inside the volume")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def num_positive(self) -> int:
        return int(math.floor(self.num_subjects * self.positive_fraction + 0.5))


# per-modality tissue contrast of the background phantom
_GAIN = {"T1w": 1.0, "T1wCE": 1.1, "T2w": 0.9, "FLAIR": 1.2}
STORED_BITS = 12


def subject_labels(spec: SynthSpec) -> dict[str, int]:
    order = np.random.default_rng([spec.seed]).permutation(spec.num_subjects)
    positives = {int(i) for i in order[: spec.num_positive]}
    return {dicom.format_subject_id(i): int(i in positives) for i in range(spec.num_subjects)}


def subject_volumes(spec: SynthSpec, index: int, positive: bool) -> dict[str, np.ndarray]:
    """Stored-value volumes (H, W, D) for one subject, keyed by modality name."""
    rng = np.random.default_rng([spec.seed, index])
    size = spec.lesion_size
    corner = [int(rng.integers(0, n - size + 1)) for n in spec.dims]

    grid = np.meshgrid(*[(np.arange(n) + 0.5) / n - 0.5 for n in spec.dims], indexing="ij")
    brain = (sum((g / 0.42) ** 2 for g in grid) <= 1.0).astype(np.float64)

    out = {}
    for modality in MODALITIES:
        volume = brain * spec.background * _GAIN[modality.value]
        if positive:
            i, j, k = corner
            volume[i : i + size, j : j + size, k : k + size] += spec.lesion_delta
        if spec.noise_sigma > 0:
            volume = volume + rng.normal(0.0, spec.noise_sigma, size=volume.shape)
        out[modality.value] = np.clip(np.rint(volume), 0, 2**STORED_BITS - 1).astype(np.uint16)
    return out


def _write_subject(args) -> None:
    spec, index, positive, out_dir = args
    subject_id = dicom.format_subject_id(index)
    for modality, volume in subject_volumes(spec, index, positive).items():
        folder = Path(out_dir) / subject_id / modality
        folder.mkdir(parents=True, exist_ok=True)
        for k in range(volume.shape[2]):
            s = DicomSlice(
                rows=volume.shape[0],
                cols=volume.shape[1],
                bits_allocated=16,
                bits_stored=STORED_BITS,
                pixel_representation=0,
                rescale_slope=1.0,
                rescale_intercept=0.0,
                window_center=2048.0,
                window_width=4096.0,
                instance_number=k + 1,
                z_position=-0.5 * volume.shape[2] + 1.0 * k,
                pixels=volume[:, :, k],
            )
            uid = f"{UID_ROOT}.3.{spec.seed}.{index}.{Modality(modality).code}.{k + 1}"
            write_dicom(s, folder / f"Image-{k + 1}.dcm", sop_instance_uid=uid)


LABELS_FILENAME = "train_labels.csv"


def generate_dataset(spec: SynthSpec, out_dir: str | Path, jobs: int = 1) -> DatasetIndex:
    """Write ``out_dir/<id>/<modality>/Image-<k>.dcm`` plus ``train_labels.csv``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        labels = subject_labels(spec)
        tasks = [(spec, i, bool(labels[dicom.format_subject_id(i)]), str(out_dir)) for i in range(spec.num_subjects)]
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                list(pool.map(_write_subject, tasks))
        else:
            for task in tasks:
                _write_subject(task)
        dicom.write_labels_csv(out_dir / LABELS_FILENAME, labels)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return dicom.scan_dataset(out_dir, out_dir / LABELS_FILENAME)
