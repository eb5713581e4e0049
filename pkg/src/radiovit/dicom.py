"""Reader for the uncompressed little-endian subset of DICOM Part-10.

Only what the preprocessing pipeline needs is interpreted: image geometry,
pixel encoding, rescale and window parameters, slice ordering keys and the
pixel data. Every other element is kept as opaque bytes in ``tags``.
Sequences are skipped using their length structure.
"""

from __future__ import annotations

import csv
import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateSubjectId,
    LengthMismatch,
    MalformedElement,
    MalformedLabelsCsv,
    MissingMagic,
    MissingRequiredTag,
    TruncatedElement,
    UnsupportedTransferSyntax,
)
from .modality import MODALITIES, Modality

EXPLICIT_VR_LITTLE_ENDIAN = "1.2.840.10008.1.2.1"
IMPLICIT_VR_LITTLE_ENDIAN = "1.2.840.10008.1.2"
SUPPORTED_TRANSFER_SYNTAXES = (EXPLICIT_VR_LITTLE_ENDIAN, IMPLICIT_VR_LITTLE_ENDIAN)

PREAMBLE_LENGTH = 128
MAGIC = b"DICM"
UNDEFINED_LENGTH = 0xFFFFFFFF

# VRs whose explicit encoding uses 2 reserved bytes and a 32-bit length
LONG_VRS = frozenset({"OB", "OD", "OF", "OL", "OV", "OW", "SQ", "SV", "UC", "UN", "UR", "UT", "UV"})

ITEM = (0xFFFE, 0xE000)
ITEM_DELIMITER = (0xFFFE, 0xE00D)
SEQUENCE_DELIMITER = (0xFFFE, 0xE0DD)

TRANSFER_SYNTAX_UID = (0x0002, 0x0010)
INSTANCE_NUMBER = (0x0020, 0x0013)
IMAGE_POSITION_PATIENT = (0x0020, 0x0032)
ROWS = (0x0028, 0x0010)
COLUMNS = (0x0028, 0x0011)
BITS_ALLOCATED = (0x0028, 0x0100)
BITS_STORED = (0x0028, 0x0101)
PIXEL_REPRESENTATION = (0x0028, 0x0103)
WINDOW_CENTER = (0x0028, 0x1050)
WINDOW_WIDTH = (0x0028, 0x1051)
RESCALE_INTERCEPT = (0x0028, 0x1052)
RESCALE_SLOPE = (0x0028, 0x1053)
PIXEL_DATA = (0x7FE0, 0x0010)

Tag = tuple[int, int]


@dataclass(eq=False)
class DicomSlice:
    """One parsed single-frame DICOM image.

    Equality compares the interpreted header fields and the pixel matrix;
    the opaque ``tags`` map is carried along but not compared.
    """

    rows: int
    cols: int
    bits_allocated: int = 16
    bits_stored: int = 16
    pixel_representation: int = 0
    rescale_slope: float = 1.0
    rescale_intercept: float = 0.0
    window_center: float | None = None
    window_width: float | None = None
    instance_number: int | None = None
    z_position: float | None = None
    pixels: np.ndarray | None = None
    tags: dict[Tag, bytes] = field(default_factory=dict)

    @property
    def signed(self) -> bool:
        return self.pixel_representation == 1

    @property
    def pixel_dtype(self) -> np.dtype:
        kind = "i" if self.signed else "u"
        return np.dtype(f"<{kind}{self.bits_allocated // 8}")

    def header(self) -> tuple:
        return (
            self.rows,
            self.cols,
            self.bits_allocated,
            self.bits_stored,
            self.pixel_representation,
            self.rescale_slope,
            self.rescale_intercept,
            self.window_center,
            self.window_width,
            self.instance_number,
            self.z_position,
        )

    def __eq__(self, other):
        if not isinstance(other, DicomSlice):
            return NotImplemented
        if self.header() != other.header():
            return False
        if self.pixels is None or other.pixels is None:
            return self.pixels is None and other.pixels is None
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)


def decode_pixel_data(header: DicomSlice, raw: bytes) -> np.ndarray:
    """Decode little-endian pixel bytes into a ``rows x cols`` integer matrix.

    Bits above ``bits_stored`` are discarded (sign-extended from the stored
    width for signed data), so returned values always fit in the stored bits.
    """
    if header.bits_allocated not in (8, 16):
        raise MalformedElement(f"BitsAllocated must be 8 or 16, got {header.bits_allocated}")
    expected = header.rows * header.cols * (header.bits_allocated // 8)
    if len(raw) != expected:
        raise LengthMismatch(f"pixel data has {len(raw)} bytes, expected {expected}")
    pixels = np.frombuffer(raw, dtype=header.pixel_dtype).astype(header.pixel_dtype.newbyteorder("="))
    unused = header.bits_allocated - header.bits_stored
    if unused > 0:
        wide = pixels.astype(np.int32)
        if header.signed:
            shift = 32 - header.bits_stored
            wide = (wide << shift) >> shift
        else:
            wide &= (1 << header.bits_stored) - 1
        pixels = wide.astype(pixels.dtype)
    return pixels.reshape(header.rows, header.cols)


class _Reader:
    def __init__(self, buf: bytes, explicit: bool):
        self.buf = buf
        self.explicit = explicit

    def _need(self, pos: int, n: int, what: str) -> None:
        if pos + n > len(self.buf):
            raise TruncatedElement(f"{what} at offset {pos} needs {n} bytes, {len(self.buf) - pos} remain")

    def element(self, pos: int, explicit: bool | None = None) -> tuple[Tag, str | None, int, int]:
        """Read one element header; returns (tag, vr, value_length, value_offset)."""
        explicit = self.explicit if explicit is None else explicit
        self._need(pos, 8, "element header")
        group, elem = struct.unpack_from("<HH", self.buf, pos)
        tag = (group, elem)
        if group == 0xFFFE:
            (length,) = struct.unpack_from("<I", self.buf, pos + 4)
            return tag, None, length, pos + 8
        if not explicit:
            (length,) = struct.unpack_from("<I", self.buf, pos + 4)
            return tag, None, length, pos + 8
        vr_bytes = self.buf[pos + 4 : pos + 6]
        if not (vr_bytes.isalpha() and vr_bytes.isupper()):
            raise MalformedElement(f"invalid VR {vr_bytes!r} for tag ({group:04X},{elem:04X})")
        vr = vr_bytes.decode("ascii")
        if vr in LONG_VRS:
            self._need(pos, 12, "element header")
            (length,) = struct.unpack_from("<I", self.buf, pos + 8)
            return tag, vr, length, pos + 12
        (length,) = struct.unpack_from("<H", self.buf, pos + 6)
        return tag, vr, length, pos + 8

    def value(self, tag: Tag, offset: int, length: int) -> bytes:
        self._need(offset, length, f"value of ({tag[0]:04X},{tag[1]:04X})")
        return self.buf[offset : offset + length]

    def skip_undefined(self, pos: int) -> int:
        """Skip an undefined-length sequence body; returns the offset after its delimiter."""
        while True:
            tag, _, length, offset = self.element(pos)
            if tag == SEQUENCE_DELIMITER:
                return offset
            if tag != ITEM:
                raise MalformedElement(f"expected item tag inside sequence, got {tag}")
            if length != UNDEFINED_LENGTH:
                self._need(offset, length, "sequence item")
                pos = offset + length
                continue
            pos = offset
            while True:
                tag, vr, length, offset = self.element(pos)
                if tag == ITEM_DELIMITER:
                    pos = offset
                    break
                pos = self.skip_value(tag, vr, length, offset)

    def skip_value(self, tag: Tag, vr: str | None, length: int, offset: int) -> int:
        if length == UNDEFINED_LENGTH:
            if tag == PIXEL_DATA:
                raise UnsupportedTransferSyntax("encapsulated pixel data")
            return self.skip_undefined(offset)
        self._need(offset, length, f"value of ({tag[0]:04X},{tag[1]:04X})")
        return offset + length


def _text(raw: bytes) -> str:
    try:
        return raw.decode("ascii").strip(" \x00")
    except UnicodeDecodeError as exc:
        raise MalformedElement(f"non-ASCII text value {raw!r}") from exc


def _decimal_values(raw: bytes) -> list[float]:
    try:
        return [float(v) for v in _text(raw).split("\\") if v.strip()]
    except ValueError as exc:
        raise MalformedElement(f"bad decimal string {raw!r}") from exc


def _first_decimal(raw: bytes | None) -> float | None:
    if raw is None:
        return None
    values = _decimal_values(raw)
    return values[0] if values else None


def _integer(raw: bytes | None) -> int | None:
    if raw is None:
        return None
    text = _text(raw).split("\\")[0].strip()
    if not text:
        return None
    try:
        return int(text)
    except ValueError as exc:
        raise MalformedElement(f"bad integer string {raw!r}") from exc


def _ushort(raw: bytes | None, tag: Tag) -> int | None:
    if raw is None:
        return None
    if len(raw) < 2:
        raise MalformedElement(f"({tag[0]:04X},{tag[1]:04X}) needs 2 bytes")
    return struct.unpack_from("<H", raw)[0]


def parse_dicom_file(data: bytes) -> DicomSlice:
    """Parse a Part-10 file held in memory."""
    buf = bytes(data)
    if len(buf) < PREAMBLE_LENGTH + 4 or buf[PREAMBLE_LENGTH : PREAMBLE_LENGTH + 4] != MAGIC:
        raise MissingMagic("no 'DICM' marker after the 128-byte preamble")

    tags: dict[Tag, bytes] = {}
    meta = _Reader(buf, explicit=True)
    pos = PREAMBLE_LENGTH + 4
    while pos + 2 <= len(buf) and struct.unpack_from("<H", buf, pos)[0] == 0x0002:
        tag, vr, length, offset = meta.element(pos)
        if length == UNDEFINED_LENGTH:
            raise MalformedElement("undefined length in file meta group")
        tags[tag] = meta.value(tag, offset, length)
        pos = offset + length

    if TRANSFER_SYNTAX_UID not in tags:
        raise MissingRequiredTag("TransferSyntaxUID (0002,0010)")
    syntax = _text(tags[TRANSFER_SYNTAX_UID])
    if syntax not in SUPPORTED_TRANSFER_SYNTAXES:
        raise UnsupportedTransferSyntax(syntax)

    reader = _Reader(buf, explicit=syntax == EXPLICIT_VR_LITTLE_ENDIAN)
    while pos < len(buf):
        tag, vr, length, offset = reader.element(pos)
        if vr == "SQ" or length == UNDEFINED_LENGTH:
            pos = reader.skip_value(tag, vr, length, offset)
            continue
        tags[tag] = reader.value(tag, offset, length)
        pos = offset + length

    for required, name in ((ROWS, "Rows"), (COLUMNS, "Columns"), (BITS_ALLOCATED, "BitsAllocated"), (PIXEL_DATA, "PixelData")):
        if required not in tags:
            raise MissingRequiredTag(f"{name} ({required[0]:04X},{required[1]:04X})")

    bits_allocated = _ushort(tags[BITS_ALLOCATED], BITS_ALLOCATED)
    bits_stored = _ushort(tags.get(BITS_STORED), BITS_STORED) or bits_allocated
    if bits_allocated not in (8, 16):
        raise MalformedElement(f"BitsAllocated {bits_allocated} not in (8, 16)")
    if not 0 < bits_stored <= bits_allocated:
        raise MalformedElement(f"BitsStored {bits_stored} exceeds BitsAllocated {bits_allocated}")
    representation = _ushort(tags.get(PIXEL_REPRESENTATION), PIXEL_REPRESENTATION) or 0
    if representation not in (0, 1):
        raise MalformedElement(f"PixelRepresentation {representation}")

    position = tags.get(IMAGE_POSITION_PATIENT)
    z_position = None
    if position is not None:
        coords = _decimal_values(position)
        if len(coords) >= 3:
            z_position = coords[2]

    slope = _first_decimal(tags.get(RESCALE_SLOPE))
    intercept = _first_decimal(tags.get(RESCALE_INTERCEPT))
    header = DicomSlice(
        rows=_ushort(tags[ROWS], ROWS),
        cols=_ushort(tags[COLUMNS], COLUMNS),
        bits_allocated=bits_allocated,
        bits_stored=bits_stored,
        pixel_representation=representation,
        rescale_slope=1.0 if slope is None else slope,
        rescale_intercept=0.0 if intercept is None else intercept,
        window_center=_first_decimal(tags.get(WINDOW_CENTER)),
        window_width=_first_decimal(tags.get(WINDOW_WIDTH)),
        instance_number=_integer(tags.get(INSTANCE_NUMBER)),
        z_position=z_position,
        tags=tags,
    )

    raw = tags[PIXEL_DATA]
    expected = header.rows * header.cols * (bits_allocated // 8)
    # odd-length values carry one byte of padding
    if len(raw) == expected + 1 and expected % 2 == 1:
        raw = raw[:expected]
    return replace(header, pixels=decode_pixel_data(header, raw))


def read_dicom(path: str | Path) -> DicomSlice:
    return parse_dicom_file(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# dataset tree


SUBJECT_ID_PATTERN = re.compile(r"^\d{5}$")
LABELS_HEADER = ("BraTS21ID", "MGMT_value")


def format_subject_id(value: int | str) -> str:
    text = str(value).strip()
    if not text.isdigit() or len(text) > 5:
        raise ValueError(f"not a subject id: {value!r}")
    return text.zfill(5)


def _natural_key(path: Path):
    return [int(part) if part.isdigit() else part for part in re.split(r"(\d+)", path.name)]


@dataclass
class SubjectEntry:
    subject_id: str
    series: dict[Modality, list[Path]]


@dataclass
class DatasetIndex:
    subjects: list[SubjectEntry] = field(default_factory=list)
    labels: dict[str, int] | None = None

    def __len__(self) -> int:
        return len(self.subjects)

    def subject_ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]

    def label(self, subject_id: str) -> int | None:
        if self.labels is None:
            return None
        return self.labels.get(subject_id)


def read_labels_csv(path: str | Path) -> dict[str, int]:
    """Read ``BraTS21ID,MGMT_value`` rows into a zero-padded id -> label map."""
    labels: dict[str, int] = {}
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != LABELS_HEADER:
        raise MalformedLabelsCsv(f"{path}: header must be {','.join(LABELS_HEADER)}")
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise MalformedLabelsCsv(f"{path}:{lineno}: expected 2 columns")
        try:
            subject_id = format_subject_id(row[0])
            value = int(row[1].strip())
        except ValueError as exc:
            raise MalformedLabelsCsv(f"{path}:{lineno}: {exc}") from exc
        if value not in (0, 1):
            raise MalformedLabelsCsv(f"{path}:{lineno}: MGMT_value must be 0 or 1")
        if subject_id in labels:
            raise DuplicateSubjectId(subject_id)
        labels[subject_id] = value
    return labels


def write_labels_csv(path: str | Path, labels: dict[str, int]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABELS_HEADER)
        for subject_id in sorted(labels):
            writer.writerow([int(subject_id), labels[subject_id]])


def scan_dataset(root: str | Path, labels_csv: str | Path | None = None) -> DatasetIndex:
    """Index ``root/<subject_id>/<modality>/*.dcm``.

    Directories with all-digit names of up to five characters are subjects
    (``2`` and ``00002`` name the same subject and collide). Missing modality
    folders give empty file lists.
    """
    root = Path(root)
    found: dict[str, SubjectEntry] = {}
    for child in sorted(root.iterdir()) if root.is_dir() else []:
        if not child.is_dir() or not child.name.isdigit() or len(child.name) > 5:
            continue
        subject_id = format_subject_id(child.name)
        if subject_id in found:
            raise DuplicateSubjectId(subject_id)
        series = {}
        for modality in MODALITIES:
            folder = child / modality.value
            files = [p for p in folder.glob("*.dcm") if p.is_file()] if folder.is_dir() else []
            series[modality] = sorted(files, key=_natural_key)
        found[subject_id] = SubjectEntry(subject_id, series)
    labels = read_labels_csv(labels_csv) if labels_csv is not None else None
    return DatasetIndex([found[k] for k in sorted(found)], labels)
