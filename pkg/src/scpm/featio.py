"""PFV1 feature container and dataset manifest.

The container is the boundary between the feature-extraction sidecar and
the numeric pipeline, so the byte layout is fixed (see docs/formats.md):

    magic   4 bytes  ASCII "PFV1"
    version u8       1
    comment u32 length + UTF-8 bytes (free-form provenance)
    then per image, until EOF:
        image_id    u32 length + UTF-8 bytes
        label       u32
        split       u8   0 = train, 1 = test
        n_proposals u32  >= 1
        per proposal:
            box      4 x i32   x0, y0, x1, y1 (original-image pixels)
            grid     u32       N, cells per side
            channels u32       d
            values   N*N*d x f32, C-order over (row, col, channel)

All integers and floats are little-endian. Reading is streamed: one
proposal's value payload is materialized at a time.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"PFV1"
VERSION = 1

SPLIT_TRAIN = "train"
SPLIT_TEST = "test"
_SPLIT_CODE = {SPLIT_TRAIN: 0, SPLIT_TEST: 1}
_SPLIT_NAME = {0: SPLIT_TRAIN, 1: SPLIT_TEST}


class ContainerError(Exception):
    """Base for malformed PFV1 files."""


class BadMagicError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class TruncatedRecordError(ContainerError):
    def __init__(self, image_id, detail):
        self.image_id = image_id
        super().__init__(f"truncated record for image {image_id!r}: {detail}")


class RecordInvariantError(ValueError):
    """A record violates its type invariants; rejected before write."""


@dataclass
class ProposalRecord:
    """One object proposal's pooled-layer activations.

    `values` has shape (grid, grid, channels); `box` locates the proposal
    in original-image pixels as a half-open (x0, y0, x1, y1) interval.
    """

    box: tuple
    grid: int
    channels: int
    values: np.ndarray

    def validate(self):
        if self.grid < 1:
            raise RecordInvariantError("grid must be >= 1")
        if self.channels < 1:
            raise RecordInvariantError("channels must be >= 1")
        if self.values.shape != (self.grid, self.grid, self.channels):
            raise RecordInvariantError(
                f"values shape {self.values.shape} != "
                f"({self.grid}, {self.grid}, {self.channels})"
            )
        x0, y0, x1, y1 = self.box
        if x0 < 0 or y0 < 0 or x1 <= x0 or y1 <= y0:
            raise RecordInvariantError(f"degenerate box {self.box}")


@dataclass
class ImageRecord:
    image_id: str
    label: int
    split: str
    proposals: list = field(default_factory=list)

    def validate(self):
        if not self.image_id:
            raise RecordInvariantError("image_id must be non-empty")
        if self.label < 0:
            raise RecordInvariantError("label must be >= 0")
        if self.split not in _SPLIT_CODE:
            raise RecordInvariantError(f"unknown split {self.split!r}")
        if not self.proposals:
            raise RecordInvariantError("at least one proposal required")
        for prop in self.proposals:
            prop.validate()


def write_features(records, destination, comment: str = ""):
    """Write an iterable of ImageRecord to a PFV1 file.

    Records are validated and streamed one proposal at a time; an
    invariant violation raises before any byte of that record is written.
    """
    own = isinstance(destination, (str, bytes)) or hasattr(destination, "__fspath__")
    fh = open(destination, "wb") if own else destination
    try:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        _write_text(fh, comment)
        for rec in records:
            rec.validate()
            _write_text(fh, rec.image_id)
            fh.write(struct.pack("<IBI", rec.label, _SPLIT_CODE[rec.split], len(rec.proposals)))
            for prop in rec.proposals:
                x0, y0, x1, y1 = prop.box
                fh.write(struct.pack("<iiiiII", x0, y0, x1, y1, prop.grid, prop.channels))
                payload = np.ascontiguousarray(prop.values, dtype="<f4")
                fh.write(payload.tobytes())
    finally:
        if own:
            fh.close()


def read_features(source):
    """Yield ImageRecords from a PFV1 file in file order.

    Raises BadMagicError / VersionMismatchError on a bad header and
    TruncatedRecordError (naming the image when known) on a short file.
    """
    own = isinstance(source, (str, bytes)) or hasattr(source, "__fspath__")
    fh = open(source, "rb") if own else source
    try:
        magic = fh.read(4)
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
        version = _read_exact(fh, 1, "<header>", "version byte")[0]
        if version != VERSION:
            raise VersionMismatchError(f"container version {version}, expected {VERSION}")
        _read_text(fh, "<header>")  # comment
        while True:
            head = fh.read(4)
            if head == b"":
                return
            image_id = _read_text(fh, "<unknown>", prefix=head)
            label, split_code, n_props = struct.unpack(
                "<IBI", _read_exact(fh, 9, image_id, "image header")
            )
            if split_code not in _SPLIT_NAME:
                raise ContainerError(f"image {image_id!r}: unknown split code {split_code}")
            if n_props < 1:
                raise ContainerError(f"image {image_id!r}: zero proposals")
            proposals = []
            for _ in range(n_props):
                x0, y0, x1, y1, grid, channels = struct.unpack(
                    "<iiiiII", _read_exact(fh, 24, image_id, "proposal header")
                )
                count = grid * grid * channels
                raw = _read_exact(fh, 4 * count, image_id, "proposal values")
                values = np.frombuffer(raw, dtype="<f4").reshape(grid, grid, channels)
                proposals.append(
                    ProposalRecord(box=(x0, y0, x1, y1), grid=grid, channels=channels, values=values)
                )
            yield ImageRecord(image_id=image_id, label=label, split=_SPLIT_NAME[split_code], proposals=proposals)
    finally:
        if own:
            fh.close()


def read_header_comment(source) -> str:
    with open(source, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
        version = _read_exact(fh, 1, "<header>", "version byte")[0]
        if version != VERSION:
            raise VersionMismatchError(f"container version {version}, expected {VERSION}")
        return _read_text(fh, "<header>")


def _write_text(fh, text: str):
    data = text.encode("utf-8")
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)


def _read_exact(fh, count, image_id, what) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedRecordError(image_id, f"{what}: wanted {count} bytes, got {len(data)}")
    return data


def _read_text(fh, image_id, prefix=None) -> str:
    raw_len = prefix if prefix is not None else fh.read(4)
    if len(raw_len) != 4:
        raise TruncatedRecordError(image_id, f"text length: wanted 4 bytes, got {len(raw_len)}")
    (length,) = struct.unpack("<I", raw_len)
    return _read_exact(fh, length, image_id, "text payload").decode("utf-8")


# ---------------------------------------------------------------------------
# Dataset manifest: JSON-lines entries plus a JSON class table.
# ---------------------------------------------------------------------------


class ManifestError(ValueError):
    pass


@dataclass
class DatasetManifest:
    """Image paths with labels and splits, plus the class-name table."""

    entries: list  # of (path, label, split)
    class_names: list

    def validate(self, for_training: bool = False):
        n_classes = len(self.class_names)
        seen = set()
        splits = set()
        for path, label, split in self.entries:
            if not (0 <= label < n_classes):
                raise ManifestError(f"{path}: label {label} outside [0, {n_classes})")
            if split not in _SPLIT_CODE:
                raise ManifestError(f"{path}: unknown split {split!r}")
            seen.add(label)
            splits.add(split)
        if seen != set(range(n_classes)) and self.entries:
            missing = sorted(set(range(n_classes)) - seen)
            raise ManifestError(f"labels not dense: no images for classes {missing}")
        if for_training and splits != {SPLIT_TRAIN, SPLIT_TEST}:
            raise ManifestError("training runs need non-empty train and test splits")

    @classmethod
    def load(cls, manifest_path, classes_path):
        entries = []
        with open(manifest_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    entries.append((obj["path"], int(obj["label"]), obj["split"]))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ManifestError(f"{manifest_path}:{lineno}: {exc}") from None
        with open(classes_path, "r", encoding="utf-8") as fh:
            class_names = json.load(fh)
        if not isinstance(class_names, list):
            raise ManifestError("class table must be a JSON list of names")
        return cls(entries=entries, class_names=class_names)

    def save(self, manifest_path, classes_path):
        with open(manifest_path, "w", encoding="utf-8") as fh:
            for path, label, split in self.entries:
                fh.write(json.dumps({"path": path, "label": label, "split": split}, sort_keys=True))
                fh.write("\n")
        with open(classes_path, "w", encoding="utf-8") as fh:
            json.dump(self.class_names, fh, indent=2)
            fh.write("\n")
