"""PFV1 writer and manifest reader, implemented from the pipeline's format
doc (docs/formats.md in the consumer repo). Little-endian throughout;
text fields are u32-length-prefixed UTF-8; values are float32 in C order
over (row, column, channel).
"""

import json
import struct

import numpy as np

MAGIC = b"PFV1"
VERSION = 1
SPLIT_CODE = {"train": 0, "test": 1}


class ContainerWriteError(ValueError):
    pass


def _write_text(fh, text: str):
    data = text.encode("utf-8")
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)


class Pfv1Writer:
    """Streams image records; one proposal's payload in memory at a time."""

    def __init__(self, path, comment: str = ""):
        self._fh = open(path, "wb")
        self._fh.write(MAGIC)
        self._fh.write(struct.pack("<B", VERSION))
        _write_text(self._fh, comment)

    def write_image(self, image_id: str, label: int, split: str, proposals):
        """`proposals`: iterable of (box, values) with values (N, N, d)."""
        if not image_id:
            raise ContainerWriteError("image_id must be non-empty")
        if label < 0:
            raise ContainerWriteError("label must be >= 0")
        if split not in SPLIT_CODE:
            raise ContainerWriteError(f"unknown split {split!r}")
        proposals = list(proposals)
        if not proposals:
            raise ContainerWriteError("at least one proposal required")
        _write_text(self._fh, image_id)
        self._fh.write(struct.pack("<IBI", label, SPLIT_CODE[split], len(proposals)))
        for box, values in proposals:
            x0, y0, x1, y1 = box
            if x0 < 0 or y0 < 0 or x1 <= x0 or y1 <= y0:
                raise ContainerWriteError(f"degenerate box {box}")
            grid, grid2, channels = values.shape
            if grid != grid2 or grid < 1 or channels < 1:
                raise ContainerWriteError(f"bad feature-map shape {values.shape}")
            self._fh.write(struct.pack("<iiiiII", x0, y0, x1, y1, grid, channels))
            self._fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_manifest(path) -> list:
    """JSON-lines manifest -> list of (image path, label, split)."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            entries.append((obj["path"], int(obj["label"]), obj["split"]))
    return entries
