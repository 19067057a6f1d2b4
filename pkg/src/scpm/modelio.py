"""Versioned model container: a JSON header plus packed float32 arrays.

Layout (little-endian, documented in docs/formats.md):

    magic    4 bytes ASCII "SMF1"
    json_len u32
    json     UTF-8: {"kind", "format_version", "meta", "arrays": [
                 {"name", "shape"} ...]}
    data     arrays in listed order, C-order float32

Matrices are stored as float32, the same wire float as the PFV1 feature
container. The JSON is dumped with sorted keys and fixed separators so a
rerun with identical inputs produces an identical file.
"""

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"SMF1"
FORMAT_VERSION = 1


class ModelFormatError(Exception):
    pass


class ModelVersionError(ModelFormatError):
    pass


def save_model(path, kind: str, meta: dict, arrays: dict):
    """Atomically write a model file (temp file + rename)."""
    names = list(arrays.keys())
    header = {
        "kind": kind,
        "format_version": FORMAT_VERSION,
        "meta": meta,
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    dirname = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".smf-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for n in names:
                fh.write(np.ascontiguousarray(arrays[n], dtype="<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path, expect_kind: str | None = None):
    """Read a model file; returns (kind, meta, arrays as float64)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ModelFormatError(f"{path}: bad magic {magic!r}")
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise ModelFormatError(f"{path}: truncated header")
        (json_len,) = struct.unpack("<I", raw_len)
        blob = fh.read(json_len)
        if len(blob) != json_len:
            raise ModelFormatError(f"{path}: truncated header JSON")
        header = json.loads(blob.decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ModelVersionError(
                f"{path}: format version {header.get('format_version')}, "
                f"expected {FORMAT_VERSION}"
            )
        kind = header.get("kind")
        if expect_kind is not None and kind != expect_kind:
            raise ModelFormatError(f"{path}: kind {kind!r}, expected {expect_kind!r}")
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise ModelFormatError(f"{path}: truncated array {spec['name']!r}")
            arrays[spec["name"]] = (
                np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
            )
        return kind, header["meta"], arrays


def write_json_atomic(path, obj):
    """Deterministic JSON artifact writer (sorted keys, temp file + rename)."""
    dirname = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".json-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, sort_keys=True, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
