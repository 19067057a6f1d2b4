import io
import json
import struct

import numpy as np
import pytest

from scpm.featio import (
    ContainerError,
    BadMagicError,
    DatasetManifest,
    ImageRecord,
    ManifestError,
    ProposalRecord,
    RecordInvariantError,
    TruncatedRecordError,
    VersionMismatchError,
    read_features,
    read_header_comment,
    write_features,
)


def make_record(image_id="img-0", label=0, split="train", grid=2, channels=3, seed=0, n_props=1):
    rng = np.random.default_rng(seed)
    props = [
        ProposalRecord(
            box=(0, 0, 224, 224),
            grid=grid,
            channels=channels,
            values=rng.normal(size=(grid, grid, channels)).astype(np.float32),
        )
        for _ in range(n_props)
    ]
    return ImageRecord(image_id=image_id, label=label, split=split, proposals=props)


def roundtrip(records, comment=""):
    buf = io.BytesIO()
    write_features(records, buf, comment=comment)
    buf.seek(0)
    return list(read_features(buf))


class TestRoundTrip:
    def test_identity(self, tmp_path):
        records = [
            make_record("a", 0, "train", grid=3, channels=4, seed=1, n_props=2),
            make_record("b", 1, "test", grid=1, channels=1, seed=2),
        ]
        path = tmp_path / "feats.pfv"
        write_features(records, path, comment="unit test")
        got = list(read_features(path))
        assert [r.image_id for r in got] == ["a", "b"]
        assert [r.label for r in got] == [0, 1]
        assert [r.split for r in got] == ["train", "test"]
        for orig, back in zip(records, got):
            assert len(orig.proposals) == len(back.proposals)
            for po, pb in zip(orig.proposals, back.proposals):
                assert po.box == pb.box
                assert po.grid == pb.grid and po.channels == pb.channels
                # bit-exact float32 payload
                assert np.array_equal(po.values, pb.values)
        assert read_header_comment(path) == "unit test"

    def test_smallest_record_payload_is_8_bytes(self):
        rec = ImageRecord(
            image_id="x",
            label=0,
            split="train",
            proposals=[
                ProposalRecord(
                    box=(0, 0, 1, 1),
                    grid=1,
                    channels=2,
                    values=np.array([[[0.5, -1.0]]], dtype=np.float32),
                )
            ],
        )
        buf = io.BytesIO()
        write_features([rec], buf)
        data = buf.getvalue()
        # header: magic 4 + version 1 + comment 4; record: id 4+1,
        # label/split/count 9, box 16, grid+channels 8, then the values
        overhead = 4 + 1 + 4 + (4 + 1) + 9 + 16 + 8
        assert len(data) - overhead == 8
        (back,) = roundtrip([rec])
        assert np.array_equal(back.proposals[0].values, rec.proposals[0].values)

    def test_conv5_sized_proposal(self):
        rec = make_record(grid=13, channels=512, seed=3)
        (back,) = roundtrip([rec])
        assert back.proposals[0].values.size == 13 * 13 * 512 == 86528

    def test_round_trip_random_records(self):
        rng = np.random.default_rng(7)
        records = [
            make_record(f"im{i}", int(rng.integers(5)), ("train", "test")[i % 2],
                        grid=int(rng.integers(1, 6)), channels=int(rng.integers(1, 9)),
                        seed=100 + i, n_props=int(rng.integers(1, 4)))
            for i in range(10)
        ]
        got = roundtrip(records)
        for orig, back in zip(records, got):
            for po, pb in zip(orig.proposals, back.proposals):
                assert np.array_equal(po.values, pb.values)


class TestErrors:
    def test_bad_magic(self):
        buf = io.BytesIO(b"NOPE" + b"\x00" * 20)
        with pytest.raises(BadMagicError):
            next(read_features(buf))

    def test_version_mismatch(self):
        buf = io.BytesIO()
        write_features([make_record()], buf)
        raw = bytearray(buf.getvalue())
        raw[4] = 99
        with pytest.raises(VersionMismatchError):
            next(read_features(io.BytesIO(bytes(raw))))

    def test_zero_proposal_count_rejected_by_reader(self):
        buf = io.BytesIO()
        write_features([make_record("z")], buf)
        raw = bytearray(buf.getvalue())
        # image header sits after magic+version+comment+id; proposal count
        # is the last u32 of the 9-byte label/split/count block
        offset = 4 + 1 + 4 + (4 + 1) + 5
        raw[offset : offset + 4] = struct.pack("<I", 0)
        with pytest.raises(ContainerError, match="zero proposals"):
            list(read_features(io.BytesIO(bytes(raw))))

    def test_truncated_final_proposal_names_image(self):
        buf = io.BytesIO()
        write_features([make_record("victim", grid=4, channels=8)], buf)
        raw = buf.getvalue()[:-10]
        with pytest.raises(TruncatedRecordError) as exc:
            list(read_features(io.BytesIO(raw)))
        assert "victim" in str(exc.value)
        assert exc.value.image_id == "victim"

    def test_invariants_rejected_before_write(self):
        bad = make_record()
        bad.image_id = ""
        with pytest.raises(RecordInvariantError):
            write_features([bad], io.BytesIO())
        bad = make_record()
        bad.label = -1
        with pytest.raises(RecordInvariantError):
            write_features([bad], io.BytesIO())
        bad = make_record()
        bad.proposals = []
        with pytest.raises(RecordInvariantError):
            write_features([bad], io.BytesIO())
        bad = make_record(grid=2, channels=3)
        bad.proposals[0].values = bad.proposals[0].values[:1]
        with pytest.raises(RecordInvariantError):
            write_features([bad], io.BytesIO())
        bad = make_record()
        bad.proposals[0].box = (5, 5, 5, 10)
        with pytest.raises(RecordInvariantError):
            write_features([bad], io.BytesIO())


class _ChunkTracker(io.BytesIO):
    """Records the largest single read(n) request."""

    def __init__(self, data):
        super().__init__(data)
        self.max_request = 0

    def read(self, n=-1):
        if n and n > 0:
            self.max_request = max(self.max_request, n)
        return super().read(n)


def test_reader_streams_one_proposal_at_a_time():
    records = [make_record(f"im{i}", grid=6, channels=16, seed=i) for i in range(20)]
    buf = io.BytesIO()
    write_features(records, buf)
    tracker = _ChunkTracker(buf.getvalue())
    stream = read_features(tracker)
    first = next(stream)
    assert first.image_id == "im0"
    payload = 4 * 6 * 6 * 16
    # nothing beyond one proposal's value payload is requested in one call,
    # and the first record must not force reading the whole file
    assert tracker.max_request <= payload
    assert tracker.tell() < len(buf.getvalue()) / 2


class TestManifest:
    def test_round_trip(self, tmp_path):
        manifest = DatasetManifest(
            entries=[("a.jpg", 0, "train"), ("b.jpg", 1, "test")],
            class_names=["cat", "dog"],
        )
        mp, cp = tmp_path / "manifest.jsonl", tmp_path / "classes.json"
        manifest.save(mp, cp)
        back = DatasetManifest.load(mp, cp)
        assert back.entries == manifest.entries
        assert back.class_names == ["cat", "dog"]
        back.validate(for_training=True)
        # one JSON object per line
        lines = mp.read_text().strip().splitlines()
        assert len(lines) == 2
        assert json.loads(lines[0])["path"] == "a.jpg"

    def test_labels_must_be_dense(self):
        manifest = DatasetManifest(
            entries=[("a.jpg", 0, "train"), ("b.jpg", 2, "test")],
            class_names=["x", "y", "z"],
        )
        with pytest.raises(ManifestError):
            manifest.validate()

    def test_training_needs_both_splits(self):
        manifest = DatasetManifest(entries=[("a.jpg", 0, "train"), ("b.jpg", 1, "train")],
                                   class_names=["x", "y"])
        manifest.validate()
        with pytest.raises(ManifestError):
            manifest.validate(for_training=True)

    def test_bad_lines_rejected(self, tmp_path):
        mp, cp = tmp_path / "m.jsonl", tmp_path / "c.json"
        mp.write_text('{"path": "a.jpg", "label": 0}\n')
        cp.write_text('["x"]')
        with pytest.raises(ManifestError):
            DatasetManifest.load(mp, cp)
