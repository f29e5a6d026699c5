import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from barkknots import io
from barkknots.errors import FormatError, MagicError, TruncationError, VersionError
from barkknots.extract import EllipseDetection, fit_ellipse_to_bbox
from barkknots.raster import DensityVolume
from barkknots.synthesis import forge_dataset


def test_volume_round_trip(tmp_path):
    v = DensityVolume(np.random.default_rng(0).random((8, 8, 8), dtype=np.float32))
    p = tmp_path / "v.wlog"
    io.write_volume(v, p)
    back = io.read_volume(p)
    assert back.data.dtype == np.float32
    assert back.data.tobytes() == v.data.tobytes()


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from([np.float32, np.float64, np.uint8]).flatmap(
        lambda dt: arrays(dt, st.lists(st.integers(1, 5), min_size=1, max_size=4).map(tuple))
    )
)
def test_encode_decode_bit_exact(arr):
    (back,) = io.decode_arrays(io.encode_array(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_header_layout_and_x_fastest():
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)  # dims (nx=2, ny=3)
    buf = io.encode_array(arr)
    magic, version, code, ndims = struct.unpack_from("<4sHBB", buf)
    assert (magic, version, code, ndims) == (b"WLOG", 1, 0, 2)
    assert struct.unpack_from("<2I", buf, 8) == (2, 3)
    payload = np.frombuffer(buf, "<f4", offset=16)
    # x varies fastest: (0,0), (1,0), (0,1), ...
    assert payload.tolist() == [arr[x, y] for y in range(3) for x in range(2)]


def test_full_size_payload():
    header = 8 + 3 * 4
    n = len(io.encode_array(np.zeros((256, 256, 64), np.float32)))
    assert n - header == 16_777_216 == 256 * 256 * 64 * 4


def test_truncated_file(tmp_path):
    p = tmp_path / "v.wlog"
    io.write_array(np.ones((4, 4, 4), np.float32), p)
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(TruncationError):
        io.read_array(p)


def test_bad_magic_and_version():
    buf = bytearray(io.encode_array(np.ones(3, np.float32)))
    with pytest.raises(MagicError):
        io.decode_arrays(b"WLOX" + bytes(buf[4:]))
    buf[4:6] = struct.pack("<H", 2)
    with pytest.raises(VersionError):
        io.decode_arrays(bytes(buf))


def test_error_types_are_distinct():
    assert len({MagicError, VersionError, TruncationError}) == 3
    assert all(issubclass(e, FormatError) for e in (MagicError, VersionError, TruncationError))


def test_unsupported_dtype():
    with pytest.raises(FormatError):
        io.encode_array(np.zeros(3, np.int64))


def test_multiple_records(tmp_path):
    p = tmp_path / "r.wlog"
    meta = {"a": 1, "b": [1, 2]}
    arrays_ = [io.encode_json_record(meta), np.arange(5.0), np.ones((2, 2), np.float32)]
    io.write_records(arrays_, p)
    back = io.read_records(p)
    assert io.decode_json_record(back[0]) == meta
    assert np.array_equal(back[1], arrays_[1]) and np.array_equal(back[2], arrays_[2])
    with pytest.raises(FormatError):
        io.read_array(p)


def test_read_volume_rejects_2d(tmp_path):
    p = tmp_path / "img.wlog"
    io.write_array(np.zeros((4, 4), np.float32), p)
    with pytest.raises(FormatError):
        io.read_volume(p)


# VTK -----------------------------------------------------------------------------------------


def parse_vtk(path):
    raw = path.read_bytes()
    lines = raw.split(b"\n")
    head = [ln.decode() for ln in lines[:10]]
    body_start = sum(len(ln) + 1 for ln in lines[:10])
    fields = {h.split()[0]: h.split()[1:] for h in head[3:10]}
    mode = head[2]
    n = int(fields["POINT_DATA"][0])
    if mode == "ASCII":
        values = np.array(raw[body_start:].split(), dtype=np.float32)
    else:
        values = np.frombuffer(raw, ">f4", count=n, offset=body_start).astype(np.float32)
    return head, fields, values


@pytest.mark.parametrize("binary", [False, True])
def test_vtk_reparses_to_payload_order(tmp_path, binary):
    data = np.random.default_rng(5).random((5, 4, 3), dtype=np.float32)
    vol = DensityVolume(data, extent=1.0, z_range=(0.0, 3.0))
    p = tmp_path / "v.vtk"
    io.export_vtk(vol, p, binary=binary)
    head, fields, values = parse_vtk(p)
    assert head[0] == "# vtk DataFile Version 3.0"
    assert head[3] == "DATASET STRUCTURED_POINTS"
    assert fields["DIMENSIONS"] == ["5", "4", "3"]
    assert int(fields["POINT_DATA"][0]) == 60
    assert [float(v) for v in fields["SPACING"]] == pytest.approx([0.4, 0.5, 1.0])
    assert head[8] == "SCALARS density float 1" and head[9] == "LOOKUP_TABLE default"
    assert values.tobytes() == data.ravel(order="F").tobytes()
    wlog_payload = io.encode_array(data)[8 + 12 :]
    assert values.astype("<f4").tobytes() == wlog_payload


def test_vtk_write_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        io.export_vtk(DensityVolume(np.zeros((2, 2, 2), np.float32)), blocker / "v.vtk")


# detections and manifests -----------------------------------------------------------------------


def make_det(z=3, box=(10.0, 20.0, 30.0, 40.0), score=0.8):
    return EllipseDetection(z, box, fit_ellipse_to_bbox(box), score)


def test_detection_record_round_trip(tmp_path):
    recs = [io.detection_to_record(make_det(z), "log-k2-0000", "detector", 256) for z in range(3)]
    p = tmp_path / "d.jsonl"
    io.write_detections(recs, p)
    back = io.read_detections(p)
    assert back == recs
    assert io.record_to_detection(back[1]) == make_det(1)
    line = p.read_text().splitlines()[0]
    assert list(json.loads(line)) == sorted(json.loads(line))


@pytest.mark.parametrize(
    "mutate",
    [
        lambda r: r.pop("score"),
        lambda r: r.update(source="oracle"),
        lambda r: r.update(version=99),
        lambda r: r.update(box=[0, 0, 300, 10]),
        lambda r: r.update(box=[0, 0, 1]),
        lambda r: r.update(ellipse={"cx": 1}),
    ],
)
def test_bad_detection_records(mutate):
    rec = io.detection_to_record(make_det(), "x", "ground_truth", 256)
    mutate(rec)
    with pytest.raises(FormatError):
        io.record_to_detection(rec)


def test_malformed_jsonl(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text("{not json\n")
    with pytest.raises(FormatError):
        io.read_detections(p)


def test_manifest_round_trip(tmp_path):
    man = forge_dataset(2, (2, 3), master_seed=1)
    p = tmp_path / "m.jsonl"
    io.write_manifest(man, p)
    assert io.read_manifest(p).to_lines() == man.to_lines()
    for bad in ('{"id": 1}\n', '{"version": 1, "id": "a"}\n', "[1, 2\n"):
        p.write_text(bad)
        with pytest.raises(FormatError):
            io.read_manifest(p)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    p = tmp_path / "sub" / "a.bin"
    io.atomic_write(p, b"abc")
    io.atomic_write(p, b"def")
    assert p.read_bytes() == b"def"
    assert sorted(x.name for x in p.parent.iterdir()) == ["a.bin"]
