"""On-disk formats.

WLOG raw container (little-endian)::

    magic   4 bytes  b"WLOG"
    version u16      1
    dtype   u8       0 = float32, 1 = float64, 2 = uint8
    ndims   u8
    dims    u32 * ndims
    payload product(dims) values, first axis fastest

A file may hold several containers back to back (model checkpoints do).
Volumes are stored with dims ``(nx, ny, nz)``; 2-D images as ``(nx, ny)``,
i.e. the transpose of the ``[row, col]`` array.

Detection records and manifests are JSON Lines with sorted keys.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, MagicError, TruncationError, VersionError
from .extract import EllipseDetection
from .raster import DensityVolume, Ellipse
from .synthesis import DatasetManifest

MAGIC = b"WLOG"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_HEAD = struct.Struct("<4sHBB")

SOURCES = ("ground_truth", "detector", "tracker")
DETECTION_VERSION = 1


def atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write(path, text.encode("utf-8"))


# ----------------------------------------------------------------------------
# WLOG


def encode_array(arr) -> bytes:
    arr = np.asarray(arr)
    for code, dt in DTYPES.items():
        if arr.dtype == dt.newbyteorder("="):
            break
    else:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    head = _HEAD.pack(MAGIC, VERSION, code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype(dt, copy=False).tobytes(order="F")


def decode_arrays(buf: bytes) -> list:
    out, pos = [], 0
    while pos < len(buf):
        arr, pos = _decode_one(buf, pos)
        out.append(arr)
    return out


def _decode_one(buf: bytes, pos: int):
    if len(buf) - pos < _HEAD.size:
        raise TruncationError("file too short for a WLOG header")
    magic, version, code, ndims = _HEAD.unpack_from(buf, pos)
    if magic != MAGIC:
        raise MagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"unsupported WLOG version {version}")
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    pos += _HEAD.size
    if len(buf) - pos < 4 * ndims:
        raise TruncationError("truncated dims")
    dims = struct.unpack_from(f"<{ndims}I", buf, pos)
    pos += 4 * ndims
    dt = DTYPES[code]
    n = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(buf) - pos < n:
        raise TruncationError(f"payload has {len(buf) - pos} bytes, expected {n}")
    arr = np.frombuffer(buf, dtype=dt, count=n // dt.itemsize, offset=pos).reshape(dims, order="F")
    return arr.astype(dt.newbyteorder("="), copy=True), pos + n


def write_array(arr, path):
    atomic_write(path, encode_array(arr))


def read_array(path) -> np.ndarray:
    arrays = decode_arrays(Path(path).read_bytes())
    if len(arrays) != 1:
        raise FormatError(f"expected one container, found {len(arrays)}")
    return arrays[0]


def write_volume(volume, path):
    data = volume.data if isinstance(volume, DensityVolume) else np.asarray(volume)
    write_array(data, path)


def read_volume(path, **geometry) -> DensityVolume:
    arr = read_array(path)
    if arr.ndim != 3:
        raise FormatError(f"expected a 3-D volume, got {arr.ndim} dims")
    return DensityVolume(arr, **geometry)


def write_records(arrays, path):
    atomic_write(path, b"".join(encode_array(a) for a in arrays))


def read_records(path) -> list:
    return decode_arrays(Path(path).read_bytes())


def encode_json_record(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8)


def decode_json_record(arr) -> dict:
    if arr.dtype != np.uint8 or arr.ndim != 1:
        raise FormatError("expected a uint8 JSON record")
    return json.loads(arr.tobytes().decode("utf-8"))


# ----------------------------------------------------------------------------
# VTK


def export_vtk(volume: DensityVolume, path, binary: bool = False, title: str = "barkknots density"):
    """Legacy VTK structured-points file (x varies fastest)."""
    data = np.asarray(volume.data, dtype=np.float32)
    nx, ny, nz = data.shape
    sx, sy, sz = volume.spacing
    ox, oy, oz = volume.origin
    head = (
        "# vtk DataFile Version 3.0\n"
        f"{title}\n"
        f"{'BINARY' if binary else 'ASCII'}\n"
        "DATASET STRUCTURED_POINTS\n"
        f"DIMENSIONS {nx} {ny} {nz}\n"
        f"SPACING {sx!r} {sy!r} {sz!r}\n"
        f"ORIGIN {ox!r} {oy!r} {oz!r}\n"
        f"POINT_DATA {nx * ny * nz}\n"
        "SCALARS density float 1\n"
        "LOOKUP_TABLE default\n"
    ).encode("ascii")
    flat = data.ravel(order="F")
    if binary:
        body = flat.astype(">f4").tobytes() + b"\n"
    else:
        # repr of float32 round-trips exactly
        lines = [" ".join(repr(float(v)) for v in flat[i : i + 9]) for i in range(0, flat.size, 9)]
        body = ("\n".join(lines) + "\n").encode("ascii")
    try:
        atomic_write(path, head + body)
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc}") from exc


# ----------------------------------------------------------------------------
# detections & manifests


def detection_to_record(det: EllipseDetection, log_id: str, source: str, image_size: int) -> dict:
    if source not in SOURCES:
        raise FormatError(f"unknown source {source!r}")
    e = det.ellipse
    return {
        "version": DETECTION_VERSION,
        "log_id": log_id,
        "z_index": int(det.z_index),
        "box": [float(v) for v in det.box],
        "ellipse": {"cx": e.cx, "cy": e.cy, "a": e.a, "b": e.b, "angle": e.angle},
        "score": float(det.score),
        "source": source,
        "image_size": int(image_size),
    }


_FIELDS = ("version", "log_id", "z_index", "box", "ellipse", "score", "source", "image_size")


def record_to_detection(rec: dict) -> EllipseDetection:
    missing = [f for f in _FIELDS if f not in rec]
    if missing:
        raise FormatError(f"detection record missing fields {missing}")
    if rec["version"] != DETECTION_VERSION:
        raise FormatError(f"unsupported detection record version {rec['version']!r}")
    if rec["source"] not in SOURCES:
        raise FormatError(f"unknown source {rec['source']!r}")
    box = tuple(float(v) for v in rec["box"])
    if len(box) != 4:
        raise FormatError("box must have 4 coordinates")
    size = rec["image_size"]
    lo, hi = -0.5, size - 0.5
    if not all(lo - 1e-9 <= v <= hi + 1e-9 for v in box):
        raise FormatError(f"box {box} outside a {size}x{size} image")
    el = rec["ellipse"]
    try:
        return EllipseDetection(
            int(rec["z_index"]),
            box,
            Ellipse(float(el["cx"]), float(el["cy"]), float(el["a"]), float(el["b"]), float(el["angle"])),
            float(rec["score"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad detection record: {exc}") from exc


def write_detections(records, path):
    atomic_write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def read_detections(path) -> list:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"line {n}: {exc}") from exc
        record_to_detection(rec)
        out.append(rec)
    return out


def write_manifest(manifest: DatasetManifest, path):
    atomic_write_text(path, "".join(ln + "\n" for ln in manifest.to_lines()))


def read_manifest(path) -> DatasetManifest:
    try:
        return DatasetManifest.from_lines(Path(path).read_text().splitlines())
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad manifest {path}: {exc}") from exc
