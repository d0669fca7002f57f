"""TrackVis ``.trk`` and JSON tractography files, and affine transforms.

The ``.trk`` header is 1000 bytes. Byte order is detected from the
``hdr_size`` field, which must read 1000. The body is a sequence of tracks,
each an int32 point count ``k`` followed by ``k * (3 + n_scalars)`` float32
values and ``n_properties`` float32 values. Coordinates are kept exactly as
stored; no voxel/world conversion is applied.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .geometry import GeometryError, Tractography

HEADER_SIZE = 1000
MAGIC = b"TRACK\x00"
INT32_MAX = 2**31 - 1

TRK_HEADER_DTYPE = np.dtype([
    ("id_string", "S6"),
    ("dim", "<i2", (3,)),
    ("voxel_size", "<f4", (3,)),
    ("origin", "<f4", (3,)),
    ("n_scalars", "<i2"),
    ("scalar_name", "S20", (10,)),
    ("n_properties", "<i2"),
    ("property_name", "S20", (10,)),
    ("vox_to_ras", "<f4", (4, 4)),
    ("reserved", "S444"),
    ("voxel_order", "S4"),
    ("pad2", "S4"),
    ("image_orientation_patient", "<f4", (6,)),
    ("pad1", "S2"),
    ("invert_x", "u1"),
    ("invert_y", "u1"),
    ("invert_z", "u1"),
    ("swap_xy", "u1"),
    ("swap_yz", "u1"),
    ("swap_zx", "u1"),
    ("n_count", "<i4"),
    ("version", "<i4"),
    ("hdr_size", "<i4"),
])
assert TRK_HEADER_DTYPE.itemsize == HEADER_SIZE


class TrkParseError(ValueError):
    """Malformed ``.trk`` data; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class SchemaError(ValueError):
    """JSON document does not follow the tractography schema."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# -- .trk ----------------------------------------------------------------------

def read_trk_header(data: bytes) -> np.ndarray:
    """Parse the 1000-byte header, returning a record in native field order.

    The returned record uses the file's byte order.
    """
    if len(data) < HEADER_SIZE:
        raise TrkParseError(f"file is {len(data)} bytes, shorter than the {HEADER_SIZE}-byte header",
                            len(data))
    if data[:6] != MAGIC:
        raise TrkParseError(f"bad magic {data[:6]!r}, expected {MAGIC!r}", 0)
    hdr = np.frombuffer(data, dtype=TRK_HEADER_DTYPE, count=1)[0]
    if hdr["hdr_size"] != HEADER_SIZE:
        swapped = np.frombuffer(data, dtype=TRK_HEADER_DTYPE.newbyteorder(">"), count=1)[0]
        if swapped["hdr_size"] != HEADER_SIZE:
            raise TrkParseError(
                f"hdr_size is {int(hdr['hdr_size'])} in either byte order, expected {HEADER_SIZE}", 996)
        hdr = swapped
    for field in ("n_scalars", "n_properties", "n_count"):
        if hdr[field] < 0:
            raise TrkParseError(f"{field} is negative ({int(hdr[field])})",
                                TRK_HEADER_DTYPE.fields[field][1])
    return hdr


def read_trk(data: bytes | bytearray | memoryview) -> Tractography:
    """Parse a ``.trk`` byte buffer.

    Raises :class:`TrkParseError` for a bad header, a truncated body, a
    negative point count, or a track count that disagrees with ``n_count``.
    """
    data = bytes(data)
    hdr = read_trk_header(data)
    big = hdr.dtype["hdr_size"].byteorder == ">"
    i4 = np.dtype(">i4" if big else "<i4")
    f4 = np.dtype(">f4" if big else "<f4")
    n_s = int(hdr["n_scalars"])
    n_p = int(hdr["n_properties"])
    n_count = int(hdr["n_count"])

    streamlines, scalars, properties = [], [], []
    pos = HEADER_SIZE
    end = len(data)
    while pos < end and (n_count == 0 or len(streamlines) < n_count):
        if pos + 4 > end:
            raise TrkParseError("truncated point count", pos)
        k = int(np.frombuffer(data, dtype=i4, count=1, offset=pos)[0])
        if k < 0:
            raise TrkParseError(f"negative point count {k}", pos)
        if k == 0:
            raise TrkParseError("track with zero points", pos)
        pos += 4
        n_vals = k * (3 + n_s) + n_p
        if pos + 4 * n_vals > end:
            raise TrkParseError(
                f"track {len(streamlines)} needs {4 * n_vals} bytes, {end - pos} left", pos)
        pts = np.frombuffer(data, dtype=f4, count=k * (3 + n_s), offset=pos).reshape(k, 3 + n_s)
        pos += 4 * k * (3 + n_s)
        props = np.frombuffer(data, dtype=f4, count=n_p, offset=pos)
        pos += 4 * n_p
        streamlines.append(pts[:, :3].astype(np.float64))
        if n_s:
            scalars.append(pts[:, 3:].astype(np.float32))
        if n_p:
            properties.append(props.astype(np.float32))

    if n_count and len(streamlines) != n_count:
        raise TrkParseError(f"header announces {n_count} tracks, found {len(streamlines)}", pos)
    if pos != end:
        raise TrkParseError(f"{end - pos} trailing bytes after {n_count} tracks", pos)
    if not streamlines:
        raise TrkParseError("file contains no tracks", pos)

    metadata = {
        "dim": hdr["dim"].astype(int).tolist(),
        "origin": hdr["origin"].astype(float).tolist(),
        "vox_to_ras": hdr["vox_to_ras"].astype(float).tolist(),
        "voxel_order": hdr["voxel_order"].decode("latin-1"),
        "version": int(hdr["version"]),
        "byte_order": "big" if big else "little",
    }
    if n_s:
        metadata["scalar_names"] = _names(hdr["scalar_name"], n_s)
        metadata["scalars"] = scalars
    if n_p:
        metadata["property_names"] = _names(hdr["property_name"], n_p)
        metadata["properties"] = properties

    vs = hdr["voxel_size"].astype(float)
    voxel_size = tuple(vs.tolist()) if np.all(vs > 0) else None
    return Tractography(streamlines, voxel_size=voxel_size, metadata=metadata)


def _names(raw, n):
    return [bytes(x).split(b"\x00", 1)[0].decode("latin-1") for x in raw[: min(n, 10)]]


def write_trk(t: Tractography) -> bytes:
    """Serialize as a little-endian ``.trk`` v2 with no scalars or properties."""
    hdr = np.zeros((), dtype=TRK_HEADER_DTYPE)
    hdr["id_string"] = MAGIC
    hdr["voxel_size"] = t.voxel_size if t.voxel_size is not None else (1.0, 1.0, 1.0)
    if "dim" in t.metadata:
        hdr["dim"] = t.metadata["dim"]
    if "vox_to_ras" in t.metadata:
        hdr["vox_to_ras"] = t.metadata["vox_to_ras"]
    hdr["voxel_order"] = b"LAS"
    hdr["n_count"] = len(t)
    hdr["version"] = 2
    hdr["hdr_size"] = HEADER_SIZE

    parts = [hdr.tobytes()]
    for idx, s in enumerate(t):
        if len(s) > INT32_MAX:
            raise GeometryError(f"streamline {idx} has {len(s)} points, more than int32 allows")
        parts.append(np.int32(len(s)).astype("<i4").tobytes())
        parts.append(np.ascontiguousarray(s, dtype="<f4").tobytes())
    return b"".join(parts)


def load_trk(path) -> Tractography:
    return read_trk(Path(path).read_bytes())


# -- JSON ----------------------------------------------------------------------

def to_json_obj(t: Tractography) -> dict:
    obj: dict = {}
    if t.name is not None:
        obj["name"] = t.name
    if t.voxel_size is not None:
        obj["voxel_size"] = list(t.voxel_size)
    obj["streamlines"] = [s.tolist() for s in t]
    return obj


def write_json(t: Tractography) -> str:
    """JSON text for ``t``. Floats use Python's shortest round-trip repr."""
    return json.dumps(to_json_obj(t))


def _number(x, path):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise SchemaError(path, f"expected a number, got {type(x).__name__}")
    if not math.isfinite(x):
        raise SchemaError(path, "number is not finite")
    return float(x)


def _point(p, path):
    if not isinstance(p, list) or len(p) != 3:
        raise SchemaError(path, "expected a list of 3 numbers")
    return [_number(v, f"{path}[{k}]") for k, v in enumerate(p)]


def from_json_obj(obj) -> Tractography:
    if not isinstance(obj, dict):
        raise SchemaError("$", "expected an object")
    unknown = set(obj) - {"name", "voxel_size", "streamlines"}
    if unknown:
        raise SchemaError("$", f"unknown keys {sorted(unknown)}")
    if "streamlines" not in obj:
        raise SchemaError("$", "missing required key 'streamlines'")
    name = obj.get("name")
    if name is not None and not isinstance(name, str):
        raise SchemaError("$.name", "expected a string")
    voxel_size = obj.get("voxel_size")
    if voxel_size is not None:
        voxel_size = _point(voxel_size, "$.voxel_size")
        if min(voxel_size) <= 0:
            raise SchemaError("$.voxel_size", "components must be > 0")
    sls = obj["streamlines"]
    if not isinstance(sls, list) or not sls:
        raise SchemaError("$.streamlines", "expected a non-empty list")
    streamlines = []
    for i, s in enumerate(sls):
        if not isinstance(s, list) or not s:
            raise SchemaError(f"$.streamlines[{i}]", "expected a non-empty list of points")
        streamlines.append([_point(p, f"$.streamlines[{i}][{j}]") for j, p in enumerate(s)])
    return Tractography(streamlines, voxel_size=voxel_size, name=name)


def read_json(text: str) -> Tractography:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from None
    return from_json_obj(obj)


def load_tractography(path) -> Tractography:
    """Load a ``.trk`` or ``.json`` file, chosen by extension."""
    path = Path(path)
    if path.suffix.lower() == ".trk":
        return load_trk(path)
    if path.suffix.lower() == ".json":
        return read_json(path.read_text(encoding="utf-8"))
    raise ValueError(f"unsupported tractography extension {path.suffix!r} (use .trk or .json)")


def dump_tractography(t: Tractography, path) -> bytes:
    """Serialized bytes of ``t`` in the format implied by ``path``'s extension."""
    suffix = Path(path).suffix.lower()
    if suffix == ".trk":
        return write_trk(t)
    if suffix == ".json":
        return write_json(t).encode("utf-8")
    raise ValueError(f"unsupported tractography extension {suffix!r} (use .trk or .json)")


# -- affine --------------------------------------------------------------------

def as_affine(m) -> np.ndarray:
    """Validate a 4x4 affine: last row (0, 0, 0, 1), invertible linear part."""
    a = np.asarray(m, dtype=np.float64)
    if a.shape != (4, 4):
        raise GeometryError(f"affine must be 4x4, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GeometryError("affine has non-finite entries")
    if not np.array_equal(a[3], [0.0, 0.0, 0.0, 1.0]):
        raise GeometryError(f"affine last row must be (0, 0, 0, 1), got {a[3].tolist()}")
    if abs(np.linalg.det(a[:3, :3])) <= 1e-12:
        raise GeometryError("affine is not invertible")
    return a


def apply_affine(t: Tractography, m) -> Tractography:
    """Map every point of ``t`` through ``m`` in homogeneous coordinates."""
    a = as_affine(m)
    lin, shift = a[:3, :3], a[:3, 3]
    return t.replace_streamlines([s @ lin.T + shift for s in t])


def load_affine(path) -> np.ndarray:
    """Read a 4x4 affine from JSON (nested list) or whitespace-separated text."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        values = json.loads(text)
    else:
        values = np.loadtxt(path.open(encoding="utf-8"))
    return as_affine(values)
