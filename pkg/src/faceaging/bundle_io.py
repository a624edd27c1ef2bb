"""Binary serialization of a trained AgingBundle.

Layout: magic ``HFAB``, format version (u32), section count (u32), then
length-prefixed sections.  Each section is a name (u32 length + utf-8)
followed by a payload (u64 length + bytes).  Payloads are either JSON
(meta section) or an array block: u32 array count, then per array a
framed name, a framed dtype string, u32 ndim, u64 dims, raw
little-endian data.  Section order is sorted by name so the format is
deterministic and round-trips byte-identically.
"""

import io
import json
import struct

import numpy as np

from .errors import IoError

MAGIC = b"HFAB"
FORMAT_VERSION = 1


def _frame_bytes(out, data):
    out.write(struct.pack("<Q", len(data)))
    out.write(data)


def _frame_str(out, text):
    raw = text.encode("utf-8")
    out.write(struct.pack("<I", len(raw)))
    out.write(raw)


def _read_exact(buf, n):
    data = buf.read(n)
    if len(data) != n:
        raise IoError("truncated bundle file")
    return data


def _read_bytes(buf):
    (n,) = struct.unpack("<Q", _read_exact(buf, 8))
    return _read_exact(buf, n)


def _read_str(buf):
    (n,) = struct.unpack("<I", _read_exact(buf, 4))
    return _read_exact(buf, n).decode("utf-8")


def pack_arrays(arrays):
    """Serialize an ordered mapping of name -> ndarray."""
    out = io.BytesIO()
    out.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = "<f8" if arr.dtype.kind == "f" else "<i8"
        arr = arr.astype(dtype)
        _frame_str(out, name)
        _frame_str(out, dtype)
        out.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            out.write(struct.pack("<Q", dim))
        out.write(arr.tobytes(order="C"))
    return out.getvalue()


def unpack_arrays(payload):
    buf = io.BytesIO(payload)
    (count,) = struct.unpack("<I", _read_exact(buf, 4))
    arrays = {}
    for _ in range(count):
        name = _read_str(buf)
        dtype = _read_str(buf)
        (ndim,) = struct.unpack("<I", _read_exact(buf, 4))
        dims = tuple(struct.unpack("<Q", _read_exact(buf, 8))[0]
                     for _ in range(ndim))
        nbytes = int(np.prod(dims, dtype=np.int64)) * np.dtype(dtype).itemsize
        arrays[name] = np.frombuffer(_read_exact(buf, nbytes),
                                     dtype=dtype).reshape(dims).copy()
    return arrays


def write_sections(sections):
    """Serialize name -> payload bytes into the container format."""
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", FORMAT_VERSION))
    out.write(struct.pack("<I", len(sections)))
    for name in sorted(sections):
        _frame_str(out, name)
        _frame_bytes(out, sections[name])
    return out.getvalue()


def read_sections(data):
    buf = io.BytesIO(data)
    if _read_exact(buf, 4) != MAGIC:
        raise IoError("not a bundle file (bad magic)")
    (version,) = struct.unpack("<I", _read_exact(buf, 4))
    if version != FORMAT_VERSION:
        raise IoError("unsupported bundle format version %d" % version)
    (count,) = struct.unpack("<I", _read_exact(buf, 4))
    sections = {}
    for _ in range(count):
        name = _read_str(buf)
        sections[name] = _read_bytes(buf)
    return sections


def json_payload(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def parse_json_payload(payload):
    return json.loads(payload.decode("utf-8"))
