"""Binary array container shared by every on-disk artifact.

Layout::

    8 bytes   magic (ASCII, right-padded with spaces)
    4 bytes   format version, little-endian uint32
    8 bytes   header length in bytes, little-endian uint64
    header    UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "dtype", "shape"}, ...]}
    payload   each array in header order, C (row-major) order, little-endian

Floats are always stored as float64 and integers as int64, so files are
byte-identical across runs for identical inputs.
"""

import json
import struct

import numpy as np

from .errors import ArtifactError

FORMAT_VERSION = 1

_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


def _canonical(arr):
    arr = np.asarray(arr)
    if arr.dtype.kind in "biu":
        return "i8", np.ascontiguousarray(arr, dtype=_DTYPES["i8"])
    if arr.dtype.kind == "f":
        return "f8", np.ascontiguousarray(arr, dtype=_DTYPES["f8"])
    raise ArtifactError(f"unsupported array dtype {arr.dtype}")


def write_container(path, magic, arrays, meta=None):
    """Write named arrays (a dict, order preserved) plus JSON metadata."""
    if len(magic) > 8:
        raise ValueError("magic must be at most 8 characters")
    entries = []
    payload = []
    for name, arr in arrays.items():
        code, data = _canonical(arr)
        entries.append({"name": name, "dtype": code, "shape": list(data.shape)})
        payload.append(data.tobytes(order="C"))
    header = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(magic.ljust(8).encode("ascii"))
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)


def read_container(path, magic=None):
    """Return ``(arrays, meta)``; raises ArtifactError on a bad file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20:
        raise ArtifactError(f"{path}: truncated container")
    found = raw[:8].decode("ascii", errors="replace").rstrip()
    if magic is not None and found != magic:
        raise ArtifactError(f"{path}: expected {magic!r} container, found {found!r}")
    (version,) = struct.unpack("<I", raw[8:12])
    if version != FORMAT_VERSION:
        raise ArtifactError(f"{path}: unsupported container version {version}")
    (hlen,) = struct.unpack("<Q", raw[12:20])
    try:
        header = json.loads(raw[20:20 + hlen].decode())
    except ValueError as exc:
        raise ArtifactError(f"{path}: corrupt header") from exc
    offset = 20 + hlen
    arrays = {}
    for entry in header.get("arrays", ()):
        try:
            dtype = _DTYPES[entry["dtype"]]
            shape = tuple(int(s) for s in entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ArtifactError(f"{path}: bad array entry {entry!r}") from exc
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise ArtifactError(f"{path}: payload shorter than header declares")
        arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype, count=count,
                                              offset=offset).reshape(shape).copy()
        offset += nbytes
    return arrays, header.get("meta", {})
