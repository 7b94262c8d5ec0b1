"""Versioned binary container: one JSON header line, then raw arrays.

Layout: a magic line naming the artifact kind, a JSON header holding
metadata and the array manifest (name, shape, dtype), a blank line, then
each array's bytes little-endian in manifest order.  Floats in the header
survive a round trip exactly because json uses repr formatting.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DataFormatError

_MAGIC_PREFIX = b"#flowtrader:"
_VERSION = 1

_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def write_blob(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    manifest = []
    payload = []
    for name, arr in arrays.items():
        dtype = "<i8" if np.issubdtype(arr.dtype, np.integer) else "<f8"
        cast = np.ascontiguousarray(arr, dtype=_DTYPES[dtype])
        manifest.append([name, list(arr.shape), dtype])
        payload.append(cast.tobytes())
    header = {"version": _VERSION, "meta": meta, "arrays": manifest}
    with open(path, "wb") as fh:
        fh.write(_MAGIC_PREFIX + kind.encode("ascii") + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for chunk in payload:
            fh.write(chunk)


def read_blob(path, expect_kind: str | None = None):
    """Return (kind, meta, arrays). Truncated or mislabeled files are rejected."""
    with open(path, "rb") as fh:
        magic = fh.readline()
        if not magic.startswith(_MAGIC_PREFIX):
            raise DataFormatError(f"{path}: not a flowtrader artifact")
        kind = magic[len(_MAGIC_PREFIX):].strip().decode("ascii")
        if expect_kind is not None and kind != expect_kind:
            raise DataFormatError(f"{path}: expected kind {expect_kind!r}, found {kind!r}")
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise DataFormatError(f"{path}: corrupt header") from None
        if header.get("version") != _VERSION:
            raise DataFormatError(f"{path}: unsupported version {header.get('version')!r}")
        arrays = {}
        for name, shape, dtype in header["arrays"]:
            if dtype not in _DTYPES:
                raise DataFormatError(f"{path}: unknown dtype {dtype!r}")
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise DataFormatError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(raw, dtype=_DTYPES[dtype]).reshape(shape).copy()
        if fh.read(1):
            raise DataFormatError(f"{path}: trailing bytes after last array")
    return kind, header["meta"], arrays
