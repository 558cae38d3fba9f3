"""Binary checkpoint container.

Layout (little-endian)::

    b"DGTJ"  u32 version  u32 n_sections
    n_sections x { u32 name_len, name (utf-8), u64 payload_len, payload }

Sections named ``json:<key>`` hold UTF-8 JSON; ``array:<key>`` hold a single
``.npy`` payload, which round-trips float64 values bit-exactly.
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"DGTJ"
VERSION = 1


class CheckpointError(ValueError):
    pass


def pack(json_sections: dict, arrays: dict) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", VERSION, len(json_sections) + len(arrays)))

    def section(name: str, payload: bytes):
        nb = name.encode("utf-8")
        out.write(struct.pack("<I", len(nb)))
        out.write(nb)
        out.write(struct.pack("<Q", len(payload)))
        out.write(payload)

    for key, obj in json_sections.items():
        section(f"json:{key}", json.dumps(obj, sort_keys=True).encode("utf-8"))
    for key, arr in arrays.items():
        buf = io.BytesIO()
        np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
        section(f"array:{key}", buf.getvalue())
    return out.getvalue()


def unpack(data: bytes) -> tuple[dict, dict]:
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    at = 12
    js, arrays = {}, {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<I", data, at)
        at += 4
        name = data[at:at + ln].decode("utf-8")
        at += ln
        (pl,) = struct.unpack_from("<Q", data, at)
        at += 8
        payload = data[at:at + pl]
        if len(payload) != pl:
            raise CheckpointError(f"section {name!r} is truncated")
        at += pl
        kind, _, key = name.partition(":")
        if kind == "json":
            js[key] = json.loads(payload.decode("utf-8"))
        elif kind == "array":
            arrays[key] = np.lib.format.read_array(io.BytesIO(payload), allow_pickle=False)
        else:
            raise CheckpointError(f"unknown section kind in {name!r}")
    return js, arrays


def write_atomic(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, json_sections: dict, arrays: dict) -> None:
    write_atomic(path, pack(json_sections, arrays))


def load(path) -> tuple[dict, dict]:
    return unpack(Path(path).read_bytes())
