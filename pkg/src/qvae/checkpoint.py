"""Binary checkpoint format.

Layout (little endian)::

    b"QVAE" | u32 format_version | u32 metadata_length | metadata | buffers

``metadata`` is UTF-8 ``key=value`` lines; structured values are JSON.
``buffers`` are the raw parameter arrays in declared layer order (each
quaternion layer as Wa, Wb, Wc, Wd, bias), followed by the Adam first and
second moment buffers in the same order. ``payload_crc32`` in the metadata
guards the buffers.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"QVAE"
FORMAT_VERSION = 1
LAYOUT_VERSION = 1
COMPONENT_ORDER = "Wa,Wb,Wc,Wd,bias"


@dataclass
class CheckpointData:
    meta: dict
    params: list  # [(name, ndarray)]
    moments1: list
    moments2: list


def atomic_write(path, data: bytes) -> None:
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


def encode(meta: dict, params, moments1, moments2, dtype) -> bytes:
    dtype = np.dtype(dtype).newbyteorder("<")
    arrays = [np.ascontiguousarray(a, dtype=dtype) for a in
              [p for _, p in params] + list(moments1) + list(moments2)]
    payload = b"".join(a.tobytes() for a in arrays)
    meta = dict(meta)
    meta.update({
        "dtype": dtype.name,
        "layout_version": LAYOUT_VERSION,
        "component_order": COMPONENT_ORDER,
        "params": [[name, list(p.shape)] for name, p in params],
        "has_optimizer": bool(moments1),
        "payload_crc32": zlib.crc32(payload),
    })
    text = "".join(f"{k}={json.dumps(v, sort_keys=True)}\n" for k, v in meta.items()).encode("utf-8")
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(text)) + text + payload


def save(path, meta: dict, params, moments1=(), moments2=(), dtype=np.float32) -> None:
    atomic_write(path, encode(meta, params, moments1, moments2, dtype))


def decode(blob: bytes) -> CheckpointData:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError("not a QVAE checkpoint (bad magic)")
    version, mlen = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    if 12 + mlen > len(blob):
        raise CheckpointError("truncated metadata block")
    try:
        meta = {}
        for line in blob[12:12 + mlen].decode("utf-8").splitlines():
            key, _, value = line.partition("=")
            meta[key] = json.loads(value)
        shapes = [(name, tuple(shape)) for name, shape in meta["params"]]
        dtype = np.dtype(meta["dtype"]).newbyteorder("<")
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt metadata: {exc}") from exc
    payload = blob[12 + mlen:]
    if zlib.crc32(payload) != meta.get("payload_crc32"):
        raise CheckpointError("payload checksum mismatch")
    sizes = [int(np.prod(s)) for _, s in shapes]
    groups = 3 if meta.get("has_optimizer") else 1
    if len(payload) != groups * sum(sizes) * dtype.itemsize:
        raise CheckpointError("payload length does not match declared parameters")
    flat = np.frombuffer(payload, dtype=dtype)
    arrays, offset = [], 0
    for _ in range(groups):
        for (_, shape), n in zip(shapes, sizes):
            arrays.append(flat[offset:offset + n].reshape(shape).astype(dtype.newbyteorder("=")))
            offset += n
    k = len(shapes)
    params = [(name, a) for (name, _), a in zip(shapes, arrays[:k])]
    m1 = arrays[k:2 * k] if groups == 3 else []
    m2 = arrays[2 * k:] if groups == 3 else []
    return CheckpointData(meta, params, m1, m2)


def load(path) -> CheckpointData:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    return decode(blob)
