"""Checkpoint serialization.

Binary layout: magic "DWVA", u32 version, u32 tensor count; per tensor a
u16 name length, the UTF-8 name, a u8 dtype tag (0 = f32, 1 = f64), a u8
rank, u64 dims, then the raw little-endian payload; finally a u32 CRC32 of
everything after the 12-byte header. Optimizer moments ride along as
"opt/..." tensors and scalar run metadata as "meta/..." tensors, so one
flat namespace round-trips the whole training state bit-exactly.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import FormatError

MAGIC = b"DWVA"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}


@dataclass
class Checkpoint:
    params: dict                      # name -> float array
    opt_state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)   # str -> float scalar

    @property
    def stage(self):
        return int(self.meta.get("stage", 0))


def _flatten(ckpt: Checkpoint) -> dict:
    out = dict(ckpt.params)
    for name, arr in ckpt.opt_state.items():
        out[f"opt/{name}"] = np.asarray(arr, dtype=np.float64)
    for key, val in ckpt.meta.items():
        out[f"meta/{key}"] = np.asarray(float(val))
    return out


def _unflatten(tensors: dict) -> Checkpoint:
    ckpt = Checkpoint(params={})
    for name, arr in tensors.items():
        if name.startswith("opt/"):
            ckpt.opt_state[name[4:]] = arr
        elif name.startswith("meta/"):
            ckpt.meta[name[5:]] = float(arr)
        else:
            ckpt.params[name] = arr
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path):
    tensors = _flatten(ckpt)
    body = bytearray()
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype not in _TAGS:
            arr = arr.astype(np.float64)
        raw = name.encode("utf-8")
        body += struct.pack("<H", len(raw)) + raw
        body += struct.pack("<BB", _TAGS[arr.dtype], arr.ndim)
        body += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        body += np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
    header = MAGIC + struct.pack("<II", VERSION, len(tensors))
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(header + bytes(body) + struct.pack("<I", crc))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise FormatError("not a checkpoint file")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    body, crc_stored = blob[12:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise FormatError("checkpoint checksum mismatch")

    tensors = {}
    off = 0
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + nlen].decode("utf-8")
            off += nlen
            tag, rank = struct.unpack_from("<BB", body, off)
            off += 2
            if tag not in _DTYPES:
                raise FormatError(f"unknown dtype tag {tag}")
            dims = struct.unpack_from(f"<{rank}Q", body, off)
            off += 8 * rank
            dtype = _DTYPES[tag]
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            nbytes = n * dtype.itemsize
            if off + nbytes > len(body):
                raise FormatError("truncated checkpoint tensor")
            arr = np.frombuffer(body, dtype=dtype, count=n, offset=off).reshape(dims)
            tensors[name] = arr.astype(arr.dtype.newbyteorder("=")).copy()
            off += nbytes
    except struct.error as e:
        raise FormatError(f"truncated checkpoint: {e}") from e
    if off != len(body):
        raise FormatError("trailing bytes in checkpoint body")
    return _unflatten(tensors)
