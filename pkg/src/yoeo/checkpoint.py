"""Flat binary tensor container.

Layout (all integers little-endian)::

    magic        4 bytes   b"YOEO"
    version      u32       1
    count        u64       number of tensor records
    record * count:
        name_len u32
        name     name_len bytes, UTF-8
        rank     u32
        dims     rank * u64
        data     prod(dims) * f64, little-endian, C order

Writes go to a temporary file in the same directory and are renamed into
place, so an interrupted save never leaves a truncated checkpoint.
"""

import os
import struct
import tempfile

import numpy as np

from .errors import LoadError

MAGIC = b"YOEO"
VERSION = 1


def encode_tensors(tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.require(np.asarray(arr, dtype="<f8"), requirements="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_tensors(blob: bytes) -> dict:
    if blob[:4] != MAGIC:
        raise LoadError("not a YOEO checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<IQ", blob, 4)
        if version != VERSION:
            raise LoadError(f"unsupported checkpoint version {version}")
        off = 16
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, off)
            off += 8 * rank
            size = int(np.prod(dims)) if rank else 1
            if off + 8 * size > len(blob):
                raise LoadError(f"tensor {name!r} is truncated")
            out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(dims).astype(np.float64)
            off += 8 * size
    except struct.error as exc:
        raise LoadError(f"truncated checkpoint: {exc}") from None
    if off != len(blob):
        raise LoadError(f"{len(blob) - off} trailing bytes after last tensor")
    return out


def atomic_write(path, data: bytes):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_tensors(path, tensors: dict):
    atomic_write(path, encode_tensors(tensors))


def load_tensors(path) -> dict:
    with open(path, "rb") as fh:
        return decode_tensors(fh.read())


def mlp_tensors(net, prefix) -> dict:
    return dict(zip(net.param_names(prefix), net.params))


def load_mlp_tensors(net, tensors, prefix):
    for name, p in zip(net.param_names(prefix), net.params):
        if name not in tensors:
            raise LoadError(f"checkpoint lacks tensor {name!r}")
        if tensors[name].shape != p.shape:
            raise LoadError(f"tensor {name!r} has shape {tensors[name].shape}, expected {p.shape}")
        p[...] = tensors[name]
