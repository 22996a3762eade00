"""VGCK checkpoint format.

Layout (little-endian): magic ``VGCK``, u32 version (1), u32 tensor count;
then per tensor, in lexicographic name order: u16 name length, UTF-8 name,
u8 rank, rank x u32 dims, row-major f32 payload; finally a u32 CRC32 of every
preceding byte.
"""
import struct
import zlib

import numpy as np

MAGIC = b"VGCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(tensors):
    """Serialize a ``{name: array}`` mapping to bytes."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4", order="C")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"tensor {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode(blob):
    """Parse bytes produced by :func:`encode`; verifies magic, version and CRC."""
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError("not a VGCK checkpoint")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", body, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(body, dtype="<f4", count=size, offset=pos).reshape(dims)
            pos += 4 * size
            out[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if pos != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    return out


def save(path, tensors):
    with open(path, "wb") as fh:
        fh.write(encode(tensors))


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
