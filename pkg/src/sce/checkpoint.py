"""Binary checkpoint container.

Layout, all little-endian: magic ``SCECKPT1``; then per tensor a name
length (u32), the utf-8 name, a dtype code (u8), the rank (u32), the dims
(u64 each) and the raw data; a trailing CRC32 (u32) covers everything
after the magic. Scalars (step counter, queue cursor, RNG seed) and the
config echo travel as tensors under reserved ``meta/`` names.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SCECKPT1"

_DTYPE_CODES = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.int64): 2,
    np.dtype(np.uint8): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    step: int
    seed: int
    tensors: dict[str, np.ndarray]      # online/, target/, opt/ entries
    queue_storage: np.ndarray
    queue_cursor: int
    queue_fill: int
    config_echo: str = ""

    def named(self) -> dict[str, np.ndarray]:
        out = dict(self.tensors)
        out["meta/step"] = np.array([self.step], dtype=np.int64)
        out["meta/seed"] = np.array([self.seed], dtype=np.int64)
        out["meta/queue_cursor"] = np.array([self.queue_cursor], dtype=np.int64)
        out["meta/queue_fill"] = np.array([self.queue_fill], dtype=np.int64)
        out["queue/storage"] = self.queue_storage
        out["meta/config"] = np.frombuffer(
            self.config_echo.encode("utf-8"), dtype=np.uint8
        ).copy()
        return out

    @classmethod
    def from_named(cls, named: dict[str, np.ndarray]) -> "Checkpoint":
        named = dict(named)
        step = int(named.pop("meta/step")[0])
        seed = int(named.pop("meta/seed")[0])
        cursor = int(named.pop("meta/queue_cursor")[0])
        fill = int(named.pop("meta/queue_fill")[0])
        storage = named.pop("queue/storage")
        echo = named.pop("meta/config").tobytes().decode("utf-8")
        return cls(step=step, seed=seed, tensors=named, queue_storage=storage,
                   queue_cursor=cursor, queue_fill=fill, config_echo=echo)


def _encode_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_CODES:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
    nb = name.encode("utf-8")
    parts = [
        struct.pack("<I", len(nb)), nb,
        struct.pack("<B", _DTYPE_CODES[arr.dtype]),
        struct.pack("<I", arr.ndim),
        struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"",
        arr.astype(arr.dtype.newbyteorder("<")).tobytes(),
    ]
    return b"".join(parts)


def save_checkpoint(path: str, ckpt: Checkpoint):
    body = b"".join(
        _encode_tensor(name, arr) for name, arr in sorted(ckpt.named().items())
    )
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(body)
        f.write(struct.pack("<I", crc))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    body, (crc,) = blob[len(MAGIC):-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: CRC mismatch, file corrupted")
    named = {}
    off = 0
    while off < len(body):
        (nlen,) = struct.unpack_from("<I", body, off)
        off += 4
        name = body[off:off + nlen].decode("utf-8")
        off += nlen
        (code,) = struct.unpack_from("<B", body, off)
        off += 1
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code}")
        (rank,) = struct.unpack_from("<I", body, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}Q", body, off) if rank else ()
        off += 8 * rank
        dtype = _CODE_DTYPES[code].newbyteorder("<")
        count = int(np.prod(dims)) if rank else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(body, dtype=dtype, count=count, offset=off).copy()
        off += nbytes
        named[name] = arr.reshape(dims).astype(_CODE_DTYPES[code])
    return Checkpoint.from_named(named)
