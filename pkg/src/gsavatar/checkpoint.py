"""Weight checkpoint container.

Binary layout (all little-endian):
  magic "HGSW" | version u32 | count u32 |
  repeated: name_len u32, name utf-8, rank u32, dims u32*rank, data f32*prod(dims)
Round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"HGSW"
VERSION = 1


def save_weights(path: str, named: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(named)))
        for name, arr in named.items():
            arr = np.asarray(arr, dtype=np.float32)
            if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
                arr = np.ascontiguousarray(arr)
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def _read(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"checkpoint truncated while reading {what} at byte {f.tell() - len(buf)}")
    return buf


def load_weights(path: str) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if _read(f, 4, "magic") != MAGIC:
            raise FormatError("not a weight checkpoint (bad magic, expected HGSW)")
        version, count = struct.unpack("<II", _read(f, 8, "header"))
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read(f, 4, "name length"))
            name = _read(f, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read(f, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read(f, 4 * rank, "dims"))
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(_read(f, 4 * n, f"data of {name}"), dtype="<f4")
            out[name] = data.reshape(dims).astype(np.float32)
    return out
