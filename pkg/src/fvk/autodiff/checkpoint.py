"""Binary checkpoint files.

Layout: magic "FVK1", u32 entry count, then per entry: u32 name length,
UTF-8 name, u32 rank, u32 per dimension, raw little-endian float32 data.
"""

import struct

import numpy as np

MAGIC = b"FVK1"


class CheckpointError(IOError):
    pass


def save_checkpoint(path, entries):
    """Write named float32 arrays in insertion order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries.items():
            arr = np.asarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into a name -> float32 array dict."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {data[:4]!r})")
    off = 4

    def take(n, what):
        nonlocal off
        if off + n > len(data):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        chunk = data[off : off + n]
        off += n
        return chunk

    (count,) = struct.unpack("<I", take(4, "entry count"))
    entries = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        name = take(nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        shape = tuple(
            struct.unpack("<I", take(4, "dimension"))[0] for _ in range(rank)
        )
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(4 * n, f"data of '{name}'"), dtype="<f4")
        entries[name] = arr.reshape(shape).astype(np.float32)
    return entries
