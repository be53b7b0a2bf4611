"""Binary and CSV persistence for solver outputs.

Two-parameter fields use a fixed little-endian layout: the magic bytes
"BDSV1", a uint32 dimension count, the dimensions as uint64, then the
values as row-major float64. Diagonal processes export to long-format CSV
(node index, node time, path, value).
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import InvalidArgumentError

MAGIC = b"BDSV1"


def save_field(values: np.ndarray, path) -> None:
    """Write an array in the documented binary field layout."""
    arr = np.ascontiguousarray(np.asarray(values, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def load_field(path) -> np.ndarray:
    """Read an array written by save_field; validates the magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise InvalidArgumentError(f"not a field dump (bad magic {magic!r})")
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        data = np.frombuffer(fh.read(), dtype="<f8")
    expect = int(np.prod(shape)) if shape else 1
    if data.size != expect:
        raise InvalidArgumentError(f"field dump truncated: {data.size} of {expect} values")
    return data.reshape(shape).copy()


def diagonal_to_csv(values: np.ndarray, nodes: np.ndarray, path) -> None:
    """Long-format CSV dump of a per-path per-node process."""
    values = np.asarray(values, dtype=float)
    paths, n = values.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node,t,path,value\n")
        for i in range(n):
            t = repr(float(nodes[i]))
            col = values[:, i]
            for m in range(paths):
                fh.write(f"{i},{t},{m},{float(col[m])!r}\n")
