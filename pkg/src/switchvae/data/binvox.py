"""Reader/writer for the binvox run-length-encoded voxel format.

Layout (see ``docs/binvox_format.md``)::

    #binvox 1
    dim D D D
    translate tx ty tz
    scale s
    data
    <(value, count) byte pairs>

Voxels are stored with y running fastest, then z, then x.  Grids in this
package are indexed ``[x, y, z]``, so the payload is ``grid.transpose(0, 2, 1)``
flattened in C order.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class BinvoxError(ValueError):
    """Malformed or unsupported binvox content."""


@dataclass
class VoxelGrid:
    occupancy: np.ndarray
    translate: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def resolution(self) -> int:
        return int(self.occupancy.shape[0])


def _parse_header(fp) -> tuple[list[int], tuple[float, float, float], float]:
    magic = fp.readline().strip()
    if not magic.startswith(b"#binvox"):
        raise BinvoxError("malformed header: missing '#binvox' magic line")
    dims = translate = scale = None
    while True:
        line = fp.readline()
        if not line:
            raise BinvoxError("malformed header: reached end of file before 'data'")
        parts = line.strip().split()
        if not parts:
            continue
        key = parts[0]
        try:
            if key == b"data":
                break
            if key == b"dim":
                dims = [int(v) for v in parts[1:]]
            elif key == b"translate":
                translate = tuple(float(v) for v in parts[1:])
            elif key == b"scale":
                scale = float(parts[1])
            else:
                raise BinvoxError(f"malformed header: unexpected line {line.strip()!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, BinvoxError):
                raise
            raise BinvoxError(f"malformed header line {line.strip()!r}") from None
    if dims is None or len(dims) != 3 or min(dims) < 1:
        raise BinvoxError(f"malformed header: bad or missing dim line {dims}")
    if len(set(dims)) != 1:
        raise BinvoxError(f"non-cubic grid dims {dims[0]} {dims[1]} {dims[2]}")
    if translate is None:
        translate = (0.0, 0.0, 0.0)
    if len(translate) != 3:
        raise BinvoxError("malformed header: translate needs three values")
    return dims, translate, 1.0 if scale is None else scale


def read_binvox(path) -> VoxelGrid:
    with open(path, "rb") as fp:
        dims, translate, scale = _parse_header(fp)
        raw = np.frombuffer(fp.read(), dtype=np.uint8)
    if raw.size % 2:
        raise BinvoxError("RLE payload has an odd number of bytes")
    values, counts = raw[0::2], raw[1::2]
    expected = dims[0] * dims[1] * dims[2]
    total = int(counts.sum(dtype=np.int64))
    if total != expected:
        raise BinvoxError(f"RLE length mismatch: runs cover {total} voxels, dims declare {expected}")
    if np.any(values > 1):
        raise BinvoxError("RLE payload contains values other than 0 and 1")
    flat = np.repeat(values, counts)
    grid = flat.reshape(dims[0], dims[2], dims[1]).transpose(0, 2, 1)
    return VoxelGrid(np.ascontiguousarray(grid), translate, scale)


def _rle(flat: np.ndarray) -> bytes:
    if flat.size == 0:
        return b""
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], change))
    lengths = np.diff(np.concatenate((starts, [flat.size])))
    values = flat[starts]
    # runs longer than 255 become several pairs
    reps = (lengths + 254) // 255
    run_vals = np.repeat(values, reps)
    run_lens = np.full(run_vals.size, 255, dtype=np.int64)
    last = np.cumsum(reps) - 1
    run_lens[last] = lengths - 255 * (reps - 1)
    out = np.empty(2 * run_vals.size, dtype=np.uint8)
    out[0::2] = run_vals
    out[1::2] = run_lens
    return out.tobytes()


def write_binvox(grid, path, translate=None, scale=None) -> None:
    if isinstance(grid, VoxelGrid):
        translate = grid.translate if translate is None else translate
        scale = grid.scale if scale is None else scale
        grid = grid.occupancy
    grid = np.asarray(grid)
    if grid.ndim != 3 or len(set(grid.shape)) != 1:
        raise BinvoxError(f"non-cubic grid dims {' '.join(map(str, grid.shape))}")
    flat = (grid.transpose(0, 2, 1) != 0).astype(np.uint8).ravel()
    translate = (0.0, 0.0, 0.0) if translate is None else translate
    scale = 1.0 if scale is None else scale
    d = grid.shape[0]
    header = (
        "#binvox 1\n"
        f"dim {d} {d} {d}\n"
        f"translate {' '.join(repr(float(t)) for t in translate)}\n"
        f"scale {float(scale)!r}\n"
        "data\n"
    ).encode("ascii")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fp:
        fp.write(header)
        fp.write(_rle(flat))
