"""Procedural shape families for desk-scale experiments.

Shapes are unions of axis-aligned boxes and vertical cylinders built in a
frame where z points up.  Each shape is scaled uniformly so its largest
bounding-box extent spans the whole grid, centred, then voxelized by testing
voxel centres.  Grids are indexed ``[x, y, z]``.

Parameter ranges (all relative to the largest extent before normalization):

* ``box``: size_x, size_y, size_z in [0.6, 1]
* ``table``: width, depth, height in [0.6, 1]; top_thickness, leg_thickness in [0.08, 0.2]
* ``chair``: width, depth in [0.6, 1]; seat_height in [0.4, 0.55];
  back_height in [0.3, 0.45]; leg_thickness in [0.08, 0.18]; arms in {0, 1}
* ``cylinder-post``: radius in [0.3, 0.5]; height in [0.6, 1]; base_thickness in [0.05, 0.2]

The ranges keep every axis at 60% or more of the grid after normalization.
"""
from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

FAMILIES = ("box", "table", "chair", "cylinder-post")

PARAM_RANGES: dict[str, dict[str, tuple[float, float]]] = {
    "box": {"size_x": (0.6, 1.0), "size_y": (0.6, 1.0), "size_z": (0.6, 1.0)},
    "table": {
        "width": (0.6, 1.0), "depth": (0.6, 1.0), "height": (0.6, 1.0),
        "top_thickness": (0.08, 0.2), "leg_thickness": (0.08, 0.2),
    },
    "chair": {
        "width": (0.6, 1.0), "depth": (0.6, 1.0), "seat_height": (0.4, 0.55),
        "back_height": (0.3, 0.45), "leg_thickness": (0.08, 0.18), "arms": (0.0, 1.0),
    },
    "cylinder-post": {"radius": (0.3, 0.5), "height": (0.6, 1.0), "base_thickness": (0.05, 0.2)},
}

SEAT_THICKNESS = 0.1
BACK_THICKNESS = 0.1
ARM_HEIGHT_FRACTION = 0.45


class ShapeParamError(ValueError):
    """Parameters outside the documented family ranges."""


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def bounds(self):
        return np.array(self.lo), np.array(self.hi)


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder around (cx, cy) between heights z0 and z1."""
    cx: float
    cy: float
    radius: float
    z0: float
    z1: float

    def bounds(self):
        r = self.radius
        return np.array([self.cx - r, self.cy - r, self.z0]), np.array([self.cx + r, self.cy + r, self.z1])


def param_names(family: str) -> tuple[str, ...]:
    _check_family(family)
    return tuple(PARAM_RANGES[family])


def _check_family(family: str) -> None:
    if family not in PARAM_RANGES:
        raise ShapeParamError(f"unknown shape family {family!r}; expected one of {FAMILIES}")


def _as_dict(family: str, params) -> dict[str, float]:
    names = param_names(family)
    if isinstance(params, Mapping):
        unknown = set(params) - set(names)
        missing = set(names) - set(params)
        if unknown or missing:
            raise ShapeParamError(f"{family}: unknown {sorted(unknown)} / missing {sorted(missing)} parameters")
        values = {k: float(params[k]) for k in names}
    else:
        seq = list(params)
        if len(seq) != len(names):
            raise ShapeParamError(f"{family}: expected {len(names)} parameters {names}, got {len(seq)}")
        values = dict(zip(names, map(float, seq)))
    for key, (lo, hi) in PARAM_RANGES[family].items():
        v = values[key]
        if not (lo <= v <= hi):
            raise ShapeParamError(f"{family}: {key}={v} outside [{lo}, {hi}]")
    if family == "chair" and values["arms"] not in (0.0, 1.0):
        raise ShapeParamError(f"chair: arms must be 0 or 1, got {values['arms']}")
    return values


def sample_params(family: str, rng: np.random.Generator) -> dict[str, float]:
    """Draw parameters uniformly from the family ranges."""
    _check_family(family)
    out = {}
    for key, (lo, hi) in PARAM_RANGES[family].items():
        out[key] = float(rng.integers(0, 2)) if key == "arms" else float(rng.uniform(lo, hi))
    return out


def shape_primitives(family: str, params) -> list[tuple[str, Box | Cylinder]]:
    """Named primitives of a shape, before normalization."""
    p = _as_dict(family, params)
    if family == "box":
        return [("body", Box((0, 0, 0), (p["size_x"], p["size_y"], p["size_z"])))]
    if family == "cylinder-post":
        r, h, t = p["radius"], p["height"], p["base_thickness"]
        return [
            ("base", Box((0, 0, 0), (2 * r, 2 * r, t))),
            ("post", Cylinder(r, r, r, 0.0, h)),
        ]
    if family == "table":
        w, d, h = p["width"], p["depth"], p["height"]
        tt, lt = p["top_thickness"], p["leg_thickness"]
        prims = [("top", Box((0, 0, h - tt), (w, d, h)))]
        for name, x0, y0 in _corners(w, d, lt):
            prims.append((name, Box((x0, y0, 0), (x0 + lt, y0 + lt, h - tt))))
        return prims
    # chair
    w, d, sh, bh, lt = p["width"], p["depth"], p["seat_height"], p["back_height"], p["leg_thickness"]
    prims = [
        ("seat", Box((0, 0, sh - SEAT_THICKNESS), (w, d, sh))),
        ("back", Box((0, d - BACK_THICKNESS, sh), (w, d, sh + bh))),
    ]
    for name, x0, y0 in _corners(w, d, lt):
        prims.append((name, Box((x0, y0, 0), (x0 + lt, y0 + lt, sh - SEAT_THICKNESS))))
    if p["arms"] == 1.0:
        top = sh + ARM_HEIGHT_FRACTION * bh
        prims.append(("arm_left", Box((0, 0, sh), (lt, d - BACK_THICKNESS, top))))
        prims.append(("arm_right", Box((w - lt, 0, sh), (w, d - BACK_THICKNESS, top))))
    return prims


def _corners(w: float, d: float, t: float):
    return [("leg_00", 0.0, 0.0), ("leg_10", w - t, 0.0), ("leg_01", 0.0, d - t), ("leg_11", w - t, d - t)]


def normalization(prims) -> tuple[np.ndarray, float]:
    """Offset and scale mapping the primitives' bounding box into the unit cube."""
    los, his = zip(*(prim.bounds() for _, prim in prims))
    lo, hi = np.min(los, axis=0), np.max(his, axis=0)
    extent = hi - lo
    scale = 1.0 / float(extent.max())
    offset = 0.5 - scale * (lo + hi) / 2.0
    return offset, scale


def voxelize(prims, resolution: int, normalize_from=None) -> np.ndarray:
    """Occupancy of voxel centres; ``normalize_from`` fixes the frame to another primitive set."""
    offset, scale = normalization(normalize_from if normalize_from is not None else prims)
    centres = (np.arange(resolution) + 0.5) / resolution
    # back to the primitives' own frame
    xs, ys, zs = ((centres - offset[i]) / scale for i in range(3))
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    grid = np.zeros((resolution,) * 3, dtype=bool)
    eps = 1e-9
    for _, prim in prims:
        if isinstance(prim, Box):
            grid |= ((X >= prim.lo[0] - eps) & (X <= prim.hi[0] + eps)
                     & (Y >= prim.lo[1] - eps) & (Y <= prim.hi[1] + eps)
                     & (Z >= prim.lo[2] - eps) & (Z <= prim.hi[2] + eps))
        else:
            grid |= (((X - prim.cx) ** 2 + (Y - prim.cy) ** 2 <= prim.radius ** 2 + eps)
                     & (Z >= prim.z0 - eps) & (Z <= prim.z1 + eps))
    return grid.astype(np.uint8)


def generate_shape(family: str, params: Mapping[str, float] | Sequence[float], resolution: int = 32) -> np.ndarray:
    """Binary ``[D, D, D]`` grid of the given family; deterministic in its parameters."""
    if resolution < 1:
        raise ShapeParamError(f"resolution must be positive, got {resolution}")
    return voxelize(shape_primitives(family, params), resolution)
