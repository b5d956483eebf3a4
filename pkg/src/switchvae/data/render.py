"""Orthographic multi-view rendering of voxel grids by ray marching.

Camera convention for pose (azimuth a, elevation e), angles in degrees:

* rays travel along ``d = (cos e cos a, cos e sin a, -sin e)``, so ``(0, 0)``
  looks along +x and positive elevation looks down from above;
* image "up" is ``u = (sin e cos a, sin e sin a, cos e)`` and image "right"
  is ``d x u``; row 0 is the top of the image.

The image plane is centred on the grid centre and spans ``extent`` voxels
(default D) over its width and height.  At ``H = W = D`` the (0, 0) view maps
pixel ``(i, j)`` to voxel column ``y = D-1-j``, ``z = D-1-i``, i.e. the image is
``grid.any(axis=0)[::-1, ::-1].T``.

Silhouette mode writes 1 where a ray meets occupancy.  Depth mode writes
``1 - t / L`` for the first hit at ray distance ``t`` (``L`` is the length of
the marched segment, the grid diagonal), so nearer surfaces are brighter and
background stays 0.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

DEFAULT_POSES = tuple((float(a), 30.0) for a in range(0, 360, 45))
MODES = ("silhouette", "depth")


@dataclass
class MultiViewSet:
    """``images`` is ``[V, H, W, C]`` with values in [0, 1]."""
    images: np.ndarray
    poses: tuple[tuple[float, float], ...]

    @property
    def num_views(self) -> int:
        return int(self.images.shape[0])


def camera_frame(azimuth: float, elevation: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a, e = np.deg2rad(azimuth), np.deg2rad(elevation)
    d = np.array([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), -np.sin(e)])
    up = np.array([np.sin(e) * np.cos(a), np.sin(e) * np.sin(a), np.cos(e)])
    right = np.cross(d, up)
    return d, up, right


def render_view(grid: np.ndarray, azimuth: float, elevation: float, height: int, width: int,
                mode: str = "silhouette", extent: float | None = None, step: float = 0.25) -> np.ndarray:
    """Render one ``[H, W]`` view; ``step`` is the marching step in voxels."""
    occ = np.asarray(grid) != 0
    size = occ.shape[0]
    extent = float(size) if extent is None else float(extent)
    d, up, right = camera_frame(azimuth, elevation)
    half_diag = size * np.sqrt(3.0) / 2.0
    centre = np.full(3, size / 2.0)
    cols = (np.arange(width) + 0.5 - width / 2.0) * (extent / width)
    rows = (height / 2.0 - np.arange(height) - 0.5) * (extent / height)
    origins = (centre[None, None, :] - half_diag * d[None, None, :]
               + rows[:, None, None] * up[None, None, :] + cols[None, :, None] * right[None, None, :])
    n_steps = int(np.ceil(2 * half_diag / step)) + 1
    ts = np.arange(n_steps) * step
    image = np.zeros((height, width))
    if not occ.any():
        return image
    hit_t = np.full((height, width), np.inf)
    # march in chunks of steps to bound memory
    chunk = 64
    for s0 in range(0, n_steps, chunk):
        t = ts[s0:s0 + chunk]
        pts = origins[:, :, None, :] + t[None, None, :, None] * d[None, None, None, :]
        idx = np.floor(pts).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < size), axis=-1)
        np.clip(idx, 0, size - 1, out=idx)
        filled = inside & occ[idx[..., 0], idx[..., 1], idx[..., 2]]
        any_hit = filled.any(axis=-1)
        first = np.argmax(filled, axis=-1)
        new = any_hit & np.isinf(hit_t)
        hit_t[new] = t[first[new]]
        if np.all(np.isfinite(hit_t)):
            break
    hits = np.isfinite(hit_t)
    if mode == "silhouette":
        image[hits] = 1.0
    elif mode == "depth":
        image[hits] = 1.0 - hit_t[hits] / (2 * half_diag)
    else:
        raise ValueError(f"unknown render mode {mode!r}; expected one of {MODES}")
    return image


def render_views(grid: np.ndarray, poses: Sequence[tuple[float, float]] = DEFAULT_POSES,
                 height: int = 32, width: int = 32, mode: str = "silhouette",
                 extent: float | None = None) -> MultiViewSet:
    size = np.asarray(grid).shape[0]
    if height < size or width < size:
        raise ValueError(f"view size {height}x{width} must be at least the grid resolution {size}")
    if mode not in MODES:
        raise ValueError(f"unknown render mode {mode!r}; expected one of {MODES}")
    views = [render_view(grid, a, e, height, width, mode, extent) for a, e in poses]
    images = np.stack(views)[..., None] if views else np.zeros((0, height, width, 1))
    return MultiViewSet(images, tuple((float(a), float(e)) for a, e in poses))
