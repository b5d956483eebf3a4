"""Latent-space exploration: interpolation, arithmetic, traversal, export."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data.binvox import write_binvox
from .data.pgm import write_pgm
from .model import LatentCode, SwitchVAE
from .numerics import Tensor, no_grad


def _vec(z) -> np.ndarray:
    if isinstance(z, LatentCode):
        z = z.z
    if isinstance(z, Tensor):
        z = z.data
    v = np.asarray(z, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"latent code must be a vector, got shape {v.shape}")
    return v


def _code(v: np.ndarray, source: str = "vox") -> LatentCode:
    return LatentCode(Tensor(v), source)


@dataclass
class LatentPath:
    z_a: np.ndarray
    z_b: np.ndarray
    steps: int
    codes: list[LatentCode]


def interpolate(z_a, z_b, steps: int) -> list[LatentCode]:
    """``(1 - t) z_a + t z_b`` at ``steps`` evenly spaced ``t`` in [0, 1]; endpoints are exact."""
    a, b = _vec(z_a), _vec(z_b)
    if a.shape != b.shape:
        raise ValueError(f"endpoint shapes differ: {a.shape} vs {b.shape}")
    if steps < 2:
        raise ValueError(f"interpolation needs at least 2 steps, got {steps}")
    codes = []
    for k in range(steps):
        t = k / (steps - 1)
        codes.append(_code(a.copy() if k == 0 else b.copy() if k == steps - 1 else (1.0 - t) * a + t * b))
    return codes


def latent_path(z_a, z_b, steps: int) -> LatentPath:
    return LatentPath(_vec(z_a), _vec(z_b), steps, interpolate(z_a, z_b, steps))


def arithmetic(z_base, z_plus, z_minus) -> LatentCode:
    """``z_base + (z_plus - z_minus)``."""
    base, plus, minus = _vec(z_base), _vec(z_plus), _vec(z_minus)
    if not base.shape == plus.shape == minus.shape:
        raise ValueError(f"code shapes differ: {base.shape}, {plus.shape}, {minus.shape}")
    return _code(base + (plus - minus))


def traverse(z, dim: int, values: Sequence[float]) -> list[LatentCode]:
    """Copies of ``z`` with coordinate ``dim`` set to each value in turn."""
    v = _vec(z)
    if not 0 <= dim < v.size:
        raise IndexError(f"dimension {dim} out of range for a {v.size}-d code")
    out = []
    for value in values:
        c = v.copy()
        c[dim] = value
        out.append(_code(c))
    return out


def mid_slices(grid: np.ndarray) -> list[np.ndarray]:
    """The three axis-aligned slices through the grid centre (x, y, z order)."""
    d = grid.shape[0] // 2
    return [grid[d, :, :], grid[:, d, :], grid[:, :, d]]


def export_reconstructions(codes: Sequence, model: SwitchVAE, out_dir, prefix: str = "code",
                           threshold: float = 0.5) -> list[Path]:
    """Decode each code; write the thresholded grid (binvox) and three mid-axis slices (PGM)."""
    out = Path(out_dir)
    written: list[Path] = []
    if not codes:
        return written
    z = np.stack([_vec(c) for c in codes])
    with no_grad():
        probs = model.decode(z).data.astype(np.float64)
    for k, p in enumerate(probs):
        grid = (p >= threshold).astype(np.uint8)
        stem = f"{prefix}_{k:03d}"
        path = out / f"{stem}.binvox"
        write_binvox(grid, path)
        written.append(path)
        for axis, sl in zip("xyz", mid_slices(grid)):
            spath = out / f"{stem}_slice_{axis}.pgm"
            write_pgm(spath, sl.astype(np.float64))
            written.append(spath)
    return written
