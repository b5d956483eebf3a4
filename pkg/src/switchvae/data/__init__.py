"""Paired voxel / multi-view samples: generator, renderer, binvox and dataset I/O."""
from .binvox import BinvoxError, VoxelGrid, read_binvox, write_binvox
from .dataset import (
    DatasetConfig,
    DatasetError,
    DatasetManifest,
    SampleRecord,
    build_dataset,
    load_manifest,
)
from .generate import FAMILIES, PARAM_RANGES, ShapeParamError, generate_shape, sample_params, shape_primitives
from .pgm import read_pgm, write_pgm
from .render import DEFAULT_POSES, MultiViewSet, render_view, render_views

__all__ = [
    "BinvoxError", "DEFAULT_POSES", "DatasetConfig", "DatasetError", "DatasetManifest", "FAMILIES",
    "MultiViewSet", "PARAM_RANGES", "SampleRecord", "ShapeParamError", "VoxelGrid", "build_dataset",
    "generate_shape", "load_manifest", "read_binvox", "read_pgm", "render_view", "render_views",
    "sample_params", "shape_primitives", "write_binvox", "write_pgm",
]
