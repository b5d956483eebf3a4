"""Synthetic paired datasets on disk and their manifest.

The manifest is UTF-8 JSON Lines: a header record, then one record per
sample with ``id``, ``label``, ``split``, ``voxels`` (binvox path) and
``views`` (PGM paths).  Paths are relative to the manifest's directory.
Output is a pure function of the config, so equal configs give
byte-identical files.
"""
from __future__ import annotations

import json
import os
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binvox import read_binvox, write_binvox
from .generate import FAMILIES, generate_shape, sample_params
from .pgm import read_pgm, write_pgm
from .render import DEFAULT_POSES, render_views

MANIFEST_NAME = "manifest.jsonl"
FORMAT_VERSION = 1


class DatasetError(RuntimeError):
    """Dataset cannot be built or read."""


@dataclass
class DatasetConfig:
    families: Sequence[str] = FAMILIES
    counts: int | Mapping[str, int] = 50
    train_fraction: float = 0.8
    seed: int = 0
    resolution: int = 32
    views: int = 8
    image_size: int | None = None
    mode: str = "silhouette"
    elevation: float = 30.0

    def count_for(self, family: str) -> int:
        if isinstance(self.counts, Mapping):
            return int(self.counts.get(family, 0))
        return int(self.counts)

    def poses(self) -> list[tuple[float, float]]:
        if self.views == len(DEFAULT_POSES) and self.elevation == 30.0:
            return list(DEFAULT_POSES)
        return [(360.0 * k / self.views, float(self.elevation)) for k in range(self.views)]


@dataclass
class SampleRecord:
    id: str
    label: int
    split: str
    voxels: str
    views: list[str]
    family: str = ""
    params: dict = field(default_factory=dict)


@dataclass
class DatasetManifest:
    categories: list[str]
    resolution: int
    render: dict
    seed: int
    samples: list[SampleRecord]
    root: Path = Path(".")

    def split(self, name: str) -> list[SampleRecord]:
        if name == "all":
            return list(self.samples)
        return [s for s in self.samples if s.split == name]

    def voxel_path(self, rec: SampleRecord) -> Path:
        return self.root / rec.voxels

    def load_voxels(self, rec: SampleRecord) -> np.ndarray:
        grid = read_binvox(self.voxel_path(rec)).occupancy
        if grid.shape[0] != self.resolution:
            raise DatasetError(f"{rec.id}: grid resolution {grid.shape[0]} != manifest {self.resolution}")
        return grid

    def load_views(self, rec: SampleRecord) -> np.ndarray:
        """``[V, H, W, C]`` float array."""
        images = [read_pgm(self.root / p) for p in rec.views]
        return np.stack(images)[..., None]

    def validate(self, require_views: bool = True) -> None:
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate sample ids (train/test splits must be disjoint)")
        for s in self.samples:
            if not 0 <= s.label < len(self.categories):
                raise DatasetError(f"{s.id}: label {s.label} outside {len(self.categories)} categories")
            if s.split not in ("train", "test"):
                raise DatasetError(f"{s.id}: unknown split {s.split!r}")
            paths = [s.voxels] + (list(s.views) if require_views else [])
            for p in paths:
                if not (self.root / p).is_file():
                    raise DatasetError(f"{s.id}: missing file {p}")


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def build_dataset(config: DatasetConfig, out_dir) -> DatasetManifest:
    """Generate, render and write every sample, then the manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DatasetError(f"output directory {out} is not writable: {exc}") from exc
    unknown = [f for f in config.families if f not in FAMILIES]
    if unknown:
        raise DatasetError(f"unknown families {unknown}; expected a subset of {FAMILIES}")
    if not 0.0 <= config.train_fraction <= 1.0:
        raise DatasetError(f"train fraction must lie in [0, 1], got {config.train_fraction}")
    size = config.image_size or config.resolution
    poses = config.poses()
    render = {"views": config.views, "height": size, "width": size, "channels": 1,
              "mode": config.mode, "poses": [list(p) for p in poses]}
    samples = []
    for label, family in enumerate(config.families):
        count = config.count_for(family)
        n_train = int(round(count * config.train_fraction))
        for index in range(count):
            rec = _make_sample(config, out, label, family, index, index < n_train, poses, size)
            samples.append(rec)
    manifest = DatasetManifest(list(config.families), config.resolution, render, config.seed, samples, out)
    write_manifest(manifest, out / MANIFEST_NAME)
    return manifest


def _make_sample(config, out, label, family, index, is_train, poses, size) -> SampleRecord:
    fam_index = FAMILIES.index(family)
    rng = np.random.default_rng([config.seed, fam_index, index])
    params = sample_params(family, rng)
    grid = generate_shape(family, params, config.resolution)
    sid = f"{family}-{index:04d}"
    vox_rel = f"voxels/{sid}.binvox"
    write_binvox(grid, out / vox_rel)
    views = render_views(grid, poses, size, size, config.mode)
    view_rels = []
    for k in range(views.num_views):
        rel = f"views/{sid}_v{k}.pgm"
        write_pgm(out / rel, views.images[k])
        view_rels.append(rel)
    return SampleRecord(sid, label, "train" if is_train else "test", vox_rel, view_rels, family, params)


def write_manifest(manifest: DatasetManifest, path) -> None:
    header = {"kind": "header", "format": FORMAT_VERSION, "categories": manifest.categories,
              "resolution": manifest.resolution, "render": manifest.render, "seed": manifest.seed}
    lines = [_dumps(header)]
    for s in manifest.samples:
        lines.append(_dumps({"kind": "sample", "id": s.id, "label": s.label, "split": s.split,
                             "voxels": s.voxels, "views": s.views, "family": s.family,
                             "params": s.params}))
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write("\n".join(lines) + "\n")


def load_manifest(path) -> DatasetManifest:
    """Read a manifest file (or a directory containing ``manifest.jsonl``)."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    if not lines:
        raise DatasetError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("kind") != "header":
        raise DatasetError(f"{path}: first record must be the header")
    samples = []
    for line in lines[1:]:
        if not line.strip():
            continue
        rec = json.loads(line)
        samples.append(SampleRecord(rec["id"], int(rec["label"]), rec["split"], rec["voxels"],
                                    list(rec["views"]), rec.get("family", ""), rec.get("params", {})))
    return DatasetManifest(list(header["categories"]), int(header["resolution"]), dict(header["render"]),
                           int(header["seed"]), samples, path.parent)
