"""Latent banks: posterior means per sample, CSV I/O and 2D embeddings."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..data.dataset import DatasetManifest
from ..model import IMG, VOX, SwitchVAE
from ..trainer import encode_means


@dataclass
class LatentBank:
    ids: list[str]
    labels: np.ndarray
    vectors: np.ndarray
    source: str

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            self.vectors = self.vectors.reshape(len(self.ids), -1)
        if len(self.vectors) != len(self.ids):
            raise ValueError(f"{len(self.ids)} ids but {len(self.vectors)} vectors")
        if len(self.labels) != len(self.ids):
            raise ValueError(f"{len(self.ids)} ids but {len(self.labels)} labels")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("latent bank ids must be unique")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def vector(self, sid: str) -> np.ndarray:
        try:
            return self.vectors[self.ids.index(sid)]
        except ValueError:
            raise KeyError(f"id {sid!r} not in latent bank") from None


def extract_latents(model: SwitchVAE, manifest: DatasetManifest, split: str, modality: str,
                    batch: int = 32) -> LatentBank:
    """Posterior means for one split; only the requested modality's files are read."""
    recs = manifest.split(split)
    if modality == VOX:
        data = [manifest.load_voxels(r) for r in recs]
    elif modality == IMG:
        data = [manifest.load_views(r).transpose(0, 3, 1, 2) for r in recs]
    else:
        raise ValueError(f"unknown modality {modality!r}; expected 'vox' or 'img'")
    n = model.config.latent_dim
    mu = encode_means(model.params, model.config, np.stack(data), modality, batch) if data else np.zeros((0, n))
    return LatentBank([r.id for r in recs], np.array([r.label for r in recs], dtype=np.int64), mu, modality)


def write_bank_csv(bank: LatentBank, path) -> None:
    """``id,label,source,mu_0..mu_{n-1}``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["id", "label", "source"] + [f"mu_{i}" for i in range(bank.dim)])
        for sid, label, vec in zip(bank.ids, bank.labels, bank.vectors):
            w.writerow([sid, int(label), bank.source] + [f"{v:.17g}" for v in vec])


def read_bank_csv(path) -> LatentBank:
    with open(path, newline="", encoding="utf-8") as fp:
        reader = csv.reader(fp)
        header = next(reader)
        if header[:3] != ["id", "label", "source"]:
            raise ValueError(f"{path}: not a latent bank CSV")
        rows = list(reader)
    sources = {r[2] for r in rows}
    if len(sources) > 1:
        raise ValueError(f"{path}: mixed sources {sorted(sources)}")
    vectors = np.array([[float(v) for v in r[3:]] for r in rows]).reshape(len(rows), len(header) - 3)
    return LatentBank([r[0] for r in rows], [int(r[1]) for r in rows], vectors,
                      sources.pop() if sources else VOX)


def embed2d(bank: LatentBank) -> list[tuple[str, int, float, float]]:
    """Top-2 principal-component coordinates after centering.

    Each component's sign is fixed so its largest-magnitude loading is
    positive (first such loading on ties).
    """
    x = bank.vectors - bank.vectors.mean(axis=0) if len(bank) else bank.vectors
    coords = np.zeros((len(bank), 2))
    if len(bank) and np.any(x):
        _, _, vt = np.linalg.svd(x, full_matrices=False)
        comps = vt[:2]
        for k in range(len(comps)):
            lead = comps[k][np.argmax(np.abs(comps[k]))]
            if lead < 0:
                comps[k] = -comps[k]
        coords[:, :len(comps)] = x @ comps.T
    return [(sid, int(lab), float(c[0]), float(c[1])) for sid, lab, c in zip(bank.ids, bank.labels, coords)]


def write_embedding_csv(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["id", "label", "x", "y"])
        for sid, lab, x, y in rows:
            w.writerow([sid, lab, f"{x:.17g}", f"{y:.17g}"])
