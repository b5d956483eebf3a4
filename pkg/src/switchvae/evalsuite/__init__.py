"""Evaluation: reconstruction metrics, latent banks, SVM classification, embeddings."""
from __future__ import annotations

import numpy as np

from ..data.dataset import DatasetManifest
from ..model import VOX, SwitchVAE
from ..numerics import no_grad
from ..trainer import encode_means
from .latents import LatentBank, embed2d, extract_latents, read_bank_csv, write_bank_csv, write_embedding_csv
from .metrics import ReconMetrics, confusion_counts, recon_metrics, summarize, write_metrics_csv
from .svm import BinarySvm, SvmError, SvmModel, canonical_order, rbf_kernel, smo_binary, svm_predict, svm_train


def classify_eval(train_bank: LatentBank, test_bank: LatentBank, C: float = 1.0,
                  gamma: float | None = None) -> float:
    """Train on one bank, return the accuracy on the other."""
    if len(test_bank) == 0:
        raise SvmError("test bank is empty")
    if train_bank.dim != test_bank.dim:
        raise SvmError(f"bank dimensions differ: {train_bank.dim} vs {test_bank.dim}")
    model = svm_train(train_bank.vectors, train_bank.labels, C, gamma)
    pred = svm_predict(model, test_bank.vectors)
    return float(np.mean(pred == test_bank.labels))


def reconstruct(model: SwitchVAE, data, modality: str = VOX, batch: int = 16) -> np.ndarray:
    """Decode posterior means; returns ``[N, D, D, D]`` probabilities."""
    mu = encode_means(model.params, model.config, data, modality, batch)
    out = []
    with no_grad():
        for s in range(0, len(mu), batch):
            out.append(model.decode(mu[s:s + batch]).data.astype(np.float64))
    d = model.config.resolution
    return np.concatenate(out) if out else np.zeros((0, d, d, d))


def evaluate_reconstruction(model: SwitchVAE, manifest: DatasetManifest, split: str = "test",
                            modality: str = VOX, threshold: float = 0.5) -> list[tuple[str, ReconMetrics]]:
    """Per-sample metrics of reconstructions from the given input modality."""
    recs = manifest.split(split)
    if not recs:
        return []
    targets = np.stack([manifest.load_voxels(r) for r in recs])
    if modality == VOX:
        inputs = targets
    else:
        inputs = np.stack([manifest.load_views(r).transpose(0, 3, 1, 2) for r in recs])
    preds = reconstruct(model, inputs, modality)
    return [(r.id, recon_metrics(t, p, threshold)) for r, t, p in zip(recs, targets, preds)]


__all__ = [
    "BinarySvm", "LatentBank", "ReconMetrics", "SvmError", "SvmModel", "canonical_order", "classify_eval", "confusion_counts",
    "embed2d", "evaluate_reconstruction", "extract_latents", "rbf_kernel", "read_bank_csv", "recon_metrics",
    "reconstruct", "smo_binary", "summarize", "svm_predict", "svm_train", "write_bank_csv",
    "write_embedding_csv", "write_metrics_csv",
]
