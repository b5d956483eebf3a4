"""Training loop: per-epoch switch draws, Nesterov SGD, checkpoints, collapse monitor.

Randomness comes from four independent streams spawned from the run seed
(switch draws, reparameterization noise, batch shuffling, parameter init), so
drawing more from one stream never shifts another.
"""
from __future__ import annotations

import csv
import logging
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data.dataset import DatasetManifest
from .losses import LossBreakdown, LossWeights, total_loss
from .model import (
    IMG, VOX, ModelConfig, ModelParams, SwitchDecision, draw_switch, init_params, load_checkpoint,
    reparameterize, save_checkpoint, switch_select,
)
from .model.network import decode_logits, image_encode, voxel_encode
from .numerics import backward, no_grad, ops

log = logging.getLogger(__name__)

STREAMS = {"switch": 0, "eps": 1, "shuffle": 2, "init": 3}
MODES = ("switch", "voxel-only", "image-only")
PRECISIONS = {"float64": np.float64, "float32": np.float32}
CSV_HEADER = ("epoch", "alpha", "lr", "recon", "kl", "contras", "total", "latent_var")


class TrainingDivergedError(RuntimeError):
    """A non-finite loss; carries the offending batch and the last finite records."""

    def __init__(self, message: str, epoch: int, batch_ids: list[str], last_records: list):
        super().__init__(message)
        self.epoch = epoch
        self.batch_ids = batch_ids
        self.last_records = last_records


class CollapseWarning(UserWarning):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr0: float = 2e-4
    momentum: float = 0.9
    decay: float = 0.96
    decay_every: int = 10
    decay_start: int = 50
    p_vox: float = 0.8
    mode: str = "switch"
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    precision: str = "float64"
    checkpoint_every: int = 0
    micro_batch: int = 0
    clip_norm: float = 0.0
    collapse_threshold: float = 1e-6
    collapse_patience: int = 10

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if not 0.0 <= self.p_vox <= 1.0:
            raise ValueError(f"p_vox must lie in [0, 1], got {self.p_vox}")
        if self.mode not in MODES:
            raise ValueError(f"unknown training mode {self.mode!r}; expected one of {MODES}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"unknown precision {self.precision!r}; expected one of {tuple(PRECISIONS)}")
        if self.lr0 <= 0 or not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"need lr0 > 0 and momentum in [0, 1), got {self.lr0}, {self.momentum}")

    def effective(self) -> TrainConfig:
        """Single-encoder baselines pin the switch and drop the contrastive term."""
        if self.mode == "voxel-only":
            return replace(self, p_vox=1.0, weights=replace(self.weights, lambda_contras=0.0))
        if self.mode == "image-only":
            return replace(self, p_vox=0.0, weights=replace(self.weights, lambda_contras=0.0))
        return self


@dataclass
class EpochRecord:
    epoch: int
    alpha: str
    lr: float
    recon: float
    kl: float
    contras: float
    total: float
    latent_var: float
    collapse_warning: bool = False

    def row(self) -> list[str]:
        return [str(self.epoch), self.alpha] + [
            f"{v:.17g}" for v in (self.lr, self.recon, self.kl, self.contras, self.total, self.latent_var)
        ]


@dataclass
class TrainingData:
    """In-memory paired training arrays; views are ``[N, V, C, H, W]``."""
    ids: list[str]
    labels: np.ndarray
    voxels: np.ndarray
    views: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, split: str = "train") -> TrainingData:
        recs = manifest.split(split)
        if not recs:
            raise ValueError(f"split {split!r} of the dataset is empty")
        voxels = np.stack([manifest.load_voxels(r) for r in recs]).astype(np.float64)
        views = np.stack([manifest.load_views(r) for r in recs]).transpose(0, 1, 4, 2, 3)
        return cls([r.id for r in recs], np.array([r.label for r in recs]), voxels, np.ascontiguousarray(views))


@dataclass
class TrainResult:
    params: ModelParams
    records: list[EpochRecord]
    checkpoints: list[Path]
    velocities: dict[str, np.ndarray]


def lr_schedule(epoch: int, lr0: float = 2e-4, decay: float = 0.96, every: int = 10, start: int = 50) -> float:
    """Constant for ``start`` epochs, then stepped by ``decay`` every ``every`` epochs (0-indexed)."""
    return lr0 * decay ** (max(0, epoch - start) // every)


def sgd_nesterov_step(params, grads, state: dict, lr: float, momentum: float) -> None:
    """In place: ``v <- m v - lr g``; ``p <- p + m v - lr g`` (with the new ``v``).

    ``params`` maps ids to arrays (or tensors), ``grads`` maps ids to arrays
    and ``state`` holds the velocities, created as zeros on first use.
    """
    for key, g in grads.items():
        p = params[key]
        arr = p.data if hasattr(p, "data") and not isinstance(p, np.ndarray) else p
        if g.shape != arr.shape:
            raise ValueError(f"gradient for {key} has shape {g.shape}, parameter has {arr.shape}")
        v = state.get(key)
        if v is None:
            v = state[key] = np.zeros_like(arr)
        elif v.shape != arr.shape:
            raise ValueError(f"velocity for {key} has shape {v.shape}, parameter has {arr.shape}")
        step = lr * g
        v *= momentum
        v -= step
        arr += momentum * v - step


def collapse_monitor(mu) -> float:
    """Mean over coordinates of the across-sample variance of ``mu`` ``[N, n]``."""
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim != 2 or mu.shape[0] == 0:
        raise ValueError(f"collapse_monitor needs a non-empty [N, n] batch, got shape {mu.shape}")
    return float(np.mean(np.var(mu, axis=0)))


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS[name],)))


def write_epoch_csv(records: Sequence[EpochRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(r.row())


def read_epoch_csv(path) -> list[EpochRecord]:
    with open(path, newline="", encoding="utf-8") as fp:
        rows = list(csv.DictReader(fp))
    return [EpochRecord(int(r["epoch"]), r["alpha"], *(float(r[k]) for k in CSV_HEADER[2:])) for r in rows]


class _Run:
    """State of one training run."""

    def __init__(self, data: TrainingData, mcfg: ModelConfig, tcfg: TrainConfig, params, velocities):
        self.data, self.mcfg, self.cfg = data, mcfg, tcfg
        self.params = params
        self.dtype = params.dtype
        self.all = params.all()
        self.velocities = velocities
        self.voxels = data.voxels.astype(self.dtype)
        self.views = data.views.astype(self.dtype)

    def batch_step(self, idx: np.ndarray, alpha: str, eps_v: np.ndarray, eps_i: np.ndarray, lr: float):
        """One optimizer step on the batch ``idx``; returns (summed breakdown, active mu)."""
        cfg, b = self.cfg, len(idx)
        chunk = cfg.micro_batch or b
        self.all.zero_grad()
        sums = np.zeros(4)
        mus = []
        for s in range(0, b, chunk):
            sl = slice(s, s + chunk)
            sub = idx[sl]
            frac = len(sub) / b
            x_vox = self.voxels[sub]
            dv = voxel_encode(x_vox, self.params.vox, self.mcfg)
            di = image_encode(self.views[sub], self.params.img, self.mcfg)
            zv = reparameterize(dv, eps_v[sl])
            zi = reparameterize(di, eps_i[sl])
            active, _ = switch_select(_decision(alpha), di, dv)
            z_active = zv if alpha == VOX else zi
            logits = decode_logits(z_active, self.params.dec, self.mcfg)
            loss, br = total_loss(alpha, x_vox, logits, active, zi, zv, cfg.weights, logits=True)
            if not np.isfinite(br.total):
                return None, None
            backward(_scaled(loss, frac))
            sums += np.array(br.as_row()) * len(sub)
            mus.append(active.mean.data.astype(np.float64))
        grads = {k: self.all.grad_of(k) for k in self.all}
        if cfg.clip_norm > 0:
            norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
            if norm > cfg.clip_norm:
                grads = {k: g * (cfg.clip_norm / norm) for k, g in grads.items()}
        sgd_nesterov_step(self.all, grads, self.velocities, lr, cfg.momentum)
        return sums, np.concatenate(mus)


def _scaled(loss, frac):
    return loss if frac == 1.0 else ops.scale(loss, frac)


def _decision(alpha):
    return SwitchDecision(alpha, 1.0 if alpha == VOX else 0.0, -1)


def train(data, model_config: ModelConfig, train_config: TrainConfig, out_dir=None, *,
          params: ModelParams | None = None, resume=None, on_epoch=None) -> TrainResult:
    """Train from the seed (or resume from a checkpoint path).

    ``data`` is a :class:`TrainingData` or a manifest (its train split).  With
    ``out_dir`` set, ``epochs.csv`` and checkpoints under ``checkpoints/`` are
    written there.  ``on_epoch`` is called with each :class:`EpochRecord`.
    """
    if isinstance(data, DatasetManifest):
        data = TrainingData.from_manifest(data, "train")
    if len(data) == 0:
        raise ValueError("training data is empty")
    cfg = train_config.effective()
    dtype = PRECISIONS[cfg.precision]
    rngs = {name: stream(cfg.seed, name) for name in STREAMS}
    start, records, velocities = 0, [], {}
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config != model_config:
            raise ValueError("resume checkpoint was written for a different model config")
        params = ckpt.params
        params.astype(dtype)
        velocities = {k: v.astype(dtype) for k, v in ckpt.velocities.items()}
        for name, state in ckpt.rng_states.items():
            rngs[name].bit_generator.state = state
        start = int(ckpt.meta.get("epoch", -1)) + 1
        if out_dir is not None and (Path(out_dir) / "epochs.csv").is_file():
            records = read_epoch_csv(Path(out_dir) / "epochs.csv")[:start]
    elif params is None:
        params = init_params(model_config, rngs["init"], dtype)
    else:
        params.astype(dtype)
    run = _Run(data, model_config, cfg, params, velocities)
    out = Path(out_dir) if out_dir is not None else None
    checkpoints: list[Path] = []
    n, b, latent = len(data), cfg.batch_size, model_config.latent_dim
    low_streak = 0
    for rec in records:
        low_streak = low_streak + 1 if rec.latent_var < cfg.collapse_threshold else 0

    def save(epoch: int, name: str) -> None:
        if out is None:
            return
        path = out / "checkpoints" / name
        states = {k: g.bit_generator.state for k, g in rngs.items()}
        meta = {"epoch": epoch, "mode": cfg.mode, "seed": cfg.seed, "precision": cfg.precision}
        save_checkpoint(path, model_config, params, velocities, states, meta)
        checkpoints.append(path)

    for epoch in range(start, cfg.epochs):
        decision = draw_switch(rngs["switch"], cfg.p_vox, epoch)
        lr = lr_schedule(epoch, cfg.lr0, cfg.decay, cfg.decay_every, cfg.decay_start)
        order = rngs["shuffle"].permutation(n)
        sums = np.zeros(4)
        mus = []
        for s in range(0, n, b):
            idx = order[s:s + b]
            eps_v = rngs["eps"].standard_normal((len(idx), latent)).astype(dtype)
            eps_i = rngs["eps"].standard_normal((len(idx), latent)).astype(dtype)
            part, mu = run.batch_step(idx, decision.alpha, eps_v, eps_i, lr)
            if part is None:
                ids = [data.ids[i] for i in idx]
                last = records[-3:]
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} on batch {ids}; last finite totals "
                    f"{[float(r.total) for r in last]}", epoch, ids, last)
            sums += part
            mus.append(mu)
        recon, kl, con, tot = sums / n
        stat = collapse_monitor(np.concatenate(mus))
        low_streak = low_streak + 1 if stat < cfg.collapse_threshold else 0
        flagged = low_streak >= cfg.collapse_patience
        record = EpochRecord(epoch, decision.alpha, float(lr), float(recon), float(kl), float(con), float(tot),
                             float(stat), flagged)
        records.append(record)
        if flagged:
            msg = f"latent collapse: variance statistic {stat:.3g} below {cfg.collapse_threshold} for {low_streak} epochs"
            warnings.warn(msg, CollapseWarning, stacklevel=2)
            log.warning(msg)
        log.info("epoch %d alpha=%s lr=%.3g recon=%.5g kl=%.5g contras=%.5g var=%.3g",
                 epoch, decision.alpha, lr, recon, kl, con, stat)
        if on_epoch is not None:
            on_epoch(record)
        if out is not None:
            write_epoch_csv(records, out / "epochs.csv")
        if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0 and epoch + 1 < cfg.epochs:
            save(epoch, f"epoch_{epoch:04d}.ckpt")
    save(cfg.epochs - 1, "final.ckpt")
    if out is not None and not records:
        write_epoch_csv(records, out / "epochs.csv")
    return TrainResult(params, records, checkpoints, velocities)


def encode_means(params: ModelParams, config: ModelConfig, data, modality: str, batch: int = 32) -> np.ndarray:
    """Posterior means ``[N, n]`` for a modality's array stack, without recording a tape."""
    out = []
    arr = np.asarray(data)
    with no_grad():
        for s in range(0, len(arr), batch):
            chunk = arr[s:s + batch].astype(params.dtype)
            if modality == VOX:
                dist = voxel_encode(chunk, params.vox, config)
            elif modality == IMG:
                dist = image_encode(chunk, params.img, config)
            else:
                raise ValueError(f"unknown modality {modality!r}")
            out.append(dist.mean.data.astype(np.float64))
    if not out:
        return np.zeros((0, config.latent_dim))
    return np.concatenate(out)


__all__ = [
    "CSV_HEADER", "CollapseWarning", "EpochRecord", "LossBreakdown", "MODES", "TrainConfig", "TrainResult",
    "TrainingData", "TrainingDivergedError", "collapse_monitor", "encode_means", "lr_schedule",
    "read_epoch_csv", "sgd_nesterov_step", "stream", "train", "write_epoch_csv",
]
