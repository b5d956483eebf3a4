"""The three-term objective: weighted reconstruction, KL and contrastive terms.

Every term is a per-sample sum (over voxels or latent coordinates); batches
are reduced by the mean over samples.  Each loss is a single fused op with a
closed-form gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model.network import LatentCode, LatentDistribution
from .numerics import Tensor, ops
from .numerics.tensor import ShapeError, make_result

CLAMP = 1e-7
POLICIES = ("both", "stop-inactive")


@dataclass
class LossWeights:
    """Loss weights.

    ``recon_weight`` scales the reconstruction term and exists for test
    harnesses that switch it off; ``policy`` selects whether the contrastive
    gradient reaches both encoders or only the active one.
    """
    lambda_kl: float = 1e-3
    lambda_contras: float = 1.0
    gamma: float = 0.8
    recon_weight: float = 1.0
    policy: str = "both"
    normalize_latents: bool = False

    def __post_init__(self):
        if self.lambda_kl < 0 or self.lambda_contras < 0 or self.recon_weight < 0:
            raise ValueError(f"loss weights must be non-negative: {self}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown contrastive policy {self.policy!r}; expected one of {POLICIES}")


@dataclass
class LossBreakdown:
    recon: float
    kl: float
    contras: float
    total: float

    def as_row(self) -> tuple[float, float, float, float]:
        return self.recon, self.kl, self.contras, self.total


def recon_loss(target, prediction: Tensor, gamma: float = 0.8) -> Tensor:
    """Weighted binary cross-entropy summed over voxels (mean over a leading batch axis).

    A prediction with the same rank as one grid is a single sample; an extra
    leading axis is a batch.
    """
    x = np.asarray(target.data if isinstance(target, Tensor) else target)
    p = prediction if isinstance(prediction, Tensor) else Tensor(np.asarray(prediction, dtype=float))
    if x.shape != p.shape:
        raise ShapeError(f"recon_loss: target shape {x.shape} != prediction shape {p.shape}")
    x = x.astype(p.dtype, copy=False)
    q = np.clip(p.data, CLAMP, 1.0 - CLAMP)
    per_voxel = -gamma * x * np.log(q) - (1.0 - gamma) * (1.0 - x) * np.log1p(-q)
    n = p.shape[0] if p.ndim == 4 else 1
    value = np.asarray(per_voxel.sum() / n, dtype=p.dtype)

    # the clamp bounds the logs but passes the gradient through (evaluated at
    # the clamped value), so saturated outputs can still recover
    def back(g):
        dq = -gamma * x / q + (1.0 - gamma) * (1.0 - x) / (1.0 - q)
        return (g * dq / n,)

    return make_result(value, (p,), back, "recon_loss")


def recon_loss_logits(target, logits: Tensor, gamma: float = 0.8) -> Tensor:
    """``recon_loss(target, sigmoid(logits))`` evaluated stably from logits.

    Logits are clamped to the range matching the probability clamp, so the
    value equals the probability form; the gradient
    ``(1 - gamma) (1 - x) p - gamma x (1 - p)`` stays informative when the
    sigmoid saturates.
    """
    x = np.asarray(target.data if isinstance(target, Tensor) else target)
    if x.shape != logits.shape:
        raise ShapeError(f"recon_loss: target shape {x.shape} != prediction shape {logits.shape}")
    x = x.astype(logits.dtype, copy=False)
    bound = np.log((1.0 - CLAMP) / CLAMP)
    lg = np.clip(logits.data, -bound, bound)
    # log p = -softplus(-l), log(1 - p) = -softplus(l)
    sp_neg = np.logaddexp(0.0, -lg)
    sp_pos = np.logaddexp(0.0, lg)
    per_voxel = gamma * x * sp_neg + (1.0 - gamma) * (1.0 - x) * sp_pos
    n = logits.shape[0] if logits.ndim == 4 else 1
    value = np.asarray(per_voxel.sum() / n, dtype=logits.dtype)

    def back(g):
        p = ops.sigmoid(Tensor(logits.data)).data
        return (g * ((1.0 - gamma) * (1.0 - x) * p - gamma * x * (1.0 - p)) / n,)

    return make_result(value, (logits,), back, "recon_loss_logits")


def kl_loss(dist: LatentDistribution) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over coordinates, mean over a batch axis."""
    mu, lv = dist.mean, dist.log_var
    if mu.shape != lv.shape:
        raise ShapeError(f"kl_loss: mean shape {mu.shape} != log_var shape {lv.shape}")
    n = mu.shape[0] if mu.ndim == 2 else 1
    var = np.exp(lv.data)
    value = np.asarray(-0.5 * np.sum(1.0 + lv.data - mu.data ** 2 - var) / n, dtype=mu.dtype)

    def back(g):
        return g * mu.data / n, g * 0.5 * (var - 1.0) / n

    return make_result(value, (mu, lv), back, "kl_loss")


def contrastive_loss(z_img, z_vox) -> Tensor:
    """Squared Euclidean distance between paired codes, mean over a batch axis."""
    a = z_img.z if isinstance(z_img, LatentCode) else z_img
    b = z_vox.z if isinstance(z_vox, LatentCode) else z_vox
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=float))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise ShapeError(f"contrastive_loss: code shapes {a.shape} and {b.shape} differ")
    n = a.shape[0] if a.ndim == 2 else 1
    diff = a.data - b.data
    value = np.asarray(np.sum(diff * diff) / n, dtype=a.dtype)

    def back(g):
        ga = 2.0 * g * diff / n
        return ga, -ga

    return make_result(value, (a, b), back, "contrastive_loss")


def total_loss(alpha: str, target, prediction: Tensor, dist_active: LatentDistribution,
               z_img, z_vox, weights: LossWeights, *, logits: bool = False) -> tuple[Tensor, LossBreakdown]:
    """Compose the objective; KL applies to the active branch only.

    Under the ``stop-inactive`` policy the code of the branch not named by
    ``alpha`` is detached before the contrastive term.  With ``logits=True``
    the prediction holds decoder logits and the reconstruction term is
    evaluated by :func:`recon_loss_logits`.
    """
    if dist_active.source != alpha:
        raise ValueError(f"active distribution comes from {dist_active.source!r} but alpha is {alpha!r}")
    zi = z_img.z if isinstance(z_img, LatentCode) else z_img
    zv = z_vox.z if isinstance(z_vox, LatentCode) else z_vox
    if weights.policy == "stop-inactive":
        if alpha == "vox":
            zi = ops.detach(zi)
        else:
            zv = ops.detach(zv)
    if weights.normalize_latents:
        zi, zv = ops.l2_normalize(zi), ops.l2_normalize(zv)
    rec = (recon_loss_logits if logits else recon_loss)(target, prediction, weights.gamma)
    kl = kl_loss(dist_active)
    con = contrastive_loss(zi, zv)
    total = ops.add(ops.add(ops.scale(rec, weights.recon_weight), ops.scale(kl, weights.lambda_kl)),
                    ops.scale(con, weights.lambda_contras))
    breakdown = LossBreakdown(float(rec.data), float(kl.data), float(con.data), float(total.data))
    return total, breakdown
