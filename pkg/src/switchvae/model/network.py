"""SwitchVAE network: voxel encoder, multi-view image encoder, shared decoder.

Voxel encoder: four 3x3x3 conv layers (strides 1, 2, 1, 2; channels 8, 16,
32, 64; ELU), flatten, dense to 343 with ELU, then linear heads for the mean
and log-variance.  The decoder mirrors it: dense to 343 (ELU), dense to the
flattened ``64 x (D/4)^3`` bottleneck (ELU), four transposed convs (strides 2,
1, 2, 1; channels 32, 16, 8, 1), ELU between them and a sigmoid at the end.

Image encoder: a shared-weight per-view CNN (stride-2 conv layers with ELU,
flatten, dense + ELU), a GRU over the views in pose order, and linear heads on
the final hidden state.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..numerics import GRU_KEYS, ParamGroup, Tensor, conv2d, conv3d, deconv3d, dense, gru_cell, ops
from ..numerics.tensor import make_result

VOX_CHANNELS = (8, 16, 32, 64)
VOX_STRIDES = (1, 2, 1, 2)
FEATURE_DIM = 343
LOGVAR_BIAS_INIT = -4.0

VOX, IMG = "vox", "img"


class ModelConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    latent_dim: int = 128
    resolution: int = 32
    views: int = 8
    view_height: int = 32
    view_width: int = 32
    view_channels: int = 1
    image_channels: tuple[int, ...] = (8, 16, 32)
    view_feature: int = 64
    gru_hidden: int = 128
    feature_dim: int = FEATURE_DIM

    def __post_init__(self):
        self.image_channels = tuple(int(c) for c in self.image_channels)
        for name in ("latent_dim", "resolution", "views", "view_height", "view_width",
                     "view_channels", "view_feature", "gru_hidden", "feature_dim"):
            if int(getattr(self, name)) < 1:
                raise ModelConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.image_channels or min(self.image_channels) < 1:
            raise ModelConfigError(f"image_channels must be positive, got {self.image_channels}")
        if self.resolution % 4:
            raise ModelConfigError(f"resolution must be divisible by 4 for an exact decoder mirror, got {self.resolution}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_channels"] = list(self.image_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ModelConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)

    @property
    def bottleneck(self) -> int:
        return self.resolution // 4

    def view_map_size(self) -> tuple[int, int]:
        h, w = self.view_height, self.view_width
        for _ in self.image_channels:
            h, w = math.ceil(h / 2), math.ceil(w / 2)
        return h, w


@dataclass
class LatentDistribution:
    mean: Tensor
    log_var: Tensor
    source: str = VOX


@dataclass
class LatentCode:
    z: Tensor
    source: str = VOX


@dataclass
class ModelParams:
    """The three parameter groups; ids carry ``vox_enc/``, ``img_enc/``, ``dec/`` prefixes."""
    vox: ParamGroup
    img: ParamGroup
    dec: ParamGroup
    dtype: np.dtype = field(default=np.dtype(np.float64))

    def all(self) -> ParamGroup:
        return self.vox.merged(self.img, self.dec)

    def zero_grad(self) -> None:
        for g in (self.vox, self.img, self.dec):
            g.zero_grad()

    def astype(self, dtype) -> None:
        self.dtype = np.dtype(dtype)
        for g in (self.vox, self.img, self.dec):
            g.astype(dtype)


def spatial_trace(config: ModelConfig) -> tuple[list[int], list[int]]:
    """Spatial extents through the voxel encoder and through the decoder."""
    enc = [config.resolution]
    for s in VOX_STRIDES:
        enc.append(math.ceil(enc[-1] / s))
    dec = [enc[-1]]
    for s in reversed(VOX_STRIDES):
        dec.append(dec[-1] * s)
    return enc, dec


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Shape of every parameter, keyed by id."""
    n, b = config.latent_dim, config.bottleneck
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = 1
    for i, c in enumerate(VOX_CHANNELS, 1):
        shapes[f"vox_enc/conv{i}/kernel"] = (c, c_in, 3, 3, 3)
        shapes[f"vox_enc/conv{i}/bias"] = (c,)
        c_in = c
    flat = VOX_CHANNELS[-1] * b ** 3
    f = config.feature_dim
    shapes["vox_enc/fc/weight"] = (f, flat)
    shapes["vox_enc/fc/bias"] = (f,)
    for head in ("mu", "logvar"):
        shapes[f"vox_enc/{head}/weight"] = (n, f)
        shapes[f"vox_enc/{head}/bias"] = (n,)

    c_in = config.view_channels
    for i, c in enumerate(config.image_channels, 1):
        shapes[f"img_enc/conv{i}/kernel"] = (c, c_in, 3, 3)
        shapes[f"img_enc/conv{i}/bias"] = (c,)
        c_in = c
    mh, mw = config.view_map_size()
    fv, hd = config.view_feature, config.gru_hidden
    shapes["img_enc/view_fc/weight"] = (fv, c_in * mh * mw)
    shapes["img_enc/view_fc/bias"] = (fv,)
    for k in GRU_KEYS:
        shapes[f"img_enc/gru/{k}"] = {"W": (hd, fv), "U": (hd, hd), "b": (hd,)}[k[0]]
    for head in ("mu", "logvar"):
        shapes[f"img_enc/{head}/weight"] = (n, hd)
        shapes[f"img_enc/{head}/bias"] = (n,)

    shapes["dec/fc1/weight"] = (f, n)
    shapes["dec/fc1/bias"] = (f,)
    shapes["dec/fc2/weight"] = (flat, f)
    shapes["dec/fc2/bias"] = (flat,)
    dec_channels = list(reversed(VOX_CHANNELS[:-1])) + [1]
    c_in = VOX_CHANNELS[-1]
    for i, c in enumerate(dec_channels, 1):
        shapes[f"dec/deconv{i}/kernel"] = (c_in, c, 3, 3, 3)
        shapes[f"dec/deconv{i}/bias"] = (c,)
        c_in = c
    return shapes


def _fans(key: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 2:
        return shape[1], shape[0]
    receptive = int(np.prod(shape[2:]))
    if "/deconv" in key:
        return shape[0] * receptive, shape[1] * receptive
    return shape[1] * receptive, shape[0] * receptive


def init_params(config: ModelConfig, rng: np.random.Generator, dtype=np.float64,
                logvar_bias: float = LOGVAR_BIAS_INIT) -> ModelParams:
    """Glorot-uniform weights, zero biases; drawn in lexicographic id order.

    The log-variance heads start at ``logvar_bias`` so early codes are not
    swamped by unit-variance noise before the decoder has learned anything.
    """
    check_mirror(config)
    groups = {"vox_enc/": ParamGroup(), "img_enc/": ParamGroup(), "dec/": ParamGroup()}
    for key, shape in sorted(param_shapes(config).items()):
        if key.endswith("/logvar/bias"):
            value = np.full(shape, float(logvar_bias))
        elif key.endswith("/bias") or key.split("/")[-1].startswith("b_"):
            value = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(key, shape)
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            value = rng.uniform(-limit, limit, size=shape)
        prefix = key.split("/", 1)[0] + "/"
        groups[prefix][key] = value.astype(dtype)
    return ModelParams(groups["vox_enc/"], groups["img_enc/"], groups["dec/"], np.dtype(dtype))


def check_mirror(config: ModelConfig) -> None:
    enc, dec = spatial_trace(config)
    if dec != list(reversed(enc)):
        raise ModelConfigError(f"decoder trace {dec} does not mirror encoder trace {enc}")


def _input(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x if x.dtype == dtype else Tensor(x.data.astype(dtype))
    return Tensor(np.asarray(x, dtype=dtype))


def voxel_encode(grid, params: ParamGroup, config: ModelConfig) -> LatentDistribution:
    """Encode ``[N, D, D, D]`` (or ``[N, 1, D, D, D]``) occupancy grids."""
    dtype = params["vox_enc/fc/weight"].dtype
    x = _input(grid, dtype)
    d = config.resolution
    if x.ndim == 3:
        x = ops.reshape(x, (1, 1, *x.shape))
    elif x.ndim == 4:
        x = ops.reshape(x, (x.shape[0], 1, *x.shape[1:]))
    if x.shape[2:] != (d, d, d):
        raise ModelConfigError(f"voxel_encode: grid extent {x.shape[2:]} does not match resolution {d}")
    h = x
    for i, s in enumerate(VOX_STRIDES, 1):
        h = ops.elu(conv3d(h, params[f"vox_enc/conv{i}/kernel"], params[f"vox_enc/conv{i}/bias"], stride=s))
    h = ops.reshape(h, (h.shape[0], -1))
    h = ops.elu(dense(h, params["vox_enc/fc/weight"], params["vox_enc/fc/bias"]))
    mu = dense(h, params["vox_enc/mu/weight"], params["vox_enc/mu/bias"])
    log_var = dense(h, params["vox_enc/logvar/weight"], params["vox_enc/logvar/bias"])
    return LatentDistribution(mu, log_var, VOX)


def image_encode(views, params: ParamGroup, config: ModelConfig) -> LatentDistribution:
    """Encode ``[N, V, C, H, W]`` view stacks (``[V, C, H, W]`` for one sample)."""
    dtype = params["img_enc/view_fc/weight"].dtype
    x = _input(views, dtype)
    if x.ndim == 4:
        x = ops.reshape(x, (1, *x.shape))
    n, v = x.shape[:2]
    expected = (config.views, config.view_channels, config.view_height, config.view_width)
    if x.shape[1:] != expected:
        raise ModelConfigError(f"image_encode: views shape {x.shape[1:]} does not match config {expected}")
    h = ops.reshape(x, (n * v, *x.shape[2:]))
    for i in range(1, len(config.image_channels) + 1):
        h = ops.elu(conv2d(h, params[f"img_enc/conv{i}/kernel"], params[f"img_enc/conv{i}/bias"], stride=2))
    h = ops.reshape(h, (n * v, -1))
    feats = ops.elu(dense(h, params["img_enc/view_fc/weight"], params["img_enc/view_fc/bias"]))
    feats = ops.reshape(feats, (n, v, -1))
    gru = {k: params[f"img_enc/gru/{k}"] for k in GRU_KEYS}
    state = Tensor(np.zeros((n, config.gru_hidden), dtype=dtype))
    for t in range(v):
        state = gru_cell(state, ops.index(feats, (slice(None), t)), gru)
    mu = dense(state, params["img_enc/mu/weight"], params["img_enc/mu/bias"])
    log_var = dense(state, params["img_enc/logvar/weight"], params["img_enc/logvar/bias"])
    return LatentDistribution(mu, log_var, IMG)


def reparameterize(dist: LatentDistribution, epsilon) -> LatentCode:
    """z = mean + exp(log_var / 2) * epsilon; epsilon takes no gradient."""
    mu, lv = dist.mean, dist.log_var
    eps = np.asarray(epsilon.data if isinstance(epsilon, Tensor) else epsilon, dtype=mu.dtype)
    if eps.shape != mu.shape:
        raise ModelConfigError(f"reparameterize: epsilon shape {eps.shape} != mean shape {mu.shape}")
    sigma = np.exp(0.5 * lv.data)
    noise = sigma * eps

    def back(g):
        return g, 0.5 * g * noise

    z = make_result(mu.data + noise, (mu, lv), back, "reparameterize")
    return LatentCode(z, dist.source)


def decode(z, params: ParamGroup, config: ModelConfig) -> Tensor:
    """Map ``[N, n]`` codes to ``[N, D, D, D]`` occupancy probabilities."""
    return ops.sigmoid(decode_logits(z, params, config))


def decode_logits(z, params: ParamGroup, config: ModelConfig) -> Tensor:
    """Decoder output before the final sigmoid."""
    if isinstance(z, LatentCode):
        z = z.z
    dtype = params["dec/fc1/weight"].dtype
    z = _input(z, dtype)
    squeeze = z.ndim == 1
    if squeeze:
        z = ops.reshape(z, (1, -1))
    if z.shape[-1] != config.latent_dim:
        raise ModelConfigError(f"decode: code length {z.shape[-1]} != latent_dim {config.latent_dim}")
    n, b = z.shape[0], config.bottleneck
    h = ops.elu(dense(z, params["dec/fc1/weight"], params["dec/fc1/bias"]))
    h = ops.elu(dense(h, params["dec/fc2/weight"], params["dec/fc2/bias"]))
    h = ops.reshape(h, (n, VOX_CHANNELS[-1], b, b, b))
    strides = tuple(reversed(VOX_STRIDES))
    for i, s in enumerate(strides, 1):
        h = deconv3d(h, params[f"dec/deconv{i}/kernel"], params[f"dec/deconv{i}/bias"], stride=s)
        if i < len(strides):
            h = ops.elu(h)
    d = config.resolution
    out = ops.reshape(h, (n, d, d, d))
    return ops.reshape(out, (d, d, d)) if squeeze else out


@dataclass(frozen=True)
class SwitchDecision:
    alpha: str
    p_vox: float
    epoch: int


def draw_switch(rng: np.random.Generator, p_vox: float, epoch: int) -> SwitchDecision:
    """One draw from the switch stream: voxel branch with probability ``p_vox``."""
    if not 0.0 <= p_vox <= 1.0:
        raise ValueError(f"p_vox must lie in [0, 1], got {p_vox}")
    u = rng.random()
    return SwitchDecision(VOX if u < p_vox else IMG, float(p_vox), int(epoch))


def switch_select(decision: SwitchDecision, dist_img: LatentDistribution,
                  dist_vox: LatentDistribution) -> tuple[LatentDistribution, LatentDistribution]:
    """(active, inactive): the active branch alone feeds the decoder."""
    if decision.alpha == VOX:
        return dist_vox, dist_img
    if decision.alpha == IMG:
        return dist_img, dist_vox
    raise ValueError(f"unknown switch position {decision.alpha!r}")


class SwitchVAE:
    """Config plus parameters, with convenience wrappers over the functional API."""

    def __init__(self, config: ModelConfig, params: ModelParams):
        check_mirror(config)
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator, dtype=np.float64) -> SwitchVAE:
        return cls(config, init_params(config, rng, dtype))

    def encode_voxels(self, grids) -> LatentDistribution:
        return voxel_encode(grids, self.params.vox, self.config)

    def encode_images(self, views) -> LatentDistribution:
        return image_encode(views, self.params.img, self.config)

    def encode(self, data, modality: str) -> LatentDistribution:
        if modality == VOX:
            return self.encode_voxels(data)
        if modality == IMG:
            return self.encode_images(data)
        raise ValueError(f"unknown modality {modality!r}")

    def decode(self, z) -> Tensor:
        return decode(z, self.params.dec, self.config)
