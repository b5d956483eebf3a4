"""SwitchVAE model: encoders, decoder, switch and checkpoints."""
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .network import (
    FEATURE_DIM, IMG, VOX, VOX_CHANNELS, VOX_STRIDES, LatentCode, LatentDistribution, ModelConfig,
    ModelConfigError, ModelParams, SwitchDecision, SwitchVAE, check_mirror, decode, decode_logits, draw_switch,
    image_encode, init_params, param_shapes, reparameterize, spatial_trace, switch_select,
    voxel_encode,
)

__all__ = [
    "Checkpoint", "CheckpointError", "load_checkpoint", "save_checkpoint", "FEATURE_DIM", "IMG", "VOX",
    "VOX_CHANNELS", "VOX_STRIDES", "LatentCode", "LatentDistribution", "ModelConfig", "ModelConfigError",
    "ModelParams", "SwitchDecision", "SwitchVAE", "check_mirror", "decode", "decode_logits", "draw_switch", "image_encode",
    "init_params", "param_shapes", "reparameterize", "spatial_trace", "switch_select", "voxel_encode",
]
