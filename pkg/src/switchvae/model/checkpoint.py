"""Checkpoint container.

Layout::

    SWITCHVAE-CKPT\\n
    <manifest length, 8-byte little-endian unsigned>
    <UTF-8 JSON manifest>
    <little-endian float64 payloads, in manifest order>

The manifest records the format version, the model config, every tensor id
with its shape, RNG stream states and free-form metadata.  Tensor ids are
parameter ids, then optimizer velocities under ``optim/``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..numerics import ParamGroup
from .network import ModelConfig, ModelParams, param_shapes

MAGIC = b"SWITCHVAE-CKPT\n"
FORMAT_VERSION = 1
VELOCITY_PREFIX = "optim/"


class CheckpointError(ValueError):
    """Malformed checkpoint or shape mismatch against the model config."""


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    velocities: dict[str, np.ndarray] = field(default_factory=dict)
    rng_states: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def save_checkpoint(path, config: ModelConfig, params: ModelParams, velocities=None,
                    rng_states=None, meta=None) -> None:
    tensors: list[tuple[str, np.ndarray]] = []
    for key, t in params.all().items():
        tensors.append((key, t.data))
    for key in sorted(velocities or {}):
        tensors.append((VELOCITY_PREFIX + key, np.asarray(velocities[key])))
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": config.to_dict(),
        "dtype": str(params.dtype),
        "tensors": [{"id": k, "shape": list(v.shape)} for k, v in tensors],
        "rng_states": rng_states or {},
        "meta": meta or {},
    }
    blob = _dumps(manifest)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fp:
        fp.write(MAGIC)
        fp.write(struct.pack("<Q", len(blob)))
        fp.write(blob)
        for _, v in tensors:
            fp.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", raw[pos:pos + 8])
    pos += 8
    try:
        manifest = json.loads(raw[pos:pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest: {exc}") from exc
    pos += n
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {manifest.get('format_version')}")
    config = ModelConfig.from_dict(manifest["model_config"])
    expected = param_shapes(config)
    dtype = np.dtype(manifest.get("dtype", "float64"))
    groups = {"vox_enc/": ParamGroup(), "img_enc/": ParamGroup(), "dec/": ParamGroup()}
    velocities = {}
    for entry in manifest["tensors"]:
        key, shape = entry["id"], tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: payload truncated at {key}")
        value = np.frombuffer(raw[pos:end], dtype="<f8").reshape(shape).astype(np.float64)
        pos = end
        if key.startswith(VELOCITY_PREFIX):
            velocities[key[len(VELOCITY_PREFIX):]] = value
            continue
        if key not in expected:
            raise CheckpointError(f"{path}: unexpected parameter {key}")
        if shape != expected[key]:
            raise CheckpointError(f"{path}: parameter {key} has shape {shape}, config expects {expected[key]}")
        groups[key.split("/", 1)[0] + "/"][key] = value.astype(dtype)
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    loaded = {k for g in groups.values() for k in g}
    missing = sorted(set(expected) - loaded)
    if missing:
        raise CheckpointError(f"{path}: missing parameters {missing[:3]}")
    for key, v in velocities.items():
        if key not in expected or v.shape != expected[key]:
            raise CheckpointError(f"{path}: velocity {key} does not match a parameter shape")
    params = ModelParams(groups["vox_enc/"], groups["img_enc/"], groups["dec/"], dtype)
    return Checkpoint(config, params, velocities, manifest.get("rng_states", {}), manifest.get("meta", {}))
