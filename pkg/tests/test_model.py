import numpy as np
import pytest

from conftest import tiny_config
from switchvae.losses import LossWeights, total_loss
from switchvae.model import (
    IMG, VOX, Checkpoint, CheckpointError, LatentDistribution, ModelConfig, ModelConfigError, SwitchDecision,
    SwitchVAE, decode, draw_switch, image_encode, init_params, load_checkpoint, param_shapes, reparameterize,
    save_checkpoint, spatial_trace, switch_select, voxel_encode,
)
from switchvae.numerics import Tensor, backward, grad_check


def _grid(cfg, seed=0, n=None):
    rng = np.random.default_rng(seed)
    shape = (cfg.resolution,) * 3 if n is None else (n,) + (cfg.resolution,) * 3
    return (rng.random(shape) < 0.4).astype(float)


def _views(cfg, seed=0, n=None):
    rng = np.random.default_rng(seed)
    shape = (cfg.views, cfg.view_channels, cfg.view_height, cfg.view_width)
    return rng.random(shape if n is None else (n,) + shape)


def _zero_weights(params, heads_rng=None):
    for group in (params.vox, params.img, params.dec):
        for key in group:
            group[key].data[...] = 0.0
    if heads_rng is not None:
        for group, prefix in ((params.vox, "vox_enc"), (params.img, "img_enc")):
            for head in ("mu", "logvar"):
                group[f"{prefix}/{head}/bias"].data[...] = heads_rng.standard_normal(group[f"{prefix}/{head}/bias"].shape)


# structure


def test_trace_mirrors_at_32():
    enc, dec = spatial_trace(ModelConfig())
    assert enc == [32, 32, 16, 16, 8]
    assert dec == [8, 16, 16, 32, 32]


@pytest.mark.parametrize("bad", [dict(resolution=30), dict(latent_dim=0), dict(image_channels=())])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ModelConfigError):
        ModelConfig(**bad)


def test_default_param_shapes():
    shapes = param_shapes(ModelConfig())
    assert shapes["vox_enc/conv1/kernel"] == (8, 1, 3, 3, 3)
    assert shapes["vox_enc/conv4/kernel"] == (64, 32, 3, 3, 3)
    assert shapes["vox_enc/fc/weight"] == (343, 64 * 8 ** 3)
    assert shapes["vox_enc/mu/weight"] == (128, 343)
    assert shapes["dec/fc2/weight"] == (64 * 8 ** 3, 343)
    assert shapes["dec/deconv4/kernel"] == (8, 1, 3, 3, 3)
    assert shapes["img_enc/gru/U_h"] == (128, 128)


def test_param_groups_prefixes(model):
    assert all(k.startswith("vox_enc/") for k in model.params.vox)
    assert all(k.startswith("img_enc/") for k in model.params.img)
    assert all(k.startswith("dec/") for k in model.params.dec)
    assert set(model.params.all()) == set(param_shapes(model.config))


# encoders and decoder


@pytest.mark.parametrize("batched", [False, True])
def test_output_shapes(model, cfg, batched):
    n = 3 if batched else None
    dv = model.encode_voxels(_grid(cfg, n=n))
    di = model.encode_images(_views(cfg, n=n))
    lead = (3,) if batched else (1,)
    for d in (dv, di):
        assert d.mean.shape == lead + (cfg.latent_dim,) and d.log_var.shape == d.mean.shape
    assert dv.source == VOX and di.source == IMG
    out = model.decode(np.zeros(cfg.latent_dim))
    assert out.shape == (cfg.resolution,) * 3
    assert np.all((out.data > 0) & (out.data < 1))


def test_zero_weights_give_head_biases(cfg):
    params = init_params(cfg, np.random.default_rng(1))
    _zero_weights(params, np.random.default_rng(2))
    for enc, x, prefix in ((voxel_encode, _grid(cfg), "vox_enc"), (image_encode, _views(cfg), "img_enc")):
        group = params.vox if prefix == "vox_enc" else params.img
        d1 = enc(x, group, cfg)
        d2 = enc(x * 0 + 0.7, group, cfg)
        np.testing.assert_array_equal(d1.mean.data[0], group[f"{prefix}/mu/bias"].data)
        np.testing.assert_array_equal(d1.log_var.data[0], group[f"{prefix}/logvar/bias"].data)
        np.testing.assert_array_equal(d1.mean.data, d2.mean.data)


def test_zero_decoder_gives_half(cfg):
    params = init_params(cfg, np.random.default_rng(1))
    _zero_weights(params)
    out = decode(np.random.default_rng(0).standard_normal((2, cfg.latent_dim)), params.dec, cfg)
    assert np.all(out.data == 0.5)


def test_encoders_are_input_sensitive(model, cfg):
    a = model.encode_voxels(_grid(cfg, 1)).mean.data
    b = model.encode_voxels(_grid(cfg, 2)).mean.data
    assert not np.allclose(a, b)


def test_view_order_matters(model, cfg):
    v = _views(cfg, 3)
    a = model.encode_images(v).mean.data
    b = model.encode_images(v[::-1].copy()).mean.data
    assert not np.allclose(a, b)


def test_constant_view_sequence_is_deterministic(model, cfg):
    v = np.repeat(_views(cfg, 4)[:1], cfg.views, axis=0)
    a = model.encode_images(v)
    b = model.encode_images(v)
    np.testing.assert_array_equal(a.mean.data, b.mean.data)


def test_forward_is_pure(model, cfg):
    before = model.params.all().values_copy()
    x = _grid(cfg, 5)
    first = model.decode(model.encode_voxels(x).mean).data
    second = model.decode(model.encode_voxels(x).mean).data
    np.testing.assert_array_equal(first, second)
    after = model.params.all().values_copy()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_shape_mismatches_raise(model, cfg):
    with pytest.raises(ModelConfigError, match="resolution"):
        model.encode_voxels(np.zeros((1, 12, 12, 12)))
    with pytest.raises(ModelConfigError, match="views"):
        model.encode_images(np.zeros((1, cfg.views + 1, 1, 8, 8)))
    with pytest.raises(ModelConfigError, match="latent"):
        model.decode(np.zeros(cfg.latent_dim + 1))


# reparameterization


def test_reparameterize_examples():
    mu = Tensor(np.array([[0.5, -1.0, 2.0]]), requires_grad=True)
    lv = Tensor(np.zeros((1, 3)), requires_grad=True)
    dist = LatentDistribution(mu, lv, VOX)
    np.testing.assert_array_equal(reparameterize(dist, np.zeros((1, 3))).z.data, mu.data)
    e = np.array([[0.0, 1.0, 0.0]])
    np.testing.assert_array_equal(reparameterize(dist, e).z.data, mu.data + e)


def test_reparameterize_monte_carlo_mean():
    n = 100_000
    mu = np.array([0.3, -2.0, 1.5])
    lv = np.array([0.0, np.log(4.0), np.log(0.25)])
    dist = LatentDistribution(Tensor(np.tile(mu, (n, 1))), Tensor(np.tile(lv, (n, 1))))
    eps = np.random.default_rng(0).standard_normal((n, 3))
    z = reparameterize(dist, eps).z.data
    sigma = np.exp(0.5 * lv)
    assert np.all(np.abs(z.mean(axis=0) - mu) < 3 * sigma / np.sqrt(n))


def test_reparameterize_gradient_reaches_mean_and_log_var():
    rng = np.random.default_rng(0)
    mu = Tensor(rng.standard_normal(4), requires_grad=True)
    lv = Tensor(rng.standard_normal(4), requires_grad=True)
    eps = Tensor(rng.standard_normal(4), requires_grad=True)
    z = reparameterize(LatentDistribution(mu, lv), eps).z
    from switchvae.numerics import ops
    backward(ops.sum(ops.square(z)))
    np.testing.assert_allclose(mu.grad, 2 * z.data)
    np.testing.assert_allclose(lv.grad, 2 * z.data * 0.5 * np.exp(0.5 * lv.data) * eps.data)
    assert eps.grad is None


# switch


@pytest.mark.parametrize("p,expected", [(1.0, VOX), (0.0, IMG)])
def test_switch_extremes(p, expected):
    rng = np.random.default_rng(0)
    assert all(draw_switch(rng, p, e).alpha == expected for e in range(500))


def test_switch_frequency():
    rng = np.random.default_rng(2024)
    freq = np.mean([draw_switch(rng, 0.8, e).alpha == VOX for e in range(10_000)])
    assert 0.79 <= freq <= 0.81


def test_switch_rejects_bad_probability():
    with pytest.raises(ValueError):
        draw_switch(np.random.default_rng(0), 1.5, 0)


def test_switch_select(model, cfg):
    dv = model.encode_voxels(_grid(cfg))
    di = model.encode_images(_views(cfg))
    assert switch_select(SwitchDecision(VOX, 0.8, 0), di, dv) == (dv, di)
    assert switch_select(SwitchDecision(IMG, 0.8, 0), di, dv) == (di, dv)
    with pytest.raises(ValueError):
        switch_select(SwitchDecision("both", 0.8, 0), di, dv)


# gradients through the full model


def _objective(model, cfg, alpha, weights, x, v, ev, ei):
    def f(_=None):
        dv = model.encode_voxels(x)
        di = model.encode_images(v)
        zv, zi = reparameterize(dv, ev), reparameterize(di, ei)
        active, _ = switch_select(SwitchDecision(alpha, 0.5, 0), di, dv)
        pred = model.decode(zv if alpha == VOX else zi)
        return total_loss(alpha, x, pred, active, zi, zv, weights)[0]
    return f


def _group_grad_norms(model, cfg, alpha, weights, seed=0, n=2):
    rng = np.random.default_rng(seed)
    x, v = _grid(cfg, seed, n), _views(cfg, seed, n)
    ev, ei = rng.standard_normal((2, n, cfg.latent_dim))
    model.params.zero_grad()
    backward(_objective(model, cfg, alpha, weights, x, v, ev, ei)())
    return model.params.vox.grad_norm(), model.params.img.grad_norm(), model.params.dec.grad_norm()


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("policy", ["both", "stop-inactive"])
def test_stop_gradient(model, cfg, seed, policy):
    off = LossWeights(lambda_contras=0.0, policy=policy)
    on = LossWeights(lambda_contras=1.0, policy=policy)
    gv, gi, gd = _group_grad_norms(model, cfg, VOX, off, seed)
    assert gi == 0.0 and gv > 0 and gd > 0
    gv, gi, gd = _group_grad_norms(model, cfg, IMG, off, seed)
    assert gv == 0.0 and gi > 0
    gv, gi, _ = _group_grad_norms(model, cfg, VOX, on, seed)
    assert gv > 0
    assert (gi > 0) if policy == "both" else (gi == 0.0)
    gv, gi, _ = _group_grad_norms(model, cfg, IMG, on, seed)
    assert gi > 0
    assert (gv > 0) if policy == "both" else (gv == 0.0)


@pytest.mark.parametrize("alpha", [VOX, IMG])
def test_full_model_grad_check_sampled(alpha):
    cfg = tiny_config()
    model = SwitchVAE.initialize(cfg, np.random.default_rng(7))
    rng = np.random.default_rng(8)
    for key in model.params.all():
        t = model.params.all()[key]
        t.data += 0.05 * rng.standard_normal(t.shape)
    x, v = _grid(cfg, 9, 1), _views(cfg, 9, 1)
    ev, ei = rng.standard_normal((2, 1, cfg.latent_dim))
    f = _objective(model, cfg, alpha, LossWeights(lambda_kl=0.5, lambda_contras=1.0), x, v, ev, ei)
    report = grad_check(f, model.params.all(), max_entries=3, floor="auto", seed=1)
    assert report.passed, report.summary()


# checkpoints


def test_checkpoint_round_trip(tmp_path, model, cfg):
    vel = {k: np.full(t.shape, 0.25) for k, t in model.params.all().items()}
    rng = np.random.default_rng(3)
    save_checkpoint(tmp_path / "m.ckpt", cfg, model.params, vel, {"eps": rng.bit_generator.state}, {"epoch": 4})
    ck = load_checkpoint(tmp_path / "m.ckpt")
    assert isinstance(ck, Checkpoint) and ck.config == cfg and ck.meta == {"epoch": 4}
    for k, t in model.params.all().items():
        np.testing.assert_array_equal(ck.params.all()[k].data, t.data)
        np.testing.assert_array_equal(ck.velocities[k], vel[k])
    restored = np.random.default_rng()
    restored.bit_generator.state = ck.rng_states["eps"]
    assert restored.random() == rng.random()


def test_checkpoint_float32_exact(tmp_path, cfg):
    params = init_params(cfg, np.random.default_rng(0), np.float32)
    save_checkpoint(tmp_path / "m.ckpt", cfg, params)
    ck = load_checkpoint(tmp_path / "m.ckpt")
    assert ck.params.dtype == np.float32
    for k, t in params.all().items():
        np.testing.assert_array_equal(ck.params.all()[k].data, t.data)


def test_checkpoint_layout(tmp_path, model, cfg):
    save_checkpoint(tmp_path / "m.ckpt", cfg, model.params)
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw.startswith(b"SWITCHVAE-CKPT\n")
    n = int.from_bytes(raw[15:23], "little")
    import json
    manifest = json.loads(raw[23:23 + n].decode("utf-8"))
    assert manifest["format_version"] == 1
    total = sum(int(np.prod(e["shape"])) for e in manifest["tensors"])
    assert len(raw) == 23 + n + 8 * total
    first = manifest["tensors"][0]
    value = np.frombuffer(raw[23 + n:23 + n + 8 * int(np.prod(first["shape"]))], "<f8")
    np.testing.assert_array_equal(value.reshape(first["shape"]), model.params.all()[first["id"]].data)


def test_checkpoint_shape_validation(tmp_path, cfg):
    params = init_params(tiny_config(latent_dim=4), np.random.default_rng(0))
    save_checkpoint(tmp_path / "m.ckpt", cfg, params)  # config and params disagree
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(tmp_path / "m.ckpt")


@pytest.mark.parametrize("mutate,match", [
    (lambda b: b"NOPE" + b[4:], "magic"),
    (lambda b: b[:-8], "truncated"),
    (lambda b: b + b"\0" * 8, "trailing"),
])
def test_checkpoint_corruption(tmp_path, model, cfg, mutate, match):
    save_checkpoint(tmp_path / "m.ckpt", cfg, model.params)
    path = tmp_path / "m.ckpt"
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(CheckpointError, match=match):
        load_checkpoint(path)
