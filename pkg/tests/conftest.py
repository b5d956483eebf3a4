import numpy as np
import pytest

from switchvae.data import FAMILIES, generate_shape, render_views, sample_params
from switchvae.model import ModelConfig, SwitchVAE
from switchvae.trainer import TrainingData


def tiny_config(**kw) -> ModelConfig:
    base = dict(latent_dim=8, resolution=8, views=2, view_height=8, view_width=8,
                image_channels=(4, 4, 4), view_feature=8, gru_hidden=8, feature_dim=16)
    base.update(kw)
    return ModelConfig(**base)


def synthetic_data(n: int, resolution: int, views: int = 2, seed: int = 0) -> TrainingData:
    """``n`` generated shapes cycling through the families, with rendered views."""
    poses = [(360.0 * k / views, 30.0) for k in range(views)]
    vox, imgs, labels = [], [], []
    for i in range(n):
        fam = FAMILIES[i % len(FAMILIES)]
        grid = generate_shape(fam, sample_params(fam, np.random.default_rng([seed, i])), resolution)
        vox.append(grid)
        imgs.append(render_views(grid, poses, resolution, resolution).images.transpose(0, 3, 1, 2))
        labels.append(i % len(FAMILIES))
    return TrainingData([f"s{i:03d}" for i in range(n)], np.array(labels),
                        np.array(vox, dtype=np.float64), np.array(imgs))


@pytest.fixture
def cfg():
    return tiny_config()


@pytest.fixture
def model(cfg):
    return SwitchVAE.initialize(cfg, np.random.default_rng(0))


@pytest.fixture
def tiny_data():
    return synthetic_data(4, 8)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
