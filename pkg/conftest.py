import json

import numpy as np
import pytest

from ml.nn import build_decoder, build_discriminator, build_encoder, build_generator
from utils.image_data import gen_blobs_dataset

IMAGE_SHAPE = (1, 8, 8)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run acceptance-scale training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _isolated_logs(tmp_path, monkeypatch):
    monkeypatch.setenv("GE_LOG_DIR", str(tmp_path / "logs"))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def blobs():
    return gen_blobs_dataset(n=24, size=8, max_blobs=2, seed=0)


@pytest.fixture
def tiny_generator():
    return build_generator(latent_dim=3, conv_layers=2, base_filters=2, output_shape=IMAGE_SHAPE, seed=0).freeze()


@pytest.fixture
def tiny_encoder():
    return build_encoder("GE1", d=2, f=2, m=4, input_shape=IMAGE_SHAPE, seed=1).freeze()


@pytest.fixture
def tiny_decoder():
    return build_decoder(m=4, conv_layers=2, base_filters=2, output_shape=IMAGE_SHAPE, seed=2).freeze()


@pytest.fixture
def tiny_discriminator():
    return build_discriminator(IMAGE_SHAPE, d=2, f=2, m=4, decoder_conv_layers=2, decoder_filters=2, seed=3)


def tiny_config(root) -> dict:
    """A complete run config sized for 8x8 images and a few optimization steps."""
    return {
        "runtime": {"seed": 0, "jobs": 1, "log_dir": str(root / "logs"), "log_every": 0},
        "data": {"n": 24, "size": 8, "max_blobs": 2, "split": [0.8, 0.1, 0.1]},
        "began": {"latent_dim": 3, "steps": 3, "batch_size": 4, "g_conv_layers": 2, "g_filters": 2,
                  "d_depth": 2, "d_filters": 2, "d_bottleneck": 4, "d_decoder_conv_layers": 2,
                  "d_decoder_filters": 2, "sample_every": 0},
        "autoenc": {"variant": "ge1", "d": 2, "f": 2, "m": 4, "decoder_conv_layers": 2, "fake_ratio": 0.5,
                    "n_total": 20, "steps": 3, "batch_size": 4, "learning_rate": 1e-3},
        "solver": {"lambda": 1e-3, "iterations": 3, "restarts": 1, "learning_rate": 0.1},
        "lasso": {"alpha": 0.1, "iterations": 20, "overcomplete": 1},
        "eval": {"data": str(root / "data"), "n_test": 2, "n_fake": 2, "methods": ["lasso", "ga", "ge1"],
                 "budgets": {"lasso": 16, "ga": 4}, "sweep_budgets": [2, 4],
                 "tasks": ["denoise", "deblur", "superres", "inpaint"], "factor": 2, "blur_size": 3,
                 "mask_rect": [1, 1, 3, 3],
                 "checkpoints": {"generator": str(root / "gan" / "generator.gec"),
                                 "discriminator": str(root / "gan" / "discriminator.gec"),
                                 "ge0_encoder": str(root / "ae_ge0" / "encoder.gec"),
                                 "ge1_encoder": str(root / "ae_ge1" / "encoder.gec")},
                 "encoder_dir": str(root / "sweep")},
    }


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "ge_config.json"
    path.write_text(json.dumps(tiny_config(tmp_path)), encoding="utf-8")
    return path
