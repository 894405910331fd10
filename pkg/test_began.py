"""
Tests for BEGAN training and encoder extraction.
"""

import os

import numpy as np
import pytest

from ml.began import (HISTORY_COLUMNS, BeganConfig, convergence_measure, disc_recon_loss, extract_encoder,
                      sample_latent, train_began, update_k)
from ml.exceptions import ConfigError, ContractError, ShapeError
from ml.nn import Network, discriminator_spec, forward, generator_spec
from ml.tensor import Tensor

IMAGE_SHAPE = (1, 8, 8)


def _specs(latent_dim=3):
    return (generator_spec(latent_dim, 2, 2, IMAGE_SHAPE),
            discriminator_spec(IMAGE_SHAPE, 2, 2, 4, 2, 2))


def _short_config(**overrides):
    values = dict(latent_dim=3, steps=5, batch_size=4, learning_rate=1e-3, log_every=0, sample_every=0)
    values.update(overrides)
    return BeganConfig(**values)


def test_update_k_values():
    assert update_k(0.0, 0.5, 0.001, 1.0, 0.0) == pytest.approx(0.0005)
    assert update_k(0.3, 0.5, 0.001, 1.0, 0.5) == pytest.approx(0.3)
    assert update_k(0.0001, 0.5, 0.001, 0.0, 1.0) == 0.0
    assert update_k(0.9999, 0.5, 1.0, 4.0, 0.0) == 1.0


def test_convergence_measure():
    assert convergence_measure(1.0, 0.5, 0.5) == pytest.approx(1.0)
    assert convergence_measure(0.0, 0.0, 0.5) == 0.0
    assert convergence_measure(1.0, 0.0, 0.5) == pytest.approx(1.5)


def test_sample_latent_is_seeded():
    a = sample_latent(4, 3, np.random.default_rng(5))
    b = sample_latent(4, 3, np.random.default_rng(5))
    assert a.shape == (4, 3)
    np.testing.assert_array_equal(a.data, b.data)
    big = sample_latent(20000, 5, np.random.default_rng(0)).data
    assert abs(big.mean()) < 0.02
    assert abs(big.std() - 1.0) < 0.02
    with pytest.raises(ContractError):
        sample_latent(0, 3, np.random.default_rng(0))


def test_recon_loss_of_zero_discriminator():
    spec = discriminator_spec(IMAGE_SHAPE, 2, 2, 4, 2, 2)
    D = Network(spec, {p.name: Tensor(np.zeros(p.shape)) for p in spec.params()})
    v = Tensor(np.full(IMAGE_SHAPE, 0.5))
    assert disc_recon_loss(D, v).item() == pytest.approx(0.5)


def test_recon_loss_matches_direct_mean(tiny_discriminator, rng):
    v = Tensor(rng.uniform(-1, 1, size=(2,) + IMAGE_SHAPE))
    recon = forward(tiny_discriminator, v).data
    expected = np.mean(np.abs(recon - v.data))
    assert disc_recon_loss(tiny_discriminator, v).item() == pytest.approx(expected, rel=1e-12)


def test_config_validation():
    with pytest.raises(ConfigError):
        BeganConfig(gamma=0.0)
    with pytest.raises(ConfigError):
        BeganConfig(k0=1.5)
    with pytest.raises(ConfigError):
        BeganConfig(steps=-1)
    cfg = BeganConfig.from_dict({"gamma": 0.7, "g_filters": 16, "seed": None})
    assert cfg.gamma == 0.7
    assert cfg.seed == 0


def test_zero_steps_returns_initialized_networks(blobs):
    G_spec, D_spec = _specs()
    G, D, history = train_began(blobs, G_spec, D_spec, _short_config(steps=0))
    assert G.frozen and D.frozen
    assert list(history.columns) == HISTORY_COLUMNS
    assert len(history) == 0


def test_short_training_run(blobs, tmp_path):
    G_spec, D_spec = _specs()
    G, D, history = train_began(blobs, G_spec, D_spec, _short_config(sample_every=2), str(tmp_path))
    assert len(history) == 5
    assert history["step"].tolist() == [1, 2, 3, 4, 5]
    assert history["k_t"].between(0.0, 1.0).all()
    assert np.isfinite(history[["L_real", "L_fake", "M"]].to_numpy()).all()
    assert sorted(os.listdir(tmp_path)) == ["final.png", "step_000002.png", "step_000004.png"]

    z = sample_latent(3, 3, np.random.default_rng(1))
    assert np.all(np.abs(G(z).data) <= 1.0)


def test_training_is_reproducible(blobs):
    G_spec, D_spec = _specs()
    G1, D1, h1 = train_began(blobs, G_spec, D_spec, _short_config(seed=3))
    G2, D2, h2 = train_began(blobs, G_spec, D_spec, _short_config(seed=3))
    assert G1.parameter_hash() == G2.parameter_hash()
    assert D1.parameter_hash() == D2.parameter_hash()
    assert h1.equals(h2)


def test_training_rejects_mismatched_shapes(blobs):
    G_spec, D_spec = _specs(latent_dim=5)
    with pytest.raises(ShapeError):
        train_began(blobs, G_spec, D_spec, _short_config())


def test_extract_encoder(tiny_discriminator, rng):
    encoder = extract_encoder(tiny_discriminator.freeze())
    assert encoder.frozen
    assert encoder.spec.label == "GE0"
    assert encoder.spec.output_shape == (4,)

    spec = tiny_discriminator.spec
    decoder = tiny_discriminator.sub_network(spec.encoder_layers, len(spec.layers), "decoder")
    x = Tensor(rng.uniform(-1, 1, size=(2,) + IMAGE_SHAPE))
    np.testing.assert_array_equal(decoder(encoder(x)).data, tiny_discriminator(x).data)


def test_extract_encoder_rejects_generator(tiny_generator):
    with pytest.raises(ContractError):
        extract_encoder(tiny_generator)
