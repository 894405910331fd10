"""
Convolutional autoencoder training on a real + generated image mix.

The generator is only sampled, never updated: the mixed training set is built
once per run and the encoder/decoder pair is trained on it with ADAM on the
pixel mean squared error.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from ml.began import sample_latent
from ml.exceptions import ConfigError, ContractError, NumericError, ShapeError, TrainingError
from ml.nn import Network, NetworkSpec, decoder_spec, encoder_spec, forward, init_params
from ml.optim import AdamState, adam_step
from ml.tensor import Tape, Tensor, mse
from utils.config import from_section
from utils.image_data import ImageSet

logger = logging.getLogger(__name__)


@dataclass
class AeConfig:
    fake_ratio: float = 0.5
    n_total: int = 2000
    steps: int = 10000
    batch_size: int = 16
    learning_rate: float = 1e-4
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if not 0.0 <= self.fake_ratio <= 1.0:
            raise ConfigError(f"fake_ratio must lie in [0, 1], got {self.fake_ratio}")
        if self.n_total < 1 or self.steps < 0 or self.batch_size < 1:
            raise ConfigError("need n_total >= 1, steps >= 0 and batch_size >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")

    @classmethod
    def from_dict(cls, section: dict) -> "AeConfig":
        return from_section(cls, section)


def augment_dataset(real: ImageSet, G: Network, fake_ratio: float, n_total: int,
                    rng: np.random.Generator) -> ImageSet:
    """floor(fake_ratio * n_total) generator samples plus real draws, shuffled by ``rng``."""
    if not G.frozen:
        raise ContractError("augmentation needs a frozen generator")
    if not 0.0 <= fake_ratio <= 1.0:
        raise ConfigError(f"fake_ratio must lie in [0, 1], got {fake_ratio}")
    n_fake = int(np.floor(fake_ratio * n_total))
    n_real = n_total - n_fake
    if n_real and len(real) == 0:
        raise ContractError("augmentation needs real images")
    if n_fake and tuple(G.spec.output_shape) != real.image_shape:
        raise ShapeError(f"generator output {G.spec.output_shape} != image shape {real.image_shape}")

    parts = []
    if n_real:
        parts.append(real.images[rng.integers(0, len(real), size=n_real)])
    if n_fake:
        z = sample_latent(n_fake, G.spec.input_shape[0], rng)
        parts.append(forward(G, z).data)
    images = np.concatenate(parts, axis=0)[rng.permutation(n_total)]
    meta = dict(real.metadata, augmented=True, n=n_total, n_fake=n_fake, n_real=n_real,
                fake_ratio=fake_ratio, generator_hash=G.parameter_hash())
    logger.info(f"Augmented training set: {n_real} real + {n_fake} generated images")
    return ImageSet(images, meta)


def train_ae(images: ImageSet, enc_spec: NetworkSpec, dec_spec: NetworkSpec,
             config: AeConfig) -> Tuple[Network, Network, pd.DataFrame]:
    """Jointly fit EN and DE on mean squared reconstruction error; returns frozen nets."""
    if len(images) == 0:
        raise ContractError("autoencoder training needs images")
    if tuple(enc_spec.input_shape) != images.image_shape or tuple(dec_spec.output_shape) != images.image_shape:
        raise ShapeError(f"encoder/decoder do not map {images.image_shape} back to itself")
    if tuple(enc_spec.output_shape) != tuple(dec_spec.input_shape):
        raise ShapeError(f"encoder output {enc_spec.output_shape} != decoder input {dec_spec.input_shape}")

    rng = np.random.default_rng(config.seed)
    EN = init_params(enc_spec, config.seed)
    DE = init_params(dec_spec, config.seed + 1)
    opt = AdamState(learning_rate=config.learning_rate)

    rows = []
    logger.info(f"Training {enc_spec.label} autoencoder (m={enc_spec.output_shape[0]}) "
                f"on {len(images)} images for {config.steps} steps")
    for step in range(1, config.steps + 1):
        x = images.batch(rng.integers(0, len(images), size=config.batch_size))
        try:
            with Tape() as tape:
                en_params = tape.watch_all(EN.params)
                de_params = tape.watch_all(DE.params)
                loss = mse(forward(DE, forward(EN, x)), x)
                grads = tape.backward(loss)
            params = {**{f"en/{k}": v for k, v in en_params.items()},
                      **{f"de/{k}": v for k, v in de_params.items()}}
            new, opt = adam_step(opt, params, {key: grads[t] for key, t in params.items()})
        except NumericError as e:
            raise TrainingError(f"autoencoder diverged: {e}", step=step) from e
        EN.update({k[3:]: v for k, v in new.items() if k.startswith("en/")})
        DE.update({k[3:]: v for k, v in new.items() if k.startswith("de/")})

        rows.append({"step": step, "loss": loss.item()})
        if config.log_every and step % config.log_every == 0:
            logger.info(f"step {step}: reconstruction mse={loss.item():.5f}")

    history = pd.DataFrame(rows, columns=["step", "loss"])
    if len(history) > 1 and history["loss"].iloc[-1] >= history["loss"].iloc[0]:
        logger.warning("autoencoder loss did not decrease over training")
    return EN.freeze(), DE.freeze(), history


def encode(EN: Network, x: Tensor) -> Tensor:
    return forward(EN, x)


def decode(DE: Network, m: Tensor) -> Tensor:
    return forward(DE, m)


def default_decoder_filters(variant: str, d: int, f: int) -> int:
    """Half the encoder's last conv layer width, keeping the decoder weaker than the encoder."""
    last = d * f if variant == "GE1" else -(-d // 3) * f
    return max(1, last // 2)


def fit_ge1_encoder(real: ImageSet, G: Optional[Network], m: int, section: Dict,
                    seed: int) -> Tuple[Network, Network, pd.DataFrame, Dict]:
    """Augment ``real`` with generator samples and train a GE1 encoder/decoder of width m.

    ``section`` is the autoenc config section (d, f, decoder sizes and AeConfig fields).
    Returns EN, DE, the loss history and the augmentation metadata.
    """
    config = AeConfig.from_dict({**section, "seed": seed})
    d, f = int(section.get("d", 4)), int(section.get("f", 8))
    filters = section.get("decoder_filters") or default_decoder_filters("GE1", d, f)
    decoder_layers = int(section.get("decoder_conv_layers", 2))
    if decoder_layers > d:
        raise ConfigError(f"decoder_conv_layers={decoder_layers} exceeds the encoder depth d={d}")
    shape = real.image_shape

    if config.fake_ratio > 0 and G is None:
        raise ConfigError("fake_ratio > 0 needs a generator checkpoint")
    if G is None:
        mixed = real
    else:
        mixed = augment_dataset(real, G, config.fake_ratio, config.n_total, np.random.default_rng([seed, 2]))
    enc = encoder_spec("GE1", d, f, m, shape)
    dec = decoder_spec(m, decoder_layers, int(filters), shape)
    EN, DE, history = train_ae(mixed, enc, dec, config)
    return EN, DE, history, {k: v for k, v in mixed.metadata.items() if k != "split"}
