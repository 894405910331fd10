"""
Boundary-equilibrium GAN training.

The discriminator is an autoencoder; its reconstruction loss L(v) is the
mean absolute pixel error. A proportional controller k_t balances how hard
the discriminator pushes fake reconstructions away:

    D minimizes  L(x) - k_t * L(G(z_D))
    G minimizes  L(G(z_G))
    k_{t+1} = clamp(k_t + lambda_k * (gamma * L(x) - L(G(z_G))), 0, 1)

The generator produced here is the frozen G used by every solver, and the
encoding half of the discriminator is the GE0 encoder.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from ml.exceptions import ConfigError, ContractError, NumericError, ShapeError, TrainingError
from ml.nn import Network, NetworkSpec, forward, init_params
from ml.optim import AdamState, adam_step
from ml.tensor import Tape, Tensor, mean_abs
from utils.charts import save_image_grid
from utils.config import from_section

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["step", "L_real", "L_fake", "k_t", "M"]


@dataclass
class BeganConfig:
    latent_dim: int = 8
    gamma: float = 0.5
    lambda_k: float = 0.001
    k0: float = 0.0
    steps: int = 20000
    batch_size: int = 16
    learning_rate: float = 1e-4
    seed: int = 0
    log_every: int = 100
    sample_every: int = 1000

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.lambda_k <= 0:
            raise ConfigError(f"lambda_k must be > 0, got {self.lambda_k}")
        if not 0.0 <= self.k0 <= 1.0:
            raise ConfigError(f"k0 must lie in [0, 1], got {self.k0}")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError(f"need steps >= 0 and batch_size >= 1 (got {self.steps}, {self.batch_size})")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")

    @classmethod
    def from_dict(cls, section: dict) -> "BeganConfig":
        return from_section(cls, section)


@dataclass
class BeganState:
    k_t: float = 0.0
    history: List[Tuple[int, float, float, float, float]] = field(default_factory=list)

    def record(self, step: int, l_real: float, l_fake: float, m_global: float):
        self.history.append((step, l_real, l_fake, self.k_t, m_global))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.history, columns=HISTORY_COLUMNS)


def sample_latent(n: int, k: int, rng: np.random.Generator) -> Tensor:
    if n < 1 or k < 1:
        raise ContractError(f"latent sample needs n, k >= 1 (got {n}, {k})")
    return Tensor.wrap(rng.standard_normal((n, k)), "sample_latent")


def disc_recon_loss(D: Network, v: Tensor) -> Tensor:
    """Mean absolute error between v and the discriminator's reconstruction of v."""
    return mean_abs(forward(D, v), v)


def update_k(k_t: float, gamma: float, lambda_k: float, l_real: float, l_fake: float) -> float:
    return float(np.clip(k_t + lambda_k * (gamma * l_real - l_fake), 0.0, 1.0))


def convergence_measure(l_real: float, l_fake: float, gamma: float) -> float:
    return l_real + abs(gamma * l_real - l_fake)


def _check_shapes(image_shape, G_spec: NetworkSpec, D_spec: NetworkSpec, config: BeganConfig):
    if tuple(G_spec.input_shape) != (config.latent_dim,):
        raise ShapeError(f"generator input {G_spec.input_shape} != latent_dim {config.latent_dim}")
    if tuple(G_spec.output_shape) != tuple(image_shape):
        raise ShapeError(f"generator output {G_spec.output_shape} != image shape {tuple(image_shape)}")
    if tuple(D_spec.input_shape) != tuple(image_shape) or tuple(D_spec.output_shape) != tuple(image_shape):
        raise ShapeError(f"discriminator must map {tuple(image_shape)} to itself")
    G_spec.layer_shapes()
    D_spec.layer_shapes()


def train_began(dataset, G_spec: NetworkSpec, D_spec: NetworkSpec, config: BeganConfig,
                sample_dir: Optional[str] = None) -> Tuple[Network, Network, pd.DataFrame]:
    """Alternate discriminator and generator ADAM steps; return frozen G, frozen D and the history."""
    if len(dataset) == 0:
        raise ContractError("BEGAN training needs a non-empty dataset")
    _check_shapes(dataset.image_shape, G_spec, D_spec, config)

    rng = np.random.default_rng(config.seed)
    G = init_params(G_spec, config.seed)
    D = init_params(D_spec, config.seed + 1)
    opt_g = AdamState(learning_rate=config.learning_rate)
    opt_d = AdamState(learning_rate=config.learning_rate)
    state = BeganState(k_t=config.k0)
    fixed_z = sample_latent(min(16, config.batch_size * 4), config.latent_dim,
                            np.random.default_rng([config.seed, 1]))

    logger.info(f"Training BEGAN on {len(dataset)} images for {config.steps} steps "
                f"(gamma={config.gamma}, lambda_k={config.lambda_k})")
    for step in range(1, config.steps + 1):
        try:
            x = dataset.batch(rng.integers(0, len(dataset), size=config.batch_size))

            z_d = sample_latent(config.batch_size, config.latent_dim, rng)
            fake = G(z_d)
            with Tape() as tape:
                d_params = tape.watch_all(D.params)
                l_real = disc_recon_loss(D, x)
                loss_d = l_real - state.k_t * disc_recon_loss(D, fake)
                grads = tape.backward(loss_d)
            new_d, opt_d = adam_step(opt_d, d_params, grads.for_params(d_params))
            D.update(new_d)

            z_g = sample_latent(config.batch_size, config.latent_dim, rng)
            with Tape() as tape:
                g_params = tape.watch_all(G.params)
                l_fake = disc_recon_loss(D, G(z_g))
                grads = tape.backward(l_fake)
            new_g, opt_g = adam_step(opt_g, g_params, grads.for_params(g_params))
            G.update(new_g)
        except NumericError as e:
            raise TrainingError(f"BEGAN diverged: {e}", step=step) from e

        lr_val, lf_val = l_real.item(), l_fake.item()
        state.k_t = update_k(state.k_t, config.gamma, config.lambda_k, lr_val, lf_val)
        m_global = convergence_measure(lr_val, lf_val, config.gamma)
        state.record(step, lr_val, lf_val, m_global)

        if config.log_every and step % config.log_every == 0:
            logger.info(f"step {step}: L_real={lr_val:.4f} L_fake={lf_val:.4f} "
                        f"k_t={state.k_t:.5f} M={m_global:.4f}")
        if sample_dir and config.sample_every and step % config.sample_every == 0:
            save_image_grid(G(fixed_z).data, os.path.join(sample_dir, f"step_{step:06d}.png"))

    history = state.to_frame()
    if sample_dir:
        save_image_grid(G(fixed_z).data, os.path.join(sample_dir, "final.png"))
    return G.freeze(), D.freeze(), history


def extract_encoder(D: Network) -> Network:
    """Frozen encoding half of an autoencoder discriminator (the GE0 encoder)."""
    spec = D.spec
    if spec.label != "discriminator" or not spec.encoder_layers:
        raise ContractError(f"cannot extract an encoder from a '{spec.label}' network")
    if tuple(spec.input_shape) != tuple(spec.output_shape):
        raise ContractError("discriminator is not of autoencoder shape")
    encoder = D.sub_network(0, spec.encoder_layers, "GE0")
    if len(encoder.spec.output_shape) != 1:
        raise ContractError(f"encoding half ends in {encoder.spec.output_shape}, expected a vector")
    return encoder
