"""
Sparse-recovery baseline over an overcomplete discrete cosine dictionary.

    beta* = argmin_beta ||A beta - b||^2 + alpha ||beta||_1,   x_hat = Psi beta*

solved with ISTA (or FISTA). The step size is 1 / (2 ||A||^2) with the
spectral norm estimated by power iteration.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from ml.exceptions import ConfigError, ContractError, DimensionError
from ml.solver import gaussian_sensing_matrix
from ml.tensor import Tensor
from utils.config import from_section

logger = logging.getLogger(__name__)

ArrayLike = Union[Tensor, np.ndarray]
RIDGE = 1e-10


def _array(x: ArrayLike) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


@dataclass
class Dictionary:
    """Unit-norm cosine atoms as the columns of psi [n, p]."""

    psi: np.ndarray
    height: int
    width: int
    channels: int = 1
    overcompleteness: int = 1

    @property
    def n(self) -> int:
        return self.psi.shape[0]

    @property
    def p(self) -> int:
        return self.psi.shape[1]

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return (self.channels, self.height, self.width)


def _cosine_atoms_1d(n: int, overcompleteness: int) -> np.ndarray:
    p = n * overcompleteness
    i = np.arange(n)[:, None]
    k = np.arange(p)[None, :]
    atoms = np.cos(np.pi * k * (i + 0.5) / p)
    return atoms / np.linalg.norm(atoms, axis=0, keepdims=True)


def build_dct_dictionary(height: int, width: int, overcompleteness: int = 2, channels: int = 1) -> Dictionary:
    """Separable 2-D cosine atoms at ``overcompleteness``x frequency oversampling per axis."""
    if height < 1 or width < 1 or channels < 1:
        raise ContractError(f"dictionary needs a positive image size, got {channels}x{height}x{width}")
    if overcompleteness < 1:
        raise ContractError(f"overcompleteness must be >= 1, got {overcompleteness}")
    psi = np.kron(_cosine_atoms_1d(height, overcompleteness), _cosine_atoms_1d(width, overcompleteness))
    if channels > 1:
        psi = np.kron(np.eye(channels), psi)
    psi.setflags(write=False)
    return Dictionary(psi, height, width, channels, overcompleteness)


def soft_threshold(v: ArrayLike, tau: float) -> Tensor:
    if tau < 0:
        raise ContractError(f"threshold must be >= 0, got {tau}")
    x = _array(v)
    return Tensor.wrap(np.sign(x) * np.maximum(np.abs(x) - tau, 0.0), "soft_threshold")


@dataclass
class LassoConfig:
    alpha: float = 0.1
    iterations: int = 1000
    step_size: Optional[float] = None
    power_iterations: int = 50
    fista: bool = False
    tol: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.iterations < 1 or self.power_iterations < 1:
            raise ConfigError("iterations and power_iterations must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigError(f"step size must be > 0, got {self.step_size}")

    @classmethod
    def from_dict(cls, section: dict) -> "LassoConfig":
        return from_section(cls, section)


def spectral_norm_sq(A: np.ndarray, iterations: int = 50) -> float:
    """||A||_2^2 by power iteration on A^T A from a fixed start vector."""
    v = np.ones(A.shape[1]) / np.sqrt(A.shape[1])
    for _ in range(iterations):
        w = A.T @ (A @ v)
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
    return float(np.linalg.norm(A @ v) ** 2)


def lasso_objective(A: np.ndarray, b: np.ndarray, beta: np.ndarray, alpha: float) -> float:
    r = A @ beta - b
    return float(r @ r + alpha * np.abs(beta).sum())


def lasso_solve(A: ArrayLike, b: ArrayLike, dictionary: Dictionary,
                config: LassoConfig) -> Tuple[Tensor, Tensor]:
    """ISTA/FISTA on the composed m x p system; returns (beta*, Psi beta* as an image).

    ``A`` may also be given in pixel space (m x n); it is then composed with Psi.
    """
    A = _array(A)
    b = _array(b).reshape(-1)
    if A.ndim != 2 or A.shape[0] != b.size:
        raise DimensionError(f"sensing matrix {A.shape} does not match {b.size} measurements")
    if A.shape[1] == dictionary.n and A.shape[1] != dictionary.p:
        A = A @ dictionary.psi
    if A.shape[1] != dictionary.p:
        raise DimensionError(f"sensing matrix has {A.shape[1]} columns, dictionary has {dictionary.p} atoms")

    if config.step_size is not None:
        eta = config.step_size
    else:
        lipschitz = 2.0 * spectral_norm_sq(A, config.power_iterations)
        # power iteration approaches the norm from below
        eta = 0.99 / lipschitz if lipschitz > 0 else 1.0
    threshold = eta * config.alpha

    beta = np.zeros(A.shape[1])
    momentum, t = beta.copy(), 1.0
    objective = lasso_objective(A, b, beta, config.alpha)
    for it in range(1, config.iterations + 1):
        point = momentum if config.fista else beta
        grad = 2.0 * A.T @ (A @ point - b)
        nxt = np.sign(point - eta * grad) * np.maximum(np.abs(point - eta * grad) - threshold, 0.0)
        if config.fista:
            t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
            momentum = nxt + ((t - 1.0) / t_next) * (nxt - beta)
            t = t_next
        else:
            value = lasso_objective(A, b, nxt, config.alpha)
            if value > objective + 1e-12 * (1.0 + abs(objective)):
                raise ConfigError(f"lasso objective increased at iteration {it} "
                                  f"({objective:.6g} -> {value:.6g}); step size {eta:.3g} is too large")
            objective = value
        delta = np.max(np.abs(nxt - beta)) if nxt.size else 0.0
        beta = nxt
        if config.tol and delta < config.tol:
            break

    logger.info(f"lasso: {it} iterations, objective {lasso_objective(A, b, beta, config.alpha):.6g}, "
                f"{int(np.count_nonzero(beta))}/{beta.size} active atoms")
    x_hat = (dictionary.psi @ beta).reshape(dictionary.image_shape)
    return Tensor.wrap(beta, "lasso_solve"), Tensor.wrap(x_hat, "lasso_solve")


def pseudo_inverse_apply(dictionary: Dictionary, x: ArrayLike) -> Tensor:
    """Minimum-norm coefficients c with Psi c = x (ridge-regularized normal equations)."""
    vec = _array(x).reshape(-1)
    if vec.size != dictionary.n:
        raise DimensionError(f"image has {vec.size} pixels, dictionary spans {dictionary.n}")
    psi = dictionary.psi
    gram = psi @ psi.T + RIDGE * np.eye(dictionary.n)
    return Tensor.wrap(psi.T @ np.linalg.solve(gram, vec), "pseudo_inverse_apply")


def lasso_reconstruct(x: ArrayLike, m: int, dictionary: Dictionary, config: LassoConfig,
                      seed: int) -> Tuple[Tensor, Tensor]:
    """Measure b = A Psi^+ x with a Gaussian m x p matrix and recover x_hat; returns (x_hat, b)."""
    coefficients = pseudo_inverse_apply(dictionary, x)
    A = gaussian_sensing_matrix(m, dictionary.p, seed)
    b = Tensor.wrap(A.data @ coefficients.data, "lasso_measure")
    _, x_hat = lasso_solve(A, b, dictionary, config)
    return x_hat, b
