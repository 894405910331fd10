"""
Latent-space solvers.

GE:  z* = argmin_z  mse(EN(S(G(z))), m) + lam * ||z||^2
GA:  z* = argmin_z  mse(A vec(G(z)), y) + lam * ||z||^2

Both run ADAM from several seeded random starts. Restart r draws its initial
latent from default_rng([seed, r]) and owns its tape and optimizer state, so
results do not depend on how restarts are scheduled across workers. Each
restart's candidate is its last iterate; the restart with the smallest final
objective wins.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from joblib import Parallel, delayed

from ml.exceptions import ConfigError, ContractError, DimensionError, NumericError, SolverError
from ml.nn import Network, forward
from ml.optim import AdamState, adam_step
from ml.tensor import Tape, Tensor, matmul, mse, reshape, sq_l2
from utils.config import from_section
from utils.imaging_ops import AdjustmentOp

logger = logging.getLogger(__name__)


@dataclass
class SolveConfig:
    lam: float = 1e-3
    iterations: int = 500
    restarts: int = 2
    learning_rate: float = 0.1
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.iterations < 1 or self.restarts < 1:
            raise ConfigError(f"need iterations >= 1 and restarts >= 1 (got {self.iterations}, {self.restarts})")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.jobs == 0:
            raise ConfigError("jobs must be non-zero")

    @classmethod
    def from_dict(cls, section: dict) -> "SolveConfig":
        return from_section(cls, section, aliases={"lambda": "lam"})

    def to_dict(self) -> Dict:
        return {"lambda": self.lam, "iterations": self.iterations, "restarts": self.restarts,
                "learning_rate": self.learning_rate, "seed": self.seed}


@dataclass
class SolveResult:
    z_star: Tensor
    x_hat: Tensor
    objective_final: List[float]
    objective_trace: List[List[float]]
    running_min: List[List[float]]
    winning_restart: int
    wall_time: float = field(default=0.0, compare=False)

    @property
    def objective(self) -> float:
        return self.objective_final[self.winning_restart]

    def to_record(self) -> Dict:
        """JSON-ready summary; wall time is left to the run record."""
        return {
            "winning_restart": self.winning_restart,
            "objective": self.objective,
            "objective_final": list(self.objective_final),
            "running_min": [list(r) for r in self.running_min],
            "z_star": self.z_star.data.tolist(),
        }


def _require_frozen(*nets: Network):
    for net in nets:
        if not net.frozen:
            raise ContractError(f"{net.spec.label} network must be frozen before solving")


def ge_objective(z: Tensor, EN: Network, G: Network, S: AdjustmentOp, m: Tensor, lam: float) -> Tensor:
    s = S(forward(G, z))
    if s.shape[-3:] != tuple(EN.spec.input_shape):
        raise ContractError(f"S(G(z)) has shape {s.shape}, encoder expects {tuple(EN.spec.input_shape)}")
    return mse(forward(EN, s), m) + lam * sq_l2(z)


def ga_objective(z: Tensor, A: Tensor, G: Network, y: Tensor, lam: float) -> Tensor:
    x = forward(G, z)
    n = x.size
    if A.shape[1] != n:
        raise DimensionError(f"sensing matrix has {A.shape[1]} columns, image has {n} pixels")
    Ax = reshape(matmul(A, reshape(x, (n, 1))), (A.shape[0],))
    return mse(Ax, y) + lam * sq_l2(z)


def sense(A: Tensor, x: Tensor) -> Tensor:
    """Gaussian measurements y = A vec(x)."""
    if A.shape[1] != x.size:
        raise DimensionError(f"sensing matrix has {A.shape[1]} columns, image has {x.size} pixels")
    return Tensor.wrap(A.data @ x.data.reshape(-1), "sense")


def gaussian_sensing_matrix(m: int, n: int, seed: int) -> Tensor:
    """i.i.d. N(0, 1/m) entries."""
    if m < 1 or n < 1:
        raise ContractError(f"sensing matrix needs m, n >= 1 (got {m}, {n})")
    rng = np.random.default_rng(seed)
    return Tensor.wrap(rng.normal(0.0, 1.0 / np.sqrt(m), size=(m, n)), "gaussian_sensing_matrix")


def _run_restart(objective: Callable[[Tensor], Tensor], latent_dim: int, config: SolveConfig,
                 restart: int, z_init: Optional[Tensor]):
    rng = np.random.default_rng([config.seed, restart])
    z = z_init if z_init is not None else Tensor.wrap(rng.standard_normal(latent_dim))
    opt = AdamState(learning_rate=config.learning_rate)
    trace = []
    step = 0
    try:
        for step in range(1, config.iterations + 1):
            with Tape() as tape:
                tape.watch(z)
                value = objective(z)
                grads = tape.backward(value)
            trace.append(value.item())
            new, opt = adam_step(opt, {"z": z}, {"z": grads[z]})
            z = new["z"]
            if step % 100 == 0:
                logger.debug(f"restart {restart} step {step}: objective={trace[-1]:.6g}")
        final = objective(z).item()
    except NumericError as e:
        raise SolverError(f"non-finite objective: {e}", restart=restart, step=step) from e
    return z, final, trace


def _solve(objective: Callable[[Tensor], Tensor], G: Network, config: SolveConfig,
           z_init: Optional[Tensor], label: str) -> SolveResult:
    latent_dim = G.spec.input_shape[0]
    if z_init is not None and z_init.shape != (latent_dim,):
        raise DimensionError(f"z_init has shape {z_init.shape}, latent is ({latent_dim},)")

    start = time.perf_counter()
    runs = Parallel(n_jobs=config.jobs, prefer="threads")(
        delayed(_run_restart)(objective, latent_dim, config, r, z_init if r == 0 else None)
        for r in range(config.restarts)
    )
    finals = [final for _, final, _ in runs]
    winner = int(np.argmin(finals))
    z_star = runs[winner][0]
    traces = [trace for _, _, trace in runs]
    for r, final in enumerate(finals):
        logger.info(f"{label} restart {r}: final objective {final:.6g}")
    logger.info(f"{label} winner: restart {winner} ({finals[winner]:.6g})")

    return SolveResult(
        z_star=z_star,
        x_hat=forward(G, z_star),
        objective_final=finals,
        objective_trace=traces,
        running_min=[np.minimum.accumulate(t).tolist() for t in traces],
        winning_restart=winner,
        wall_time=time.perf_counter() - start,
    )


def solve_ge(m: Tensor, EN: Network, G: Network, S: AdjustmentOp, config: SolveConfig,
             z_init: Optional[Tensor] = None) -> SolveResult:
    """Recover x_hat = G(z*) from encoder measurements m of S(x)."""
    _require_frozen(EN, G)
    adjusted = S.output_shape(G.spec.output_shape)
    if tuple(adjusted) != tuple(EN.spec.input_shape):
        raise ContractError(f"S maps the generator output to {tuple(adjusted)}, "
                            f"encoder expects {tuple(EN.spec.input_shape)}")
    if m.shape != tuple(EN.spec.output_shape):
        raise DimensionError(f"measurement has shape {m.shape}, encoder produces {tuple(EN.spec.output_shape)}")
    return _solve(lambda z: ge_objective(z, EN, G, S, m, config.lam), G, config, z_init, "GE")


def solve_ga(y: Tensor, A: Tensor, G: Network, config: SolveConfig,
             z_init: Optional[Tensor] = None) -> SolveResult:
    """Recover x_hat = G(z*) from Gaussian measurements y = A vec(x)."""
    _require_frozen(G)
    n = int(np.prod(G.spec.output_shape))
    if A.ndim != 2 or A.shape[1] != n:
        raise DimensionError(f"sensing matrix {A.shape} does not match {n} image pixels")
    if y.shape != (A.shape[0],):
        raise DimensionError(f"measurement has shape {y.shape}, expected ({A.shape[0]},)")
    return _solve(lambda z: ga_objective(z, A, G, y, config.lam), G, config, z_init, "GA")
