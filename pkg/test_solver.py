"""
Tests for the GE and GA latent-space solvers.
"""

import numpy as np
import pytest

from ml.exceptions import ConfigError, ContractError, DimensionError, SolverError
from ml.nn import build_generator, forward
from ml.optim import AdamState, adam_step
from ml.solver import (SolveConfig, ga_objective, gaussian_sensing_matrix, ge_objective, sense, solve_ga,
                       solve_ge)
from ml.tensor import Tape, Tensor
from utils.imaging_ops import AdjustmentOp, rect_mask

IDENTITY = AdjustmentOp("identity")


def _z0(seed=11):
    return Tensor(np.random.default_rng(seed).normal(size=3))


def test_ge_objective_is_zero_at_exact_fit(tiny_encoder, tiny_generator):
    z0 = _z0()
    m = forward(tiny_encoder, forward(tiny_generator, z0))
    assert ge_objective(z0, tiny_encoder, tiny_generator, IDENTITY, m, 0.0).item() == 0.0

    zero = Tensor(np.zeros(3))
    m_zero = forward(tiny_encoder, forward(tiny_generator, zero))
    assert ge_objective(zero, tiny_encoder, tiny_generator, IDENTITY, m_zero, 0.5).item() == 0.0


def test_ge_objective_composition(tiny_encoder, tiny_generator, rng):
    z = Tensor(rng.normal(size=3))
    m = Tensor(rng.normal(size=4))
    mask = rect_mask((1, 8, 8), (2, 2, 3, 3))
    S = AdjustmentOp("mask", mask=mask)
    image = forward(tiny_generator, z).data * mask
    code = forward(tiny_encoder, Tensor(image)).data
    expected = np.mean((code - m.data) ** 2) + 0.01 * np.sum(z.data ** 2)
    value = ge_objective(z, tiny_encoder, tiny_generator, S, m, 0.01).item()
    assert value == pytest.approx(expected, rel=1e-12)


def test_ge_objective_grows_with_lambda(tiny_encoder, tiny_generator, rng):
    z = Tensor(rng.normal(size=3))
    m = Tensor(rng.normal(size=4))
    assert np.any(z.data != 0.0)
    values = [ge_objective(z, tiny_encoder, tiny_generator, IDENTITY, m, lam).item() for lam in (0.0, 0.1, 1.0)]
    assert values[0] < values[1] < values[2]
    assert values[2] - values[1] == pytest.approx(0.9 * np.sum(z.data ** 2), rel=1e-9)


def test_ga_objective_and_sense(tiny_generator):
    z0 = _z0()
    A = gaussian_sensing_matrix(10, 64, seed=0)
    y = sense(A, forward(tiny_generator, z0))
    assert y.shape == (10,)
    assert ga_objective(z0, A, tiny_generator, y, 0.0).item() == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(DimensionError):
        sense(gaussian_sensing_matrix(10, 63, seed=0), forward(tiny_generator, z0))


def test_gaussian_sensing_matrix():
    A = gaussian_sensing_matrix(10, 5000, seed=4)
    assert A.shape == (10, 5000)
    np.testing.assert_array_equal(A.data, gaussian_sensing_matrix(10, 5000, seed=4).data)
    assert not np.array_equal(A.data, gaussian_sensing_matrix(10, 5000, seed=5).data)
    row_norms = np.sum(A.data ** 2, axis=1)
    np.testing.assert_allclose(row_norms, 500.0, rtol=0.1)
    with pytest.raises(ContractError):
        gaussian_sensing_matrix(0, 5, seed=0)


def test_single_iteration_is_one_adam_step(tiny_encoder, tiny_generator, rng):
    m = Tensor(rng.normal(size=4))
    z_init = _z0(3)
    config = SolveConfig(lam=0.01, iterations=1, restarts=1, learning_rate=0.1)
    result = solve_ge(m, tiny_encoder, tiny_generator, IDENTITY, config, z_init=z_init)
    assert len(result.objective_trace) == 1
    assert len(result.objective_trace[0]) == 1

    with Tape() as tape:
        tape.watch(z_init)
        grads = tape.backward(ge_objective(z_init, tiny_encoder, tiny_generator, IDENTITY, m, 0.01))
    expected, _ = adam_step(AdamState(learning_rate=0.1), {"z": z_init}, {"z": grads[z_init]})
    np.testing.assert_allclose(result.z_star.data, expected["z"].data, rtol=1e-12)


def test_result_is_the_best_restart(tiny_encoder, tiny_generator, rng):
    m = Tensor(rng.normal(size=4))
    config = SolveConfig(iterations=20, restarts=3, seed=2)
    result = solve_ge(m, tiny_encoder, tiny_generator, IDENTITY, config)
    assert len(result.objective_final) == 3
    assert result.objective == min(result.objective_final)
    assert result.objective_final[result.winning_restart] == result.objective
    np.testing.assert_array_equal(result.x_hat.data, forward(tiny_generator, result.z_star).data)
    for trace, running in zip(result.objective_trace, result.running_min):
        assert len(trace) == 20
        assert all(b <= a for a, b in zip(running, running[1:]))
        assert running[-1] == min(trace)


def test_solver_improves_on_its_starting_points(tiny_encoder, tiny_generator):
    m = forward(tiny_encoder, forward(tiny_generator, _z0()))
    config = SolveConfig(lam=1e-4, iterations=300, restarts=2, learning_rate=0.05)
    result = solve_ge(m, tiny_encoder, tiny_generator, IDENTITY, config)
    assert result.objective < min(trace[0] for trace in result.objective_trace)


def test_solves_are_deterministic_across_jobs(tiny_encoder, tiny_generator, rng):
    m = Tensor(rng.normal(size=4))
    serial = solve_ge(m, tiny_encoder, tiny_generator, IDENTITY, SolveConfig(iterations=15, restarts=3, jobs=1))
    threaded = solve_ge(m, tiny_encoder, tiny_generator, IDENTITY, SolveConfig(iterations=15, restarts=3, jobs=3))
    np.testing.assert_array_equal(serial.z_star.data, threaded.z_star.data)
    assert serial.objective_final == threaded.objective_final
    assert serial.to_record() == threaded.to_record()


def test_solve_ga(tiny_generator):
    z0 = _z0()
    A = gaussian_sensing_matrix(12, 64, seed=1)
    y = sense(A, forward(tiny_generator, z0))
    result = solve_ga(y, A, tiny_generator, SolveConfig(lam=0.0, iterations=2, restarts=1), z_init=z0)
    assert result.objective_trace[0][0] == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(DimensionError):
        solve_ga(Tensor(np.zeros(5)), A, tiny_generator, SolveConfig(iterations=1))


def test_solver_contracts(tiny_encoder, tiny_generator):
    m = Tensor(np.zeros(4))
    unfrozen = build_generator(3, 2, 2, (1, 8, 8), seed=0)
    with pytest.raises(ContractError):
        solve_ge(m, tiny_encoder, unfrozen, IDENTITY, SolveConfig(iterations=1))
    with pytest.raises(ContractError):
        solve_ge(m, tiny_encoder, tiny_generator, AdjustmentOp("resize", target_shape=(1, 4, 4)),
                 SolveConfig(iterations=1))
    with pytest.raises(DimensionError):
        solve_ge(Tensor(np.zeros(5)), tiny_encoder, tiny_generator, IDENTITY, SolveConfig(iterations=1))
    with pytest.raises(DimensionError):
        solve_ge(m, tiny_encoder, tiny_generator, IDENTITY, SolveConfig(iterations=1), z_init=Tensor(np.zeros(2)))


def test_non_finite_objective_raises_solver_error(tiny_encoder, tiny_generator):
    m = Tensor(np.full(4, 1e200))
    with pytest.raises(SolverError) as excinfo:
        solve_ge(m, tiny_encoder, tiny_generator, IDENTITY, SolveConfig(iterations=3, restarts=1))
    assert excinfo.value.restart == 0
    assert excinfo.value.step == 1


def test_solve_config():
    config = SolveConfig.from_dict({"lambda": 0.02, "iterations": 7, "restarts": 1, "unknown": 1})
    assert config.lam == 0.02
    assert config.to_dict()["lambda"] == 0.02
    with pytest.raises(ConfigError):
        SolveConfig(iterations=0)
    with pytest.raises(ConfigError):
        SolveConfig(lam=-1.0)
