"""
Tests for the ADAM and SGD update rules.
"""

import numpy as np
import pytest

from ml.exceptions import ConfigError, ContractError, DimensionError, NumericError
from ml.optim import AdamState, adam_step, sgd_step
from ml.tensor import Tape, Tensor, sq_l2, sub


def test_first_adam_step_moves_by_learning_rate():
    params = {"w": Tensor([1.0, -2.0, 0.5])}
    grads = {"w": np.array([0.3, -4.0, 1e-3])}
    state = AdamState(learning_rate=0.01)
    new, state = adam_step(state, params, grads)
    assert state.t == 1
    np.testing.assert_allclose(new["w"].data, params["w"].data - 0.01 * np.sign(grads["w"]), atol=1e-6)


def test_adam_matches_reference_update():
    p = np.array([0.5, -1.0])
    g1, g2 = np.array([0.2, 0.1]), np.array([-0.4, 0.3])
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    m = (1 - b1) * g1
    v = (1 - b2) * g1 ** 2
    expected = p - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
    m = b1 * m + (1 - b1) * g2
    v = b2 * v + (1 - b2) * g2 ** 2
    expected = expected - lr * (m / (1 - b1 ** 2)) / (np.sqrt(v / (1 - b2 ** 2)) + eps)

    state = AdamState(learning_rate=lr)
    params = {"p": Tensor(p)}
    params, state = adam_step(state, params, {"p": g1})
    params, state = adam_step(state, params, {"p": Tensor(g2)})
    np.testing.assert_allclose(params["p"].data, expected, rtol=1e-12)


def test_adam_minimizes_quadratic():
    target = Tensor([0.3, -0.7, 1.2])
    params = {"x": Tensor(np.zeros(3))}
    state = AdamState(learning_rate=0.05)
    for _ in range(2000):
        with Tape() as tape:
            tape.watch_all(params)
            grads = tape.backward(sq_l2(sub(params["x"], target))).for_params(params)
        params, state = adam_step(state, params, grads)
    np.testing.assert_allclose(params["x"].data, target.data, atol=2e-2)


def test_adam_rejects_bad_gradients():
    params = {"w": Tensor(np.ones(2))}
    with pytest.raises(ContractError):
        adam_step(AdamState(), params, {})
    with pytest.raises(DimensionError):
        adam_step(AdamState(), params, {"w": np.ones(3)})
    with pytest.raises(NumericError):
        adam_step(AdamState(), params, {"w": np.array([1.0, np.nan])})


def test_adam_state_validation():
    with pytest.raises(ConfigError):
        AdamState(learning_rate=0.0)
    with pytest.raises(ConfigError):
        AdamState(beta1=1.0)


def test_states_do_not_share_buffers():
    a, b = AdamState(), AdamState()
    adam_step(a, {"w": Tensor([1.0])}, {"w": np.array([1.0])})
    assert "w" in a.m
    assert b.m == {}


def test_sgd_step():
    new = sgd_step({"w": Tensor([1.0, 2.0])}, {"w": np.array([0.5, -1.0])}, lr=0.1)
    np.testing.assert_allclose(new["w"].data, [0.95, 2.1])
    with pytest.raises(ConfigError):
        sgd_step({"w": Tensor([1.0])}, {"w": np.array([1.0])}, lr=-1.0)
