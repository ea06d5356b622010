import numpy as np
import pytest

from streetwise.errors import ConfigError, ContractError, NumericError
from streetwise.nn import AdamHyper, AdamState, adam_step


def test_zero_gradient_leaves_params_and_decays_moments():
    hyper = AdamHyper(lr=0.1)
    values = np.array([1.0, -2.0])
    state = AdamState(m=np.array([0.5, 0.5]), v=np.array([0.25, 0.25]), t=3)
    new_values, new_state = adam_step(values, np.zeros(2), state, hyper)
    # m_hat nonzero from carried momentum still moves params, so start clean:
    clean, st = adam_step(values, np.zeros(2), AdamState.zeros(2), hyper)
    assert np.array_equal(clean, values)
    assert st.t == 1 and np.array_equal(st.m, np.zeros(2))
    # carried moments decay toward zero
    np.testing.assert_allclose(new_state.m, 0.9 * state.m)
    np.testing.assert_allclose(new_state.v, 0.999 * state.v)


def test_first_step_magnitude_is_learning_rate():
    # g=1, lr=0.1: m_hat = v_hat = 1 after bias correction, so delta = -lr/(1+eps)
    hyper = AdamHyper(lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    new_values, state = adam_step(np.zeros(1), np.ones(1), AdamState.zeros(1), hyper)
    assert abs(new_values[0] - (-0.1)) < 1e-8
    assert state.t == 1
    np.testing.assert_allclose(state.m, [0.1])
    np.testing.assert_allclose(state.v, [0.001])


def test_repeated_steps_move_monotonically_against_gradient():
    hyper = AdamHyper(lr=0.05)
    values = np.array([0.7, -0.3])
    grad = np.array([2.0, -1.5])
    state = AdamState.zeros(2)
    prev = values.copy()
    for _ in range(5):
        values, state = adam_step(values, grad, state, hyper)
        assert np.all((prev - values) * np.sign(grad) > 0)
        prev = values.copy()


def test_inputs_are_not_mutated():
    hyper = AdamHyper()
    values = np.array([1.0])
    grad = np.array([2.0])
    state = AdamState.zeros(1)
    adam_step(values, grad, state, hyper)
    assert values[0] == 1.0 and state.t == 0 and state.m[0] == 0.0


def test_non_finite_gradient_is_numeric_error():
    with pytest.raises(NumericError):
        adam_step(np.zeros(2), np.array([1.0, np.nan]), AdamState.zeros(2), AdamHyper())


def test_shape_mismatch_is_contract_error():
    with pytest.raises(ContractError):
        adam_step(np.zeros(2), np.zeros(3), AdamState.zeros(2), AdamHyper())


def test_bad_hyperparameters_rejected():
    with pytest.raises(ConfigError):
        AdamHyper(lr=0.0)
    with pytest.raises(ConfigError):
        AdamHyper(beta1=1.0)
    with pytest.raises(ConfigError):
        AdamHyper(eps=0.0)
