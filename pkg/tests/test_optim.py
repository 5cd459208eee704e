"""Adam update rule checks."""

import numpy as np
import pytest

from cmtf.autodiff import Tensor
from cmtf.errors import ConfigError, DimensionError
from cmtf.optim import AdamState, adam_step


def test_first_step_is_lr_times_sign():
    # with bias correction the very first update is lr * sign(g) up to the
    # eps in the denominator, which bites hardest for the smallest gradient
    p = Tensor(np.zeros(4), requires_grad=True)
    g = np.array([0.5, -2.0, 1e-3, -7.0])
    state = AdamState(learning_rate=0.1)
    adam_step([p], [g], state)
    np.testing.assert_allclose(p.data, -0.1 * np.sign(g), rtol=1e-4)


def test_matches_reference_formula_over_steps():
    rng = np.random.default_rng(5)
    p = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    state = AdamState(learning_rate=0.01)

    # independent recomputation of the moment recursions
    ref = p.data.copy()
    m = np.zeros_like(ref)
    v = np.zeros_like(ref)
    for t in range(1, 6):
        g = rng.normal(size=ref.shape)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        m_hat = m / (1 - 0.9 ** t)
        v_hat = v / (1 - 0.999 ** t)
        ref = ref - 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
        adam_step([p], [g], state)
    np.testing.assert_allclose(p.data, ref, rtol=1e-12)
    assert state.step == 5


def test_bias_correction_keeps_early_steps_full_size():
    # without correction the first step would be ~lr*0.1/sqrt(0.001*g^2),
    # already off by orders of magnitude for small g
    p = Tensor(np.array([0.0]), requires_grad=True)
    adam_step([p], [np.array([1e-4])], AdamState(learning_rate=0.05))
    assert abs(p.data[0] + 0.05) < 1e-4


def test_param_grad_count_mismatch():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(DimensionError):
        adam_step([p], [np.zeros(2), np.zeros(2)], AdamState(learning_rate=0.1))


def test_grad_shape_mismatch():
    p = Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(DimensionError):
        adam_step([p], [np.zeros(3)], AdamState(learning_rate=0.1))


def test_state_param_count_locked_after_first_step():
    a = Tensor(np.zeros(2), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    state = AdamState(learning_rate=0.1)
    adam_step([a, b], [np.ones(2), np.ones(2)], state)
    with pytest.raises(DimensionError):
        adam_step([a], [np.ones(2)], state)


def test_nonpositive_learning_rate_rejected():
    with pytest.raises(ConfigError):
        AdamState(learning_rate=0.0)
    with pytest.raises(ConfigError):
        AdamState(learning_rate=-1.0)
