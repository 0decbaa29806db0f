"""Tests for the Adam optimizer and gradient clipping."""

import numpy as np
import pytest

from voicelink.nn.models import DivergenceError
from voicelink.nn.optim import AdamState, adam_step, clip_global_norm


def test_clip_noop_below_threshold():
    grads = {"a": np.array([0.3, 0.4])}
    out = clip_global_norm(grads, 5.0)
    assert out is grads


def test_clip_scales_to_norm():
    grads = {"a": np.array([3.0, 4.0]), "b": np.array([12.0])}
    out = clip_global_norm(grads, 5.0)
    total = np.sqrt(sum(np.sum(g ** 2) for g in out.values()))
    assert total == pytest.approx(5.0)
    # Direction preserved.
    assert out["a"][1] / out["a"][0] == pytest.approx(4.0 / 3.0)


def test_clip_zero_grad():
    grads = {"a": np.zeros(3)}
    assert clip_global_norm(grads, 1.0) is grads


def test_adam_first_step_magnitude():
    # With bias correction the first update has magnitude ~lr per element.
    params = {"w": np.zeros(4)}
    grads = {"w": np.full(4, 0.5)}
    state = AdamState(lr=1e-2, clip_norm=None)
    out = adam_step(params, grads, state)
    assert np.allclose(out["w"], -1e-2, atol=1e-6)
    assert state.step == 1


def test_adam_zero_grad_keeps_params():
    params = {"w": np.ones(3)}
    state = AdamState()
    out = adam_step(params, {"w": np.zeros(3)}, state)
    assert np.array_equal(out["w"], params["w"])


def test_adam_descends_quadratic():
    # Independent oracle: minimize f(w) = |w - 3|^2; Adam must converge.
    w = {"w": np.array([0.0])}
    state = AdamState(lr=0.1)
    for _ in range(500):
        g = {"w": 2 * (w["w"] - 3.0)}
        w = adam_step(w, g, state)
    assert w["w"][0] == pytest.approx(3.0, abs=1e-2)


def test_adam_rejects_nonfinite():
    state = AdamState()
    with pytest.raises(DivergenceError):
        adam_step({"w": np.zeros(2)}, {"w": np.array([1.0, np.nan])}, state)


def test_adam_rejects_shape_mismatch():
    state = AdamState()
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, state)


def test_adam_inputs_untouched():
    params = {"w": np.ones(2)}
    grads = {"w": np.ones(2)}
    adam_step(params, grads, AdamState())
    assert np.array_equal(params["w"], np.ones(2))
    assert np.array_equal(grads["w"], np.ones(2))
