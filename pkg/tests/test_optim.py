"""Adam updates against closed-form algebra and a scalar oracle; plateau
learning-rate schedule behaviour."""

import numpy as np
import pytest

from lipembed.optim import AdamState, PlateauSchedule, adam_step

from oracles import adam_scalar_trajectory


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        params = {"w": np.array([1.0, -2.0, 3.0])}
        grads = {"w": np.zeros(3)}
        state = AdamState(learning_rate=0.1)
        adam_step(params, grads, state)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0, 3.0])
        assert state.step_count == 1

    def test_first_step_magnitude_is_learning_rate(self):
        # with constant gradient g the bias-corrected first update is
        # -lr * g / (|g| + eps'), magnitude ~ lr
        lr = 0.05
        for g in (0.3, -2.0, 10.0):
            params = {"w": np.array([0.0])}
            state = AdamState(learning_rate=lr)
            adam_step(params, {"w": np.array([g])}, state)
            np.testing.assert_allclose(abs(params["w"][0]), lr, rtol=1e-6)
            assert np.sign(params["w"][0]) == -np.sign(g)

    def test_ten_step_scalar_trajectory_matches_oracle(self):
        rng = np.random.default_rng(0)
        grads = rng.standard_normal(10)
        lr = 0.01
        params = {"x": np.array([0.7])}
        state = AdamState(learning_rate=lr)
        seen = []
        for g in grads:
            adam_step(params, {"x": np.array([g])}, state)
            seen.append(params["x"][0])
        expected = adam_scalar_trajectory(0.7, grads, lr)
        assert np.max(np.abs(np.array(seen) - np.array(expected))) < 1e-12

    def test_non_finite_gradient_rejected_with_name(self):
        params = {"layer.weight": np.zeros(2)}
        state = AdamState()
        with pytest.raises(ValueError, match="layer.weight"):
            adam_step(params, {"layer.weight": np.array([1.0, np.nan])}, state)

    def test_moments_track_parameter_shapes(self):
        params = {"a": np.zeros((2, 3)), "b": np.zeros(4)}
        grads = {"a": np.ones((2, 3)), "b": np.ones(4)}
        state = AdamState()
        adam_step(params, grads, state)
        assert state.first_moment["a"].shape == (2, 3)
        assert state.second_moment["b"].shape == (4,)


class TestPlateauSchedule:
    def test_three_stagnant_epochs_halve_lr(self):
        sched = PlateauSchedule(lr=3e-3)
        sched.step(0.5)  # first metric becomes best
        for _ in range(3):
            sched.step(0.5)  # no improvement
        np.testing.assert_allclose(sched.lr, 1.5e-3)

    def test_floor_clamps(self):
        sched = PlateauSchedule(lr=1.5e-5)
        sched.step(0.5)
        for _ in range(3):
            sched.step(0.5)
        np.testing.assert_allclose(sched.lr, 1e-5)

    def test_improvement_resets_counter(self):
        sched = PlateauSchedule(lr=3e-3)
        sched.step(0.5)
        sched.step(0.5)
        sched.step(0.5)  # two stagnant epochs
        sched.step(0.4)  # improvement
        assert sched.stagnant == 0
        np.testing.assert_allclose(sched.lr, 3e-3)
        # three more stagnant epochs now needed for a drop
        sched.step(0.4)
        sched.step(0.4)
        np.testing.assert_allclose(sched.lr, 3e-3)
        sched.step(0.4)
        np.testing.assert_allclose(sched.lr, 1.5e-3)
