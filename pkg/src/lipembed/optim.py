"""Adam optimizer over named parameter dicts, plus the plateau LR schedule:
halve when the validation metric has not improved for 3 consecutive epochs,
never below the floor.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """Moments and step count for a set of named parameters."""

    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One Adam update with bias correction, in place on params.

    params and grads are dicts name -> array; only names present in grads
    are updated. Non-finite gradients are rejected with the offending
    parameter named. Returns (params, state).
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {name!r}")
        if name not in state.first_moment:
            state.first_moment[name] = np.zeros_like(params[name])
            state.second_moment[name] = np.zeros_like(params[name])
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name] -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


@dataclass
class PlateauSchedule:
    """Drop the learning rate by `factor` after `patience` consecutive
    epochs without improvement of an error metric (lower is better)."""

    lr: float = 3e-3
    factor: float = 2.0
    patience: int = 3
    floor: float = 1e-5
    best: float = float("inf")
    stagnant: int = 0

    def step(self, validation_metric):
        """Account for one epoch's validation metric; returns current lr."""
        if validation_metric < self.best:
            self.best = validation_metric
            self.stagnant = 0
        else:
            self.stagnant += 1
            if self.stagnant >= self.patience:
                self.lr = max(self.lr / self.factor, self.floor)
                self.stagnant = 0
        return self.lr
