"""Continuous 2-D point agent in the unit box."""
from __future__ import annotations

import numpy as np

from . import palette
from .base import Env, EnvSpec, as_rng

AGENT_SIZE = 4.0
# agent centre maps [0, 1] onto pixel coordinates [MARGIN, 32 - MARGIN]
MARGIN = 2.0


class Grid2D(Env):
    """Actions: 0 no-op, 1 up (+y), 2 down, 3 left (-x), 4 right.

    Moves are clamped at the box walls. ``jitter`` adds Gaussian drift to the
    natural dynamics when a seed is passed to :meth:`step`; it is off by default.
    """

    spec = EnvSpec(
        name="grid2d", n_actions=5,
        action_names=("noop", "up", "down", "left", "right"),
        factor_names=("x", "y"), factor_ranges=((0.0, 1.0), (0.0, 1.0)),
        discrete=(False, False), controllable=(True, True))

    _moves = {1: (1, 1), 2: (1, -1), 3: (0, -1), 4: (0, 1)}

    def __init__(self, step_size: float = 0.05, jitter: float = 0.0):
        self.step_size = np.float32(step_size)
        self.jitter = jitter

    def reset(self, seed) -> np.ndarray:
        return as_rng(seed).uniform(0.0, 1.0, size=2).astype(np.float32)

    def _transition(self, state, action):
        nxt = state.copy()
        if action in self._moves:
            axis, sign = self._moves[action]
            moved = nxt[axis] + self.step_size if sign > 0 else nxt[axis] - self.step_size
            nxt[axis] = min(max(moved, np.float32(0)), np.float32(1))
        return nxt

    def step(self, state, action, seed=None):
        nxt = super().step(state, action)
        if self.jitter and seed is not None:
            noise = as_rng(seed).normal(0.0, self.jitter, size=2).astype(np.float32)
            nxt = np.clip(nxt + noise, 0, 1).astype(np.float32)
        return nxt

    def affected(self, state, action):
        return frozenset({self._moves[action][0]}) if action in self._moves else frozenset()

    def render(self, state) -> np.ndarray:
        x, y = float(state[0]), float(state[1])
        span = 32.0 - 2 * MARGIN
        cx = MARGIN + x * span
        cy = MARGIN + (1.0 - y) * span  # image rows grow downward
        edges = np.arange(32, dtype=np.float64)
        half = AGENT_SIZE / 2
        cov_x = np.clip(np.minimum(edges + 1, cx + half) - np.maximum(edges, cx - half), 0, 1)
        cov_y = np.clip(np.minimum(edges + 1, cy + half) - np.maximum(edges, cy - half), 0, 1)
        cov = cov_y[:, None, None] * cov_x[None, :, None]
        img = palette.rgb(palette.FLOOR) * (1 - cov) + palette.rgb(palette.AGENT) * cov
        return np.rint(img).astype(np.uint8)
