"""5x5 Taxi with one passenger and four goal corners."""
from __future__ import annotations

import numpy as np

from . import palette
from .base import Env, EnvSpec, as_rng

SIZE = 5
CELL = 6  # 5 cells * 6 px + 1 px frame on each side = 32
GOAL_CELLS = ((0, 0), (SIZE - 1, 0), (0, SIZE - 1), (SIZE - 1, SIZE - 1))

# factor indices
TX, TY, PX, PY, IN_TAXI, GOAL = range(6)

_MOVES = {1: (0, -1), 2: (0, 1), 3: (-1, 0), 4: (1, 0)}  # y grows downward
_TOGGLE = 5


def _disk_mask():
    m = np.zeros((CELL, CELL), dtype=bool)
    m[1:CELL - 1, 1:CELL - 1] = True
    for r, c in ((1, 1), (1, CELL - 2), (CELL - 2, 1), (CELL - 2, CELL - 2)):
        m[r, c] = False
    return m


def _outline_mask():
    m = np.ones((CELL, CELL), dtype=bool)
    m[1:CELL - 1, 1:CELL - 1] = False
    return m


DISK = _disk_mask()
OUTLINE = _outline_mask()


def _stripes() -> np.ndarray:
    idx = np.arange(32)
    light = ((idx[:, None] + idx[None, :]) // 2) % 2 == 0
    return np.where(light[..., None], palette.rgb(palette.STRIPE_LIGHT),
                    palette.rgb(palette.STRIPE_DARK))


STRIPES = _stripes()


class Taxi(Env):
    """Factors ``[taxi_x, taxi_y, passenger_x, passenger_y, in_taxi, goal_id]``.

    Actions: 0 no-op, 1 up, 2 down, 3 left, 4 right, 5 pickup/drop toggle. The
    toggle picks the passenger up when co-located and drops it otherwise; a
    riding passenger moves with the taxi.
    """

    spec = EnvSpec(
        name="taxi", n_actions=6,
        action_names=("noop", "up", "down", "left", "right", "toggle"),
        factor_names=("taxi_x", "taxi_y", "passenger_x", "passenger_y", "in_taxi", "goal_id"),
        factor_ranges=((0, SIZE - 1), (0, SIZE - 1), (0, SIZE - 1), (0, SIZE - 1), (0, 1), (0, 3)),
        discrete=(True,) * 6, controllable=(True, True, True, True, True, False))

    def reset(self, seed) -> np.ndarray:
        rng = as_rng(seed)
        tx, ty, px, py = rng.integers(0, SIZE, size=4)
        goal = rng.integers(0, 4)
        return np.array([tx, ty, px, py, 0, goal], dtype=np.float32)

    def _transition(self, state, action):
        s = state.copy()
        riding = s[IN_TAXI] == 1
        if action in _MOVES:
            dx, dy = _MOVES[action]
            s[TX] = min(max(s[TX] + dx, 0), SIZE - 1)
            s[TY] = min(max(s[TY] + dy, 0), SIZE - 1)
            if riding:
                s[PX], s[PY] = s[TX], s[TY]
        elif action == _TOGGLE:
            if riding:
                s[IN_TAXI] = 0
            elif s[TX] == s[PX] and s[TY] == s[PY]:
                s[IN_TAXI] = 1
        return s

    def affected(self, state, action):
        if action in _MOVES:
            axis = TX if _MOVES[action][0] else TY
            extra = {axis + 2} if state[IN_TAXI] == 1 else set()
            return frozenset({axis} | extra)
        if action == _TOGGLE:
            return frozenset({IN_TAXI})
        return frozenset()

    def render(self, state) -> np.ndarray:
        tx, ty, px, py, riding, goal = (int(v) for v in state)
        img = np.empty((32, 32, 3), dtype=np.float64)
        img[:] = STRIPES if riding else palette.rgb(palette.BLACK)
        floor = img[1:31, 1:31]
        floor[:] = palette.rgb(palette.FLOOR)
        for gid, (gx, gy) in enumerate(GOAL_CELLS):
            cell = floor[gy * CELL:(gy + 1) * CELL, gx * CELL:(gx + 1) * CELL]
            cell[:] = 0.3 * palette.rgb(palette.GOALS[gid])
        pcell = floor[py * CELL:(py + 1) * CELL, px * CELL:(px + 1) * CELL]
        pcell[DISK] = palette.rgb(palette.GOALS[goal])
        tcell = floor[ty * CELL:(ty + 1) * CELL, tx * CELL:(tx + 1) * CELL]
        tcell[OUTLINE] = palette.rgb(palette.TAXI)
        return img.astype(np.uint8)

    def all_states(self):
        """Every reachable state (passenger rides only when co-located)."""
        out = []
        for goal in range(4):
            for tx in range(SIZE):
                for ty in range(SIZE):
                    for px in range(SIZE):
                        for py in range(SIZE):
                            out.append((tx, ty, px, py, 0, goal))
                    out.append((tx, ty, tx, ty, 1, goal))
        return np.array(out, dtype=np.float32)
