"""Orientation-relative gridworlds: FourRooms (16x16) and DoorKey (8x8)."""
from __future__ import annotations

import numpy as np

from . import palette
from .base import Env, EnvSpec, as_rng

NOOP, ROT_CW, ROT_CCW, FORWARD, BACKWARD, STRAFE_R, STRAFE_L, PICKUP, OPEN, DONE = range(10)
ACTION_NAMES = ("noop", "rotate_cw", "rotate_ccw", "forward", "backward", "strafe_right",
                "strafe_left", "pickup", "open", "done")
# directions clockwise from north; y grows downward
DIRS = ((0, -1), (1, 0), (0, 1), (-1, 0))
DIR_NAMES = ("north", "east", "south", "west")

_MOVE_OFFSET = {FORWARD: 0, STRAFE_R: 1, BACKWARD: 2, STRAFE_L: 3}


def move_vector(direction: int, action: int) -> tuple[int, int]:
    return DIRS[(direction + _MOVE_OFFSET[action]) % 4]


def agent_mask(cell: int, direction: int) -> tuple[np.ndarray, np.ndarray]:
    """Front/back pixel masks of the agent sprite for a heading."""
    front = np.zeros((cell, cell), dtype=bool)
    back = np.zeros((cell, cell), dtype=bool)
    half = cell // 2
    if cell <= 2:
        front[:half] = True
        back[half:] = True
    else:
        front[:half, half // 2: cell - half // 2] = True
        back[half:] = True
    k = -direction  # north sprite rotated clockwise
    return np.rot90(front, k), np.rot90(back, k)


class _GridWorld(Env):
    size: int
    cell: int

    def _walls(self, state) -> np.ndarray:
        raise NotImplementedError

    def _blocked(self, state, x, y) -> bool:
        return bool(self._walls(state)[y, x])

    def _turn_or_move(self, s, action):
        d = int(s[2])
        if action == ROT_CW:
            s[2] = (d + 1) % 4
        elif action == ROT_CCW:
            s[2] = (d - 1) % 4
        elif action in _MOVE_OFFSET:
            dx, dy = move_vector(d, action)
            nx, ny = int(s[0]) + dx, int(s[1]) + dy
            if not self._blocked(s, nx, ny):
                s[0], s[1] = nx, ny
        return s

    def _move_axis(self, state, action) -> int:
        dx, _ = move_vector(int(state[2]), action)
        return 0 if dx else 1

    def _draw_agent(self, img, x, y, direction):
        c = self.cell
        tile = img[y * c:(y + 1) * c, x * c:(x + 1) * c]
        front, back = agent_mask(c, direction)
        tile[front] = palette.rgb(palette.AGENT)
        tile[back] = palette.rgb(palette.AGENT_BACK)
        return tile

    def _base_image(self, walls) -> np.ndarray:
        c = self.cell
        grid = np.where(walls[..., None], palette.rgb(palette.WALL), palette.rgb(palette.FLOOR))
        return np.repeat(np.repeat(grid, c, axis=0), c, axis=1)


def four_rooms_walls(size: int = 16) -> np.ndarray:
    w = np.zeros((size, size), dtype=bool)
    w[0, :] = w[-1, :] = w[:, 0] = w[:, -1] = True
    mid = size // 2
    w[1:-1, mid] = True
    w[mid, 1:-1] = True
    # doorways: two through the vertical wall, one on each half of the horizontal wall
    w[mid // 2, mid] = False
    w[mid + (size - mid) // 2, mid] = False
    w[mid, mid // 2 - 1] = False
    w[mid, mid + (size - mid) // 2] = False
    return w


class FourRooms(_GridWorld):
    """Factors ``[agent_x, agent_y, agent_dir]`` on a 16x16 four-room layout."""

    size, cell = 16, 2
    spec = EnvSpec(
        name="fourrooms", n_actions=10, action_names=ACTION_NAMES,
        factor_names=("agent_x", "agent_y", "agent_dir"),
        factor_ranges=((0, 15), (0, 15), (0, 3)),
        discrete=(True, True, True), controllable=(True, True, True))

    def __init__(self):
        self.walls = four_rooms_walls(self.size)
        self.free_cells = np.argwhere(~self.walls)[:, ::-1]  # (x, y)

    def _walls(self, state):
        return self.walls

    def reset(self, seed):
        rng = as_rng(seed)
        x, y = self.free_cells[rng.integers(len(self.free_cells))]
        return np.array([x, y, rng.integers(4)], dtype=np.float32)

    def _transition(self, state, action):
        return self._turn_or_move(state.copy(), action)

    def affected(self, state, action):
        if action in (ROT_CW, ROT_CCW):
            return frozenset({2})
        if action in _MOVE_OFFSET:
            return frozenset({self._move_axis(state, action)})
        return frozenset()

    def render(self, state):
        img = self._base_image(self.walls)
        x, y, d = (int(v) for v in state)
        self._draw_agent(img, x, y, d)
        return img.astype(np.uint8)

    def all_states(self):
        return np.array([(x, y, d) for x, y in self.free_cells for d in range(4)],
                        dtype=np.float32)


# DoorKey factor indices
AX, AY, ADIR, KEY_HELD, DOOR_OPEN, DOOR_Y, KEY_X = range(7)


class DoorKey(_GridWorld):
    """Factors ``[agent_x, agent_y, agent_dir, key_held, door_open, door_y, key_x]``.

    An 8x8 grid with an outer wall and a wall column at x=4 holding one door.
    The door row is drawn at reset and fixed for the episode. The key lies on the
    bottom interior row of the left room; once picked up it is carried for the
    rest of the episode and ``key_x`` follows the agent. The door toggles with
    ``open`` only while the key is held.
    """

    size, cell = 8, 4
    wall_x = 4
    key_row = 6
    spec = EnvSpec(
        name="doorkey", n_actions=10, action_names=ACTION_NAMES,
        factor_names=("agent_x", "agent_y", "agent_dir", "key_held", "door_open", "door_y",
                      "key_x"),
        factor_ranges=((1, 6), (1, 6), (0, 3), (0, 1), (0, 1), (1, 6), (1, 6)),
        discrete=(True,) * 7, controllable=(True, True, True, True, True, False, True))

    def __init__(self):
        w = np.zeros((self.size, self.size), dtype=bool)
        w[0, :] = w[-1, :] = w[:, 0] = w[:, -1] = True
        w[:, self.wall_x] = True
        self.static_walls = w

    def _walls(self, state):
        w = self.static_walls.copy()
        if state[DOOR_OPEN] == 1:
            w[int(state[DOOR_Y]), self.wall_x] = False
        if state[KEY_HELD] == 0:
            w[self.key_row, int(state[KEY_X])] = True
        return w

    def reset(self, seed):
        rng = as_rng(seed)
        door_y = rng.integers(1, self.size - 1)
        key_x = rng.integers(1, self.wall_x)
        cells = [(x, y) for x in range(1, self.wall_x) for y in range(1, self.size - 1)
                 if (x, y) != (key_x, self.key_row)]
        ax, ay = cells[rng.integers(len(cells))]
        return np.array([ax, ay, rng.integers(4), 0, 0, door_y, key_x], dtype=np.float32)

    def _facing(self, state):
        dx, dy = DIRS[int(state[ADIR])]
        return int(state[AX]) + dx, int(state[AY]) + dy

    def _transition(self, state, action):
        s = state.copy()
        if action == PICKUP:
            if s[KEY_HELD] == 0 and self._facing(s) == (int(s[KEY_X]), self.key_row):
                s[KEY_HELD] = 1
                s[KEY_X] = s[AX]
        elif action == OPEN:
            if s[KEY_HELD] == 1 and self._facing(s) == (self.wall_x, int(s[DOOR_Y])):
                s[DOOR_OPEN] = 1 - s[DOOR_OPEN]
        else:
            s = self._turn_or_move(s, action)
            if s[KEY_HELD] == 1:
                s[KEY_X] = s[AX]
        return s

    def affected(self, state, action):
        if action in (ROT_CW, ROT_CCW):
            return frozenset({ADIR})
        if action in _MOVE_OFFSET:
            axis = self._move_axis(state, action)
            if axis == AX and state[KEY_HELD] == 1:
                return frozenset({AX, KEY_X})
            return frozenset({axis})
        if action == PICKUP:
            return frozenset({KEY_HELD, KEY_X})
        if action == OPEN:
            return frozenset({DOOR_OPEN})
        return frozenset()

    def render(self, state):
        c = self.cell
        img = self._base_image(self.static_walls)
        door_y = int(state[DOOR_Y])
        door = img[door_y * c:(door_y + 1) * c, self.wall_x * c:(self.wall_x + 1) * c]
        door[:] = palette.rgb(palette.DOOR)
        if state[DOOR_OPEN] == 1:
            door[1:-1, 1:-1] = palette.rgb(palette.DOOR_OPEN_INNER)
        if state[KEY_HELD] == 0:
            kx = int(state[KEY_X])
            tile = img[self.key_row * c:(self.key_row + 1) * c, kx * c:(kx + 1) * c]
            tile[1:3, 1:3] = palette.rgb(palette.KEY)
            tile[3, 2] = palette.rgb(palette.KEY)
        tile = self._draw_agent(img, int(state[AX]), int(state[AY]), int(state[ADIR]))
        if state[KEY_HELD] == 1:
            tile[1:3, 1:3] = palette.rgb(palette.KEY)
        return img.astype(np.uint8)

    def all_states(self):
        """Every state with a consistent key/door configuration (a superset of the reachable set)."""
        out = []
        for door_y in range(1, self.size - 1):
            for held, door_open, key_x in ([(0, 0, k) for k in range(1, self.wall_x)]
                                           + [(1, 0, None), (1, 1, None)]):
                base = np.array([0, 0, 0, held, door_open, door_y, key_x or 0], dtype=np.float32)
                walls = self._walls(base)
                for x in range(1, self.size - 1):
                    for y in range(1, self.size - 1):
                        if walls[y, x]:
                            continue
                        for d in range(4):
                            s = base.copy()
                            s[AX], s[AY], s[ADIR] = x, y, d
                            if held:
                                s[KEY_X] = x
                            out.append(s)
        return np.array(out, dtype=np.float32)
