from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OBS_SHAPE = (32, 32, 3)
NOOP = 0


class InvalidActionError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    name: str
    n_actions: int
    action_names: tuple[str, ...]
    factor_names: tuple[str, ...]
    factor_ranges: tuple[tuple[float, float], ...]
    discrete: tuple[bool, ...]
    controllable: tuple[bool, ...]
    obs_shape: tuple[int, int, int] = OBS_SHAPE

    @property
    def k_gt(self) -> int:
        return len(self.factor_names)

    def to_config(self) -> str:
        """Render as a ``[env]`` section of the cli config format."""
        def fmt(xs):
            return ", ".join(str(x) for x in xs)
        lines = [
            "[env]",
            f"name = {self.name}",
            f"n_actions = {self.n_actions}",
            f"action_names = {fmt(self.action_names)}",
            f"factor_names = {fmt(self.factor_names)}",
            f"factor_ranges = {fmt(f'{lo}:{hi}' for lo, hi in self.factor_ranges)}",
            f"discrete = {fmt(int(d) for d in self.discrete)}",
            f"controllable = {fmt(int(c) for c in self.controllable)}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_config(cls, section: dict[str, str]) -> "EnvSpec":
        def split(key):
            return tuple(s.strip() for s in section[key].split(",") if s.strip())
        ranges = tuple(tuple(float(v) for v in r.split(":")) for r in split("factor_ranges"))
        return cls(name=section["name"].strip(), n_actions=int(section["n_actions"]),
                   action_names=split("action_names"), factor_names=split("factor_names"),
                   factor_ranges=ranges,
                   discrete=tuple(bool(int(v)) for v in split("discrete")),
                   controllable=tuple(bool(int(v)) for v in split("controllable")))


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class Env:
    """A deterministic simulator whose state is its ground-truth factor vector.

    Subclasses provide ``spec``, ``reset``, ``_transition``, ``render`` and
    ``affected``. Action 0 is always the no-op.
    """

    spec: EnvSpec

    def reset(self, seed) -> np.ndarray:
        raise NotImplementedError

    def _transition(self, state: np.ndarray, action: int) -> np.ndarray:
        raise NotImplementedError

    def render(self, state: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def affected(self, state: np.ndarray, action: int) -> frozenset[int]:
        """Factor indices the action's mechanism may change in ``state``."""
        raise NotImplementedError

    def step(self, state: np.ndarray, action: int, seed=None) -> np.ndarray:
        action = int(action)
        if not 0 <= action < self.spec.n_actions:
            raise InvalidActionError(
                f"{self.spec.name}: action {action} outside [0, {self.spec.n_actions})")
        return self._transition(np.asarray(state, dtype=np.float32), action)

    def ground_truth(self, state: np.ndarray) -> np.ndarray:
        return np.asarray(state, dtype=np.float32).copy()

    def render_batch(self, states: np.ndarray) -> np.ndarray:
        return np.stack([self.render(s) for s in states])
