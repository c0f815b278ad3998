"""Pixel-observation simulators with exact factored ground truth."""
from .base import NOOP, OBS_SHAPE, Env, EnvSpec, InvalidActionError
from .grid2d import Grid2D
from .minigrid import DoorKey, FourRooms
from .taxi import Taxi

ENVS = {"grid2d": Grid2D, "taxi": Taxi, "fourrooms": FourRooms, "doorkey": DoorKey}


class UnknownEnvError(KeyError):
    pass


def make_env(name: str) -> Env:
    try:
        return ENVS[name.lower()]()
    except KeyError:
        raise UnknownEnvError(f"unknown env {name!r}; choose from {', '.join(ENVS)}") from None


__all__ = ["ENVS", "NOOP", "OBS_SHAPE", "DoorKey", "Env", "EnvSpec", "FourRooms", "Grid2D",
           "InvalidActionError", "Taxi", "UnknownEnvError", "make_env"]
