"""Regenerate the golden rendering fixtures under tests/fixtures/.

Only run this after an intentional renderer or palette change.
"""
from pathlib import Path

import numpy as np

from acf.envs import make_env
from acf.imageio import write_ppm

CANONICAL = {
    "grid2d": [(0.5, 0.5), (0.0, 0.0), (1.0, 0.25)],
    "taxi": [(0, 0, 4, 4, 0, 3), (2, 2, 2, 2, 1, 1)],
    "fourrooms": [(1, 1, 0), (14, 14, 2)],
    "doorkey": [(1, 1, 1, 0, 0, 3, 2), (5, 4, 3, 1, 1, 3, 5)],
}

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for name, states in CANONICAL.items():
        env = make_env(name)
        for i, s in enumerate(states):
            write_ppm(OUT / f"{name}_{i}.ppm", env.render(np.array(s, dtype=np.float32)))
    print(f"wrote fixtures to {OUT}")
