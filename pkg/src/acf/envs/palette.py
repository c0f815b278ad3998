"""Fixed RGB constants used by every renderer; golden images depend on them."""
import numpy as np

BLACK = (0, 0, 0)
FLOOR = (24, 24, 24)
WALL = (110, 110, 110)
AGENT = (230, 40, 40)
AGENT_BACK = (120, 20, 20)
TAXI = (255, 200, 0)
KEY = (255, 230, 40)
DOOR = (190, 140, 20)
DOOR_OPEN_INNER = (60, 45, 10)
STRIPE_LIGHT = (250, 250, 250)
STRIPE_DARK = (0, 0, 0)

# taxi goals in the order of goal_id: red, green, blue, magenta
GOALS = ((220, 40, 40), (40, 200, 60), (50, 90, 230), (200, 50, 200))


def rgb(color) -> np.ndarray:
    return np.asarray(color, dtype=np.float64)
