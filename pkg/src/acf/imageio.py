"""Image files: binary PPM written by hand (byte-stable), PNG through Pillow."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def write_image(path, img: np.ndarray, scale: int = 1) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if scale > 1:
        img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        write_ppm(path, img)
    else:
        from PIL import Image
        Image.fromarray(img).save(path)


def tile_grid(tiles: np.ndarray, pad: int = 1, pad_value: int = 255) -> np.ndarray:
    """Arrange a (rows, cols, h, w, 3) array of tiles into one image."""
    rows, cols, h, w, _ = tiles.shape
    out = np.full((rows * (h + pad) + pad, cols * (w + pad) + pad, 3), pad_value, dtype=np.uint8)
    for r in range(rows):
        for c in range(cols):
            y, x = pad + r * (h + pad), pad + c * (w + pad)
            out[y:y + h, x:x + w] = tiles[r, c]
    return out
