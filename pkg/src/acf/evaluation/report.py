"""CSV tables and heatmap images for R^2 matrices and scores."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..imageio import write_image
from .assignment import scores

SCORE_COLUMNS = ("method", "diag_mean", "diag_std", "offdiag_mean", "offdiag_std")

# viridis sampled at 0, .25, .5, .75, 1
_LUT = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]],
                dtype=np.float64)
NAN_COLOR = (128, 128, 128)


def write_matrix_csv(path, matrix: np.ndarray, row_names, col_names) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["latent", *col_names])
        for name, row in zip(row_names, np.asarray(matrix)):
            w.writerow([name, *("nan" if np.isnan(v) else repr(float(v)) for v in row)])


def read_matrix_csv(path) -> tuple[np.ndarray, list[str], list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols = rows[0][1:]
    names = [r[0] for r in rows[1:]]
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]]), names, cols


def aggregate(matrices) -> tuple[np.ndarray, np.ndarray]:
    """Element-wise mean and (population) std over seeds."""
    stack = np.stack([np.asarray(getattr(m, "values", m), dtype=np.float64) for m in matrices])
    return stack.mean(axis=0), stack.std(axis=0)


def score_row(method: str, matrices) -> dict:
    summaries = [scores(m) for m in matrices]
    diag = np.array([s.diag_score for s in summaries])
    off = np.array([s.offdiag_score for s in summaries])
    return {"method": method, "diag_mean": float(diag.mean()), "diag_std": float(diag.std()),
            "offdiag_mean": float(off.mean()), "offdiag_std": float(off.std())}


def write_scores_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SCORE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (row[k] if k == "method" else repr(float(row[k])))
                        for k in SCORE_COLUMNS})


def colormap(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] (NaN allowed) to RGB u8 with a fixed 5-stop palette."""
    v = np.asarray(values, dtype=np.float64)
    nan = np.isnan(v)
    t = np.clip(np.nan_to_num(v), 0, 1) * (len(_LUT) - 1)
    lo = np.minimum(np.floor(t).astype(int), len(_LUT) - 2)
    frac = (t - lo)[..., None]
    rgb = _LUT[lo] * (1 - frac) + _LUT[lo + 1] * frac
    rgb[nan] = NAN_COLOR
    return np.rint(rgb).astype(np.uint8)


def heatmap(matrix: np.ndarray, cell: int = 16) -> np.ndarray:
    rgb = colormap(np.clip(matrix, 0, 1))
    return np.repeat(np.repeat(rgb, cell, axis=0), cell, axis=1)


def write_heatmap(path, matrix, cell: int = 16) -> None:
    write_image(Path(path), heatmap(np.asarray(matrix, dtype=np.float64), cell))
