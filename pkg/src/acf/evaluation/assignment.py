"""Optimal assignment of latents to factors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _min_cost_assignment(cost: np.ndarray) -> np.ndarray:
    """Shortest-augmenting-path Hungarian method; returns row index for every column."""
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=int)  # owner[col] = row (1-based), 0 = free
    way = np.zeros(n + 1, dtype=int)
    for row in range(1, n + 1):
        owner[0] = row
        col0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[col0] = True
            r0 = owner[col0]
            delta, col1 = inf, 0
            for col in range(1, n + 1):
                if used[col]:
                    continue
                cur = cost[r0 - 1, col - 1] - u[r0] - v[col]
                if cur < minv[col]:
                    minv[col], way[col] = cur, col0
                if minv[col] < delta:
                    delta, col1 = minv[col], col
            for col in range(n + 1):
                if used[col]:
                    u[owner[col]] += delta
                    v[col] -= delta
                else:
                    minv[col] -= delta
            col0 = col1
            if owner[col0] == 0:
                break
        while col0:
            col1 = way[col0]
            owner[col0] = owner[col1]
            col0 = col1
    return owner[1:] - 1


def _best_value(m: np.ndarray) -> float:
    rows = _min_cost_assignment(-m)
    return float(m[rows, np.arange(m.shape[1])].sum())


def hungarian(matrix) -> np.ndarray:
    """Permutation ``rho`` maximizing ``sum_i M[rho[i], i]``.

    Among optimal permutations the lexicographically smallest ``rho`` is returned:
    columns are fixed in order to the smallest row that still admits an optimum.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"hungarian needs a square matrix, got shape {m.shape}")
    if np.isnan(m).any():
        raise ValueError("hungarian: matrix contains NaN")
    n = m.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int)
    target = _best_value(m)
    tol = 1e-9 * max(1.0, np.abs(m).max()) * n
    rho = np.empty(n, dtype=int)
    free_rows = list(range(n))
    fixed = 0.0
    for col in range(n):
        rest_cols = np.arange(col + 1, n)
        for row in free_rows:
            others = [r for r in free_rows if r != row]
            rest = _best_value(m[np.ix_(others, rest_cols)]) if others else 0.0
            if fixed + m[row, col] + rest >= target - tol:
                rho[col] = row
                fixed += m[row, col]
                free_rows = others
                break
    return rho


def pad_square(matrix, value: float = 0.0) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    n = max(m.shape)
    out = np.full((n, n), value)
    out[:m.shape[0], :m.shape[1]] = m
    return out


@dataclass(frozen=True)
class ScoreSummary:
    diag_score: float
    offdiag_score: float
    permutation: tuple[int, ...]  # latent assigned to each factor column

    def permuted_diagonal(self, matrix) -> np.ndarray:
        """Per-factor R^2 of its assigned latent (clipped, padded rows count as 0)."""
        m = pad_square(np.clip(np.nan_to_num(matrix, nan=0.0), 0, 1))
        k = np.asarray(matrix).shape[1]
        return np.array([m[self.permutation[j], j] for j in range(k)])


def scores(matrix) -> ScoreSummary:
    """Mean permuted-diagonal and mean max off-diagonal R^2 over valid factor columns.

    Cells are clipped to [0, 1]; undefined (NaN) cells are ignored and columns that
    are entirely undefined are left out.
    """
    raw = np.asarray(getattr(matrix, "values", matrix), dtype=np.float64)
    d, k = raw.shape
    valid_cols = [j for j in range(k) if not np.all(np.isnan(raw[:, j]))]
    clipped = np.clip(raw, 0.0, 1.0)
    square = pad_square(np.nan_to_num(clipped, nan=0.0))
    rho = hungarian(square)
    diag, off = [], []
    for j in valid_cols:
        i = rho[j]
        diag.append(clipped[i, j] if i < d and not np.isnan(clipped[i, j]) else 0.0)
        if i < d:
            others = [clipped[i, c] for c in valid_cols if c != j and not np.isnan(clipped[i, c])]
            off.append(max(others) if others else 0.0)
        else:
            off.append(0.0)
    return ScoreSummary(float(np.mean(diag)) if diag else float("nan"),
                        float(np.mean(off)) if off else float("nan"),
                        tuple(int(r) for r in rho[:k]))
