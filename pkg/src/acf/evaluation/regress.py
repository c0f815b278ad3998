"""Factor-wise regressors: one small MLP per (latent, factor) cell, trained together."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffmath import ParamStore, adamw_step, grad, ops, parameter
from ..models import orthogonal


@dataclass
class RegressorConfig:
    hidden: int = 64
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 256
    patience: int = 20
    test_fraction: float = 0.2
    min_pairs: int = 2000


@dataclass
class R2Matrix:
    """Test-set R^2 of predicting factor ``j`` from latent ``i``; NaN marks undefined cells."""
    values: np.ndarray
    n_train: int
    n_test: int
    epochs_run: int = 0

    @property
    def shape(self):
        return self.values.shape

    def clipped(self) -> np.ndarray:
        return np.clip(np.nan_to_num(self.values, nan=0.0), 0.0, 1.0)

    @property
    def valid_columns(self) -> np.ndarray:
        return ~np.all(np.isnan(self.values), axis=0)


def r2_score(y, pred) -> float:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return float("nan")
    return 1.0 - float(np.sum((y - pred) ** 2)) / ss_tot


def _init(rng, cells, hidden):
    p = {}
    for name, shape in (("w1", (1, hidden)), ("w2", (hidden, hidden)), ("w3", (hidden, 1))):
        p[name] = np.stack([orthogonal(rng, shape) for _ in range(cells)])
    p["b1"] = np.zeros((cells, 1, hidden), np.float32)
    p["b2"] = np.zeros((cells, 1, hidden), np.float32)
    p["b3"] = np.zeros((cells, 1, 1), np.float32)
    return p


def _forward(p, x):
    h = ops.silu(x @ p["w1"] + p["b1"])
    h = ops.silu(h @ p["w2"] + p["b2"])
    return h @ p["w3"] + p["b3"]


def _standardize(a, mean, std):
    return ((a - mean) / std).astype(np.float32)


def fit_regressors(latents: np.ndarray, factors: np.ndarray, split_seed: int = 0,
                   cfg: RegressorConfig | None = None) -> R2Matrix:
    """R^2 for every (latent i, factor j) cell from an MLP ``z_i -> s_j``.

    Inputs and targets are standardized with training statistics; each cell keeps
    its best test R^2 over training, which stops once every cell has gone
    ``patience`` epochs without improving.
    """
    cfg = cfg or RegressorConfig()
    z = np.asarray(latents, dtype=np.float64)
    s = np.asarray(factors, dtype=np.float64)
    if z.ndim != 2 or s.ndim != 2 or len(z) != len(s):
        raise ValueError(f"latents {z.shape} and factors {s.shape} must be paired 2-D arrays")
    n = len(z)
    if n < cfg.min_pairs:
        raise ValueError(f"need at least {cfg.min_pairs} pairs, got {n}")
    rng = np.random.default_rng([split_seed, 7])
    perm = rng.permutation(n)
    n_test = int(round(cfg.test_fraction * n))
    test, train = perm[:n_test], perm[n_test:]
    d, k = z.shape[1], s.shape[1]
    cells = d * k
    rows, cols = np.divmod(np.arange(cells), k)

    z_mu, z_sd = z[train].mean(0), z[train].std(0)
    z_sd[z_sd == 0] = 1.0
    s_mu, s_sd = s[train].mean(0), s[train].std(0)
    defined = (s_sd > 0) & (s[test].std(0) > 0)
    s_sd[s_sd == 0] = 1.0
    zs, ss = _standardize(z, z_mu, z_sd), _standardize(s, s_mu, s_sd)
    # (cells, n, 1) views: cell c reads latent rows[c] and predicts factor cols[c]
    x_all = zs[:, rows].T[:, :, None]
    y_all = ss[:, cols].T[:, :, None]
    x_test, y_test = x_all[:, test], y_all[:, test].astype(np.float64)
    ss_tot = ((y_test - y_test.mean(axis=1, keepdims=True)) ** 2).sum(axis=(1, 2))

    store = ParamStore(_init(rng, cells, cfg.hidden))
    best = np.full(cells, -np.inf)
    since = np.zeros(cells, dtype=int)
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        order = train[rng.permutation(len(train))]
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            params = {name: parameter(v, name) for name, v in store.params.items()}
            err = _forward(params, x_all[:, idx]) - y_all[:, idx]
            # per-cell mean so every cell sees the gradient of its own MSE
            loss = ops.sum(ops.mean(err * err, axis=(1, 2)))
            store = adamw_step(store, grad(loss, params), cfg.lr)
        pred = _forward(store.params, x_test).data.astype(np.float64)
        ss_res = ((y_test - pred) ** 2).sum(axis=(1, 2))
        with np.errstate(divide="ignore", invalid="ignore"):
            r2 = 1.0 - ss_res / ss_tot
        improved = r2 > best + 1e-4
        best = np.where(improved | (r2 > best), np.maximum(best, r2), best)
        since = np.where(improved, 0, since + 1)
        if np.all(since >= cfg.patience):
            break
    values = best.reshape(d, k)
    values[:, ~defined] = np.nan
    return R2Matrix(values, n_train=len(train), n_test=n_test, epochs_run=epoch)
