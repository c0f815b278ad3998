"""Local-Jacobian diagonality of the map from ground-truth factors to latents."""
from __future__ import annotations

import numpy as np

from .assignment import hungarian, pad_square


def local_jacobians(factors: np.ndarray, latents: np.ndarray, n_anchors: int = 100,
                    k: int = 50, seed: int = 0, rcond: float = 1e-8) -> np.ndarray:
    """Least-squares linear maps ``s -> z`` over the ``k`` nearest neighbours of random
    anchors in factor space; rank-deficient neighbourhoods are skipped.

    Returns an (n_kept, latent_dim, factor_dim) array.
    """
    s = np.asarray(factors, dtype=np.float64)
    z = np.asarray(latents, dtype=np.float64)
    rng = np.random.default_rng([seed, 11])
    anchors = rng.choice(len(s), size=min(n_anchors, len(s)), replace=False)
    out = []
    for a in anchors:
        dist = np.sum((s - s[a]) ** 2, axis=1)
        nb = np.argpartition(dist, min(k, len(s) - 1))[:k]
        ds = s[nb] - s[nb].mean(axis=0)
        dz = z[nb] - z[nb].mean(axis=0)
        sv = np.linalg.svd(ds, compute_uv=False)
        if sv.size < s.shape[1] or sv[-1] <= rcond * max(sv[0], 1e-300):
            continue
        jt, *_ = np.linalg.lstsq(ds, dz, rcond=None)
        out.append(jt.T)
    return np.array(out).reshape(-1, z.shape[1], s.shape[1])


def jacobian_probe(factors: np.ndarray, latents: np.ndarray, n_anchors: int = 100,
                   k: int = 50, seed: int = 0) -> float:
    """Share of mean |J| mass on the best latent-to-factor assignment, in [0, 1]."""
    jac = local_jacobians(factors, latents, n_anchors, k, seed)
    if len(jac) == 0:
        raise ValueError("every neighbourhood was rank deficient")
    mean_abs = np.abs(jac).mean(axis=0)
    total = mean_abs.sum()
    if total == 0:
        return 0.0
    rho = hungarian(pad_square(mean_abs))
    d, f = mean_abs.shape
    on = sum(mean_abs[rho[j], j] for j in range(f) if rho[j] < d)
    return float(on / total)
