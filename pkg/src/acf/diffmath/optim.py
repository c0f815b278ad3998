"""AdamW with decoupled weight decay over a flat store of named arrays."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or inf; the optimizer step was not applied."""

    def __init__(self, names):
        self.names = list(names)
        super().__init__(f"non-finite gradient for {', '.join(self.names)}")


@dataclass
class ParamStore:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p))
            self.v.setdefault(name, np.zeros_like(p))

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "ParamStore":
        return ParamStore({k: p.copy() for k, p in self.params.items()},
                          {k: a.copy() for k, a in self.m.items()},
                          {k: a.copy() for k, a in self.v.items()}, self.t)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_by_global_norm(grads, max_norm: float):
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: (g * scale).astype(g.dtype) for k, g in grads.items()}, norm


def adamw_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float,
               betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 1e-4,
               frozen=()) -> ParamStore:
    """One AdamW update; returns a new store and leaves ``store`` untouched.

    Decay is decoupled: ``p <- p - lr * wd * p`` is applied independently of the
    bias-corrected adaptive step. Names in ``frozen`` are carried over as is.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if set(grads) != set(store.params):
        missing = set(store.params) ^ set(grads)
        raise KeyError(f"gradient keys do not match parameters: {sorted(missing)}")
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(bad)
    b1, b2 = betas
    t = store.t + 1
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    params, ms, vs = {}, {}, {}
    for name, p in store.params.items():
        if name in frozen:
            params[name], ms[name], vs[name] = p, store.m[name], store.v[name]
            continue
        g = grads[name]
        m = b1 * store.m[name] + (1 - b1) * g
        v = b2 * store.v[name] + (1 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        new = p - lr * weight_decay * p - lr * update
        params[name] = new.astype(p.dtype, copy=False)
        ms[name] = m.astype(p.dtype, copy=False)
        vs[name] = v.astype(p.dtype, copy=False)
    return ParamStore(params, ms, vs, t)
