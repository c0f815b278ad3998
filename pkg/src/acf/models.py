"""Encoder, per-factor energy heads and policy head.

Parameters live in flat ``name -> array`` dicts so that they can be handed to
:class:`~acf.diffmath.ParamStore` and written to ACFW checkpoints directly.
Forward functions take the same names mapped to :class:`Tensor` leaves.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .diffmath import Tensor, ops

# (latent_dim, n_actions) per domain
DOMAIN_SIZES = {"doorkey": (7, 10), "taxi": (6, 6), "grid2d": (2, 5), "fourrooms": (5, 10)}


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int
    n_actions: int
    encoder: str = "conv"  # "conv" or "mlp"
    base_depth: int = 24
    min_res: int = 4
    mlp_width: int = 256
    energy_hidden: int = 256
    policy_hidden: int = 256
    weight_gain: float = 1.0

    @classmethod
    def for_domain(cls, name: str, **overrides) -> "ModelConfig":
        d, n_a = DOMAIN_SIZES[name]
        return cls(latent_dim=d, n_actions=n_a, **overrides)

    def to_dict(self):
        return asdict(self)


def orthogonal(rng: np.random.Generator, shape, gain: float = 1.0) -> np.ndarray:
    """Orthogonal init over the (fan_in, fan_out) matricization of ``shape``."""
    fan_out = shape[-1]
    fan_in = int(np.prod(shape[:-1]))
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    # orthonormal rows/cols, rescaled so a unit-variance input keeps unit variance per unit
    scale = gain * np.sqrt(max(1.0, fan_out / fan_in))
    return (scale * q[:fan_in, :fan_out]).reshape(shape).astype(np.float32)


def _linear(rng, prefix, n_in, n_out, gain, zero=False):
    w = np.zeros((n_in, n_out), np.float32) if zero else orthogonal(rng, (n_in, n_out), gain)
    return {f"{prefix}/w": w, f"{prefix}/b": np.zeros(n_out, np.float32)}


def _apply_linear(p, prefix, x):
    return x @ p[f"{prefix}/w"] + p[f"{prefix}/b"]


# ---------------------------------------------------------------- encoder

def pixels_to_input(x_u8: np.ndarray) -> np.ndarray:
    """u8 frames (B, 32, 32, 3) to floats in [-1, 1]."""
    return x_u8.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def position_channels(h: int, w: int) -> np.ndarray:
    ys, xs = np.meshgrid(np.linspace(-1, 1, h, dtype=np.float32),
                         np.linspace(-1, 1, w, dtype=np.float32), indexing="ij")
    return np.stack([xs, ys], axis=-1)


class Encoder:
    """Residual conv trunk (or a flat MLP) followed by a Tanh latent head."""

    def __init__(self, cfg: ModelConfig, prefix: str = "encoder"):
        self.cfg = cfg
        self.prefix = prefix
        depths, res = [], 32
        depth = cfg.base_depth
        while res > cfg.min_res:
            depths.append(depth)
            res //= 2
            depth *= 2
        self.depths = depths
        self.final_res = res

    def init(self, rng) -> dict[str, np.ndarray]:
        c, p, g = self.cfg, self.prefix, self.cfg.weight_gain
        params = {}
        if c.encoder == "conv":
            cin = 5
            for i, depth in enumerate(self.depths):
                params[f"{p}/block{i}/conv/w"] = orthogonal(rng, (3, 3, cin, depth), g)
                params[f"{p}/block{i}/conv/b"] = np.zeros(depth, np.float32)
                params[f"{p}/block{i}/norm/g"] = np.ones(depth, np.float32)
                params.update(_linear(rng, f"{p}/block{i}/res_a", depth, depth, g))
                params.update(_linear(rng, f"{p}/block{i}/res_b", depth, depth, g))
                cin = depth
            flat = self.final_res * self.final_res * cin
        elif c.encoder == "mlp":
            flat = 32 * 32 * 3
        else:
            raise ValueError(f"unknown encoder type {c.encoder!r}")
        params.update(_linear(rng, f"{p}/mlp0", flat, c.mlp_width, g))
        params.update(_linear(rng, f"{p}/mlp1", c.mlp_width, c.mlp_width, g))
        params.update(_linear(rng, f"{p}/out", c.mlp_width, c.latent_dim, g))
        return params

    def __call__(self, params, x_u8: np.ndarray) -> Tensor:
        x_u8 = np.asarray(x_u8)
        if x_u8.ndim != 4 or x_u8.shape[1:] != (32, 32, 3):
            raise ValueError(f"encoder expects (B, 32, 32, 3) frames, got {x_u8.shape}")
        p, n = self.prefix, len(x_u8)
        x = pixels_to_input(x_u8)
        if self.cfg.encoder == "conv":
            pos = np.broadcast_to(position_channels(32, 32), (n, 32, 32, 2))
            h = Tensor(np.concatenate([x, pos], axis=-1))
            for i in range(len(self.depths)):
                b = f"{p}/block{i}"
                h = ops.conv2d(h, params[f"{b}/conv/w"], params[f"{b}/conv/b"], stride=2,
                               padding=1)
                h = ops.silu(ops.rms_norm(h, params[f"{b}/norm/g"]))
                r = ops.silu(_apply_linear(params, f"{b}/res_a", h))
                h = h + _apply_linear(params, f"{b}/res_b", r)
            h = ops.reshape(h, (n, -1))
        else:
            h = Tensor(x.reshape(n, -1))
        h = ops.silu(_apply_linear(params, f"{p}/mlp0", h))
        h = ops.silu(_apply_linear(params, f"{p}/mlp1", h))
        return ops.tanh(_apply_linear(params, f"{p}/out", h))


# ---------------------------------------------------------------- energies

class EnergyHeads:
    """``K = latent_dim`` heads; head k maps ``[z ; z'_k]`` to one energy per action."""

    def __init__(self, cfg: ModelConfig, prefix: str = "energy"):
        self.cfg = cfg
        self.prefix = prefix

    def names(self, k: int) -> tuple[str, str, str, str]:
        base = f"{self.prefix}/k{k}"
        return f"{base}/hidden/w", f"{base}/hidden/b", f"{base}/out/w", f"{base}/out/b"

    def init(self, rng) -> dict[str, np.ndarray]:
        c = self.cfg
        params = {}
        for k in range(c.latent_dim):
            w1, b1, w2, b2 = self.names(k)
            params[w1] = orthogonal(rng, (c.latent_dim + 1, c.energy_hidden), c.weight_gain)
            params[b1] = np.zeros(c.energy_hidden, np.float32)
            params[w2] = np.zeros((c.energy_hidden, c.n_actions), np.float32)
            params[b2] = np.zeros(c.n_actions, np.float32)
        return params

    def _split(self, params, k, z, z_next):
        w1, b1, _, _ = self.names(k)
        d = self.cfg.latent_dim
        rows = z @ params[w1][:d] + params[b1]
        cols = z_next[:, k:k + 1] @ params[w1][d:]
        return rows, cols

    def head_table(self, params, k, z, z_next) -> Tensor:
        """(B, B, A) table of head k: entry (i, j, a) scores ``z'^j_k`` after ``(z^i, a)``."""
        _, _, w2, b2 = self.names(k)
        rows, cols = self._split(params, k, z, z_next)
        return ops.pairwise_silu_linear(rows, cols, params[w2], params[b2])

    def table(self, params, z, z_next) -> Tensor:
        """``E[i, j, a] = sum_k head_k(z'^j_k, a, z^i)`` for all pairs in one pass."""
        total = None
        for k in range(self.cfg.latent_dim):
            t = self.head_table(params, k, z, z_next)
            total = t if total is None else total + t
        return total

    def matched(self, params, z, z_next) -> Tensor:
        """(B, A) energies of the aligned pairs only, i.e. the table's diagonal."""
        total = None
        for k in range(self.cfg.latent_dim):
            _, _, w2, b2 = self.names(k)
            rows, cols = self._split(params, k, z, z_next)
            e = ops.silu(rows + cols) @ params[w2] + params[b2]
            total = e if total is None else total + e
        return total

    def scalar(self, params, k: int, z_i: np.ndarray, zk_next: float, a: int) -> float:
        """Single energy ``head_k(z'_k, a, z)`` evaluated with plain numpy."""
        w1, b1, w2, b2 = (np.asarray(params[n].data if isinstance(params[n], Tensor)
                                     else params[n], dtype=np.float64) for n in self.names(k))
        x = np.concatenate([np.asarray(z_i, np.float64), [zk_next]])
        h = x @ w1 + b1
        h = h / (1 + np.exp(-h))
        return float(h @ w2[:, a] + b2[a])


# ---------------------------------------------------------------- policy

class PolicyHead:
    def __init__(self, cfg: ModelConfig, prefix: str = "policy"):
        self.cfg = cfg
        self.prefix = prefix

    def init(self, rng):
        c, p = self.cfg, self.prefix
        params = {}
        params.update(_linear(rng, f"{p}/l0", c.latent_dim, c.policy_hidden, c.weight_gain))
        params.update(_linear(rng, f"{p}/l1", c.policy_hidden, c.policy_hidden, c.weight_gain))
        params.update(_linear(rng, f"{p}/out", c.policy_hidden, c.n_actions, 1.0, zero=True))
        return params

    def __call__(self, params, z) -> Tensor:
        p = self.prefix
        h = ops.silu(_apply_linear(params, f"{p}/l0", z))
        h = ops.silu(_apply_linear(params, f"{p}/l1", h))
        return _apply_linear(params, f"{p}/out", h)


class AcfModel:
    """Encoder + energy heads + policy head sharing one parameter namespace."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.energy = EnergyHeads(cfg)
        self.policy = PolicyHead(cfg)

    def init(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng([seed, 0x0ACF])
        params = {}
        params.update(self.encoder.init(rng))
        params.update(self.energy.init(rng))
        params.update(self.policy.init(rng))
        return params

    def encode_numpy(self, params: dict[str, np.ndarray], frames: np.ndarray,
                     batch_size: int = 512) -> np.ndarray:
        """Latent codes for many frames without recording a graph."""
        wrapped = {k: Tensor(v) for k, v in params.items() if k.startswith("encoder/")}
        out = [self.encoder(wrapped, frames[i:i + batch_size]).data
               for i in range(0, len(frames), batch_size)]
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.cfg.latent_dim),
                                                              np.float32)


def encode(enc: Encoder, params, x_u8: np.ndarray) -> Tensor:
    return enc(params, x_u8)


def energy_all(heads: EnergyHeads, params, z, z_next) -> Tensor:
    return heads.table(params, z, z_next)


def policy_logits(head: PolicyHead, params, z) -> Tensor:
    return head(params, z)
