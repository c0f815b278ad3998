"""Transition datasets: collection, ACFD files and behaviour-policy estimates.

ACFD layout (little-endian): magic ``ACFD``, version ``u32`` = 1, env name
(``u16`` length + UTF-8 bytes), ``n_actions u32``, ``K_gt u32``, obs dims
``u32 x 3``, record count ``u64``, then packed records of
``obs u8[H*W*C], action u8, next_obs u8[H*W*C], gt f32[K], next_gt f32[K]``.
Collection seed and policy live in a ``<file>.meta.json`` sidecar.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envs import Env, EnvSpec, make_env

MAGIC = b"ACFD"
VERSION = 1
EPISODE_LENGTH = 64


class DatasetError(ValueError):
    pass


class DatasetFormatError(DatasetError):
    pass


class DatasetVersionError(DatasetError):
    pass


class DatasetTruncatedError(DatasetError):
    def __init__(self, message, record_index):
        super().__init__(message)
        self.record_index = record_index


@dataclass(frozen=True)
class TransitionRecord:
    obs: np.ndarray
    action: int
    next_obs: np.ndarray
    gt: np.ndarray
    next_gt: np.ndarray


@dataclass
class Dataset:
    spec: EnvSpec
    obs: np.ndarray
    actions: np.ndarray
    next_obs: np.ndarray
    gt: np.ndarray
    next_gt: np.ndarray
    seed: int | None = None
    policy: str | None = None

    def __post_init__(self):
        n = len(self.actions)
        for name in ("obs", "next_obs", "gt", "next_gt"):
            if len(getattr(self, name)) != n:
                raise DatasetError(f"{name} has {len(getattr(self, name))} rows, expected {n}")
        if self.obs.shape[1:] != tuple(self.spec.obs_shape) or self.obs.shape != self.next_obs.shape:
            raise DatasetError(f"observation shapes {self.obs.shape} / {self.next_obs.shape} "
                               f"do not match {self.spec.obs_shape}")
        if self.gt.shape[1:] != (self.spec.k_gt,):
            raise DatasetError(f"ground truth has {self.gt.shape[1:]} factors, spec says "
                               f"{self.spec.k_gt}")

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, i) -> TransitionRecord:
        return TransitionRecord(self.obs[i], int(self.actions[i]), self.next_obs[i], self.gt[i],
                                self.next_gt[i])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.spec, self.obs[idx], self.actions[idx], self.next_obs[idx],
                       self.gt[idx], self.next_gt[idx], self.seed, self.policy)

    def equals(self, other: "Dataset") -> bool:
        return (self.spec == other.spec and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("obs", "actions", "next_obs", "gt", "next_gt")))


# ---------------------------------------------------------------- policies

def parse_policy(descriptor: str, n_actions: int) -> np.ndarray:
    """Action distribution for ``uniform`` or ``weights:w0,w1,...``."""
    descriptor = descriptor.strip()
    if descriptor == "uniform":
        return np.full(n_actions, 1.0 / n_actions)
    if descriptor.startswith("weights:"):
        w = np.array([float(v) for v in descriptor[len("weights:"):].split(",")])
        if len(w) != n_actions or np.any(w < 0) or w.sum() <= 0:
            raise ValueError(f"policy weights {descriptor!r} invalid for {n_actions} actions")
        return w / w.sum()
    raise ValueError(f"unknown policy descriptor {descriptor!r}")


def collect(env: Env | str, n: int, policy: str = "uniform", seed: int = 0,
            episode_length: int = EPISODE_LENGTH) -> Dataset:
    """Roll out ``n`` transitions in episodes of ``episode_length`` steps.

    Episode ``e`` draws its reset and actions from ``default_rng([seed, e])`` so
    episodes can be generated independently and in any order.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if isinstance(env, str):
        env = make_env(env)
    probs = parse_policy(policy, env.spec.n_actions)
    k = env.spec.k_gt
    obs = np.empty((n, *env.spec.obs_shape), dtype=np.uint8)
    next_obs = np.empty_like(obs)
    actions = np.empty(n, dtype=np.uint8)
    gt = np.empty((n, k), dtype=np.float32)
    next_gt = np.empty_like(gt)
    t = 0
    episode = 0
    while t < n:
        rng = np.random.default_rng([seed, episode])
        s = env.reset(rng)
        frame = env.render(s)
        steps = min(episode_length, n - t)
        acts = rng.choice(env.spec.n_actions, size=steps, p=probs)
        for a in acts:
            nxt = env.step(s, int(a))
            nxt_frame = env.render(nxt)
            obs[t], actions[t], next_obs[t] = frame, a, nxt_frame
            gt[t], next_gt[t] = env.ground_truth(s), env.ground_truth(nxt)
            s, frame = nxt, nxt_frame
            t += 1
        episode += 1
    return Dataset(env.spec, obs, actions, next_obs, gt, next_gt, seed=seed, policy=policy)


# ---------------------------------------------------------------- files

def _record_dtype(obs_shape, k):
    return np.dtype([("obs", "u1", obs_shape), ("action", "u1"), ("next_obs", "u1", obs_shape),
                     ("gt", "<f4", (k,)), ("next_gt", "<f4", (k,))])


def _meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def save(ds: Dataset, path) -> None:
    spec = ds.spec
    name = spec.name.encode("utf-8")
    header = b"".join([MAGIC, struct.pack("<I", VERSION), struct.pack("<H", len(name)), name,
                       struct.pack("<II", spec.n_actions, spec.k_gt),
                       struct.pack("<3I", *spec.obs_shape), struct.pack("<Q", len(ds))])
    rec = np.empty(len(ds), dtype=_record_dtype(spec.obs_shape, spec.k_gt))
    rec["obs"], rec["action"], rec["next_obs"] = ds.obs, ds.actions, ds.next_obs
    rec["gt"], rec["next_gt"] = ds.gt, ds.next_gt
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())
    meta = {"env": spec.name, "n": len(ds), "seed": ds.seed, "policy": ds.policy}
    _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load(path, audit: bool = False) -> Dataset:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    try:
        (version,) = struct.unpack_from("<I", buf, 4)
        if version != VERSION:
            raise DatasetVersionError(f"{path}: unsupported version {version}")
        (nlen,) = struct.unpack_from("<H", buf, 8)
        pos = 10
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        n_actions, k = struct.unpack_from("<II", buf, pos)
        pos += 8
        obs_shape = struct.unpack_from("<3I", buf, pos)
        pos += 12
        (n,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
    except struct.error:
        raise DatasetTruncatedError(f"{path}: truncated header", record_index=None) from None
    spec = make_env(name).spec
    if spec.n_actions != n_actions or spec.k_gt != k or tuple(spec.obs_shape) != obs_shape:
        raise DatasetFormatError(f"{path}: header ({n_actions} actions, {k} factors, obs "
                                 f"{obs_shape}) disagrees with env {name!r}")
    dtype = _record_dtype(obs_shape, k)
    available = (len(buf) - pos) // dtype.itemsize
    if available < n:
        raise DatasetTruncatedError(
            f"{path}: truncated at record {available} of {n}", record_index=available)
    rec = np.frombuffer(buf, dtype=dtype, count=n, offset=pos)
    seed = policy = None
    meta = _meta_path(path)
    if meta.exists():
        info = json.loads(meta.read_text())
        seed, policy = info.get("seed"), info.get("policy")
    ds = Dataset(spec, rec["obs"].copy(), rec["action"].copy(), rec["next_obs"].copy(),
                 rec["gt"].copy(), rec["next_gt"].copy(), seed=seed, policy=policy)
    if audit:
        audit_rendering(ds)
    return ds


def audit_rendering(ds: Dataset, env: Env | None = None, limit: int | None = None) -> None:
    """Check ``render(gt) == obs`` for every stored frame."""
    env = env or make_env(ds.spec.name)
    n = len(ds) if limit is None else min(limit, len(ds))
    for i in range(n):
        for gt, frame, which in ((ds.gt[i], ds.obs[i], "obs"),
                                 (ds.next_gt[i], ds.next_obs[i], "next_obs")):
            if not np.array_equal(env.render(gt), frame):
                raise DatasetError(f"record {i}: {which} does not match render(gt)")


# ---------------------------------------------------------------- policy estimate

@dataclass(frozen=True)
class EmpiricalPolicy:
    counts: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        c = self.counts.astype(np.float64) + 1.0
        return c / c.sum()

    def zeta(self) -> np.ndarray:
        """``log(pi(a) / pi(a0))`` for every action."""
        p = self.probs
        return np.log(p) - np.log(p[0])

    def total_variation(self, other: np.ndarray) -> float:
        return 0.5 * float(np.abs(self.probs - np.asarray(other)).sum())


def estimate_policy(ds: Dataset) -> EmpiricalPolicy:
    """Add-one smoothed marginal action frequencies."""
    if len(ds) == 0:
        raise DatasetError("cannot estimate a policy from an empty dataset")
    return EmpiricalPolicy(np.bincount(ds.actions, minlength=ds.spec.n_actions))


def action_frequencies(ds: Dataset) -> np.ndarray:
    return np.bincount(ds.actions, minlength=ds.spec.n_actions) / len(ds)
