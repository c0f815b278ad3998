"""Losses and the optimization loop for action-controllable factorization.

Energies ``E[n, j, a]`` score next latent ``j`` after ``(z^n, a)``; the forward
loss contrasts the true next latent against the rest of the batch, the inverse
loss classifies the action, the ratio loss trains ``E(a) - E(a0)`` as a
per-action logistic classifier against the no-op, and the policy loss fits the
behaviour policy used to correct that classifier.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .dataio import Dataset, estimate_policy
from .diffmath import (NonFiniteGradientError, ParamStore, Tensor, adamw_step,
                       clip_by_global_norm, grad, ops, parameter, save_checkpoint)
from .models import AcfModel, ModelConfig

# per-domain optimizer settings and loss weights
DOMAIN_DEFAULTS = {
    "doorkey": dict(lr=4.0966e-4, epochs=100, beta_fwd=97.815, beta_r=25.623, beta_inv=22.094,
                    beta_pi=1.610),
    "taxi": dict(lr=2.9126e-4, epochs=200, beta_fwd=31.444, beta_r=5.018, beta_inv=1.000,
                 beta_pi=9.916),
    "grid2d": dict(lr=2.27497e-4, epochs=200, beta_fwd=95.395, beta_r=48.560, beta_inv=1.000,
                   beta_pi=1.332),
    "fourrooms": dict(lr=3.6392e-4, epochs=200, beta_fwd=40.736, beta_r=16.963, beta_inv=97.365,
                      beta_pi=22.764),
}

ABLATIONS = ("fwd", "inv", "policy", "ratio", "factored-markov")
LOSS_COLUMNS = ("step", "L_r", "L_fwd", "L_inv", "L_pi", "total", "grad_norm")


class TrainingDiverged(FloatingPointError):
    """A loss or gradient went non-finite; carries the offending report."""

    def __init__(self, report: "LossReport", detail: str = ""):
        self.report = report
        msg = (f"non-finite training signal at step {report.step}: L_r={report.L_r} "
               f"L_fwd={report.L_fwd} L_inv={report.L_inv} L_pi={report.L_pi} "
               f"total={report.total} grad_norm={report.grad_norm}")
        super().__init__(msg + (f" ({detail})" if detail else ""))


@dataclass
class AcfConfig:
    beta_r: float = 1.0
    beta_fwd: float = 1.0
    beta_inv: float = 1.0
    beta_pi: float = 1.0
    lr: float = 3e-4
    batch_size: int = 128
    epochs: int = 100
    noise: float = 0.03
    seed: int = 0
    clip_norm: float = 10.0
    weight_decay: float = 1e-4
    inv_prior: str = "learned"  # "learned" (pi_w, stop-gradient) or "empirical"
    head_init: str = "zero"  # "zero" or "prior": output biases start at the marginal fit
    no_fwd: bool = False
    no_inv: bool = False
    no_policy: bool = False
    no_ratio: bool = False
    factored_markov: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 so the batch holds negatives")
        for name in ("beta_r", "beta_fwd", "beta_inv", "beta_pi", "noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.inv_prior not in ("learned", "empirical"):
            raise ValueError(f"inv_prior must be 'learned' or 'empirical', got {self.inv_prior!r}")
        if self.head_init not in ("zero", "prior"):
            raise ValueError(f"head_init must be 'zero' or 'prior', got {self.head_init!r}")

    @classmethod
    def for_domain(cls, name: str, **overrides) -> "AcfConfig":
        return cls(**{**DOMAIN_DEFAULTS[name], **overrides})

    def with_ablation(self, which: str | None) -> "AcfConfig":
        if which in (None, "", "none"):
            return self
        flag = {"fwd": "no_fwd", "inv": "no_inv", "policy": "no_policy", "ratio": "no_ratio",
                "factored-markov": "factored_markov"}.get(which)
        if flag is None:
            raise ValueError(f"unknown ablation {which!r}; choose from {', '.join(ABLATIONS)}")
        return replace(self, **{flag: True})

    @property
    def weights(self) -> dict[str, float]:
        """Effective loss weights after ablation flags."""
        no_ratio = self.no_ratio or self.factored_markov
        no_policy = self.no_policy or self.factored_markov
        return {"L_r": 0.0 if no_ratio else self.beta_r,
                "L_fwd": 0.0 if self.no_fwd else self.beta_fwd,
                "L_inv": 0.0 if self.no_inv else self.beta_inv,
                "L_pi": 0.0 if no_policy else self.beta_pi}

    def to_dict(self):
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class LossReport:
    step: int
    L_r: float = 0.0
    L_fwd: float = 0.0
    L_inv: float = 0.0
    L_pi: float = 0.0
    total: float = 0.0
    grad_norm: float = 0.0

    def row(self) -> list:
        return [getattr(self, c) for c in LOSS_COLUMNS]

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in self.row()[1:])


# ---------------------------------------------------------------- losses

def _cross_entropy(logits: Tensor, actions: np.ndarray) -> Tensor:
    logp = ops.log_softmax(logits, axis=-1)
    picked = ops.gather(logp, np.asarray(actions, dtype=np.int64)[:, None], axis=-1)
    return -ops.mean(picked)


def loss_fwd(table: Tensor, actions) -> Tensor:
    """InfoNCE over next latents: row ``n`` uses ``E[n, :, a^n]``, positive at ``j = n``."""
    n = table.shape[0]
    if n < 2:
        raise ValueError("forward loss needs at least 2 samples")
    actions = np.asarray(actions, dtype=np.int64)
    idx = np.broadcast_to(actions[:, None, None], (n, n, 1))
    scores = ops.reshape(ops.gather(table, idx, axis=2), (n, n))
    logp = ops.log_softmax(scores, axis=-1)
    return -ops.mean(logp[np.arange(n), np.arange(n)])


def loss_inv(energies: Tensor, log_prior, actions) -> Tensor:
    """Action posterior ``prior(a|z) exp(E_nn(a))``; ``log_prior`` receives no gradient.

    ``energies`` is the (N, A) diagonal of the energy table.
    """
    return _cross_entropy(energies + ops.stop_gradient(log_prior), actions)


def loss_ratio(energies: Tensor, actions, zeta) -> Tensor:
    """Per-action logistic classifiers of ``a`` vs the no-op.

    Logit for sample ``n`` and action ``a >= 1`` is ``E_nn(a) - E_nn(a0) + zeta[n, a]``;
    samples taken with ``a`` are positives, every other sample is a negative.
    """
    n, n_actions = energies.shape
    actions = np.asarray(actions, dtype=np.int64)
    log_ratio = energies[:, 1:] - energies[:, :1]
    logits = log_ratio + ops.stop_gradient(np.asarray(zeta)[:, 1:])
    pos = (actions[:, None] == np.arange(1, n_actions)[None, :]).astype(energies.data.dtype)
    ll = pos * ops.log_sigmoid(logits) + (1 - pos) * ops.log_sigmoid(-logits)
    return -ops.sum(ll) / n


def loss_policy(logits: Tensor, actions) -> Tensor:
    return _cross_entropy(logits, actions)


def zeta_from_logits(logits: np.ndarray) -> np.ndarray:
    """``log pi(a|z) - log pi(a0|z)`` for every action (no gradient)."""
    logits = np.asarray(logits)
    return logits - logits[:, :1]


def _log_softmax_np(x):
    x = x - x.max(axis=-1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------- steps

@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    next_obs: np.ndarray

    @classmethod
    def from_dataset(cls, ds: Dataset, idx) -> "Batch":
        return cls(ds.obs[idx], ds.actions[idx], ds.next_obs[idx])


def compute_losses(model: AcfModel, params: dict[str, Tensor], batch: Batch, cfg: AcfConfig,
                   rng: np.random.Generator, log_marginal: np.ndarray | None = None):
    """Forward pass; returns ``(total, parts)`` with inactive parts left out."""
    n = len(batch.actions)
    w = cfg.weights
    frames = np.concatenate([batch.obs, batch.next_obs], axis=0)
    codes = model.encoder(params, frames)
    eps = rng.normal(0.0, cfg.noise, size=codes.shape).astype(codes.data.dtype)
    codes = codes + eps
    z, z_next = codes[:n], codes[n:]

    parts: dict[str, Tensor] = {}
    needs_diag = w["L_r"] > 0 or w["L_inv"] > 0
    diag = None
    if w["L_fwd"] > 0:
        table = model.energy.table(params, z, z_next)
        parts["L_fwd"] = loss_fwd(table, batch.actions)
        if needs_diag:
            diag = table[np.arange(n), np.arange(n)]
    elif needs_diag:
        diag = model.energy.matched(params, z, z_next)

    policy_logits = None
    if w["L_pi"] > 0 or w["L_r"] > 0 or (w["L_inv"] > 0 and cfg.inv_prior == "learned"):
        policy_logits = model.policy(params, ops.stop_gradient(z))
    if w["L_pi"] > 0:
        parts["L_pi"] = loss_policy(policy_logits, batch.actions)
    if w["L_r"] > 0:
        parts["L_r"] = loss_ratio(diag, batch.actions, zeta_from_logits(policy_logits.data))
    if w["L_inv"] > 0:
        if cfg.inv_prior == "learned":
            log_prior = _log_softmax_np(policy_logits.data)
        else:
            if log_marginal is None:
                raise ValueError("inv_prior='empirical' needs the dataset action marginal")
            log_prior = np.broadcast_to(np.asarray(log_marginal, diag.data.dtype),
                                        diag.shape).copy()
        parts["L_inv"] = loss_inv(diag, log_prior, batch.actions)

    total = None
    for name, value in parts.items():
        term = value * w[name]
        total = term if total is None else total + term
    return total, parts


def train_step(model: AcfModel, store: ParamStore, batch: Batch, cfg: AcfConfig,
               rng: np.random.Generator, step: int = 0,
               log_marginal: np.ndarray | None = None) -> tuple[ParamStore, LossReport]:
    """One optimizer step. Returns the new store and the step's loss report."""
    params = {k: parameter(v, k) for k, v in store.params.items()}
    total, parts = compute_losses(model, params, batch, cfg, rng, log_marginal)
    report = LossReport(step=step, **{k: float(v.item()) for k, v in parts.items()})
    if total is None:
        # nothing active: no gradient and no step, so parameters stay put
        return store, report
    report.total = float(total.item())
    if not math.isfinite(report.total):
        raise TrainingDiverged(report, "loss")
    grads = grad(total, params)
    grads, norm = clip_by_global_norm(grads, cfg.clip_norm)
    report.grad_norm = norm
    try:
        new = adamw_step(store, grads, cfg.lr, weight_decay=cfg.weight_decay)
    except NonFiniteGradientError as exc:
        raise TrainingDiverged(report, str(exc)) from exc
    return new, report


# ---------------------------------------------------------------- loop

def epoch_order(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Minibatch indices for one epoch, a pure function of ``(seed, epoch)``.

    Every batch has exactly ``batch_size`` rows; the last one wraps around to the
    start of the permutation when ``n`` is not a multiple of the batch size.
    """
    perm = np.random.default_rng([seed, epoch, 1]).permutation(n)
    steps = -(-n // batch_size)
    padded = np.resize(perm, steps * batch_size)
    return [padded[i * batch_size:(i + 1) * batch_size] for i in range(steps)]


@dataclass
class TrainResult:
    store: ParamStore
    reports: list[LossReport] = field(default_factory=list)
    model: AcfModel | None = None


def write_loss_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for r in reports:
            w.writerow([r.step] + [repr(float(v)) for v in r.row()[1:]])


def prior_energy_biases(log_marginal: np.ndarray, beta_r: float, beta_inv: float,
                        iters: int = 4000) -> np.ndarray:
    """Per-action constants ``c`` minimizing the expected ``beta_r*L_r + beta_inv*L_inv``
    when energies ignore the state, with the policy at the action marginal ``p``.

    Alone, the ratio loss wants ``c_a - c_0 = log(p_0 / (1 - p_a))`` (its logits carry
    a class-imbalance offset) while the inverse loss wants all ``c_a`` equal; the
    compromise is found by gradient descent on the convex sum.  Returned centred.
    """
    p = np.exp(np.asarray(log_marginal, np.float64))
    p = p / p.sum()
    zeta = np.log(p[1:]) - np.log(p[0])
    c = np.zeros(len(p))
    if beta_r == 0:
        return c
    step = 1.0 / (0.25 * beta_r * len(p) + beta_inv)  # below 1/L for the summed curvature
    for _ in range(iters):
        s = 1.0 / (1.0 + np.exp(-(c[1:] - c[0] + zeta)))
        g_d = beta_r * (s - p[1:])
        g = np.concatenate([[-g_d.sum()], g_d])
        e = np.exp(c + np.log(p) - np.max(c + np.log(p)))
        g += beta_inv * (e / e.sum() - p)
        c -= step * g
    return c - c.mean()


def apply_head_init(model: AcfModel, params: dict, log_marginal: np.ndarray,
                    cfg: "AcfConfig") -> dict:
    """Copy of ``params`` with energy and policy output biases set for ``head_init='prior'``."""
    out = dict(params)
    if cfg.head_init == "zero":
        return out
    w = cfg.weights
    c = prior_energy_biases(log_marginal, w["L_r"], w["L_inv"])
    k = model.cfg.latent_dim
    for i in range(k):
        name = model.energy.names(i)[3]
        out[name] = (c / k).astype(params[name].dtype)
    name = f"{model.policy.prefix}/out/b"
    lp = np.asarray(log_marginal, np.float64)
    out[name] = (lp - lp.mean()).astype(params[name].dtype)
    return out


def train(dataset: Dataset, cfg: AcfConfig, model_cfg: ModelConfig | None = None,
          out_dir=None, log_every: int = 0, log=print) -> TrainResult:
    """Run ``cfg.epochs`` passes; writes ``checkpoint.acfw`` and ``losses.csv`` to ``out_dir``."""
    if len(dataset) < cfg.batch_size:
        raise ValueError(f"dataset of {len(dataset)} records is smaller than one batch "
                         f"({cfg.batch_size})")
    model_cfg = model_cfg or ModelConfig.for_domain(dataset.spec.name)
    if model_cfg.n_actions != dataset.spec.n_actions:
        raise ValueError(f"model has {model_cfg.n_actions} actions, dataset "
                         f"{dataset.spec.n_actions}")
    model = AcfModel(model_cfg)
    log_marginal = np.log(estimate_policy(dataset).probs)
    store = ParamStore(apply_head_init(model, model.init(cfg.seed), log_marginal, cfg))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    reports: list[LossReport] = []
    step = 0

    def checkpoint():
        if out is not None:
            save_checkpoint(out / "checkpoint.acfw", store.params)
            write_loss_csv(out / "losses.csv", reports)

    checkpoint()
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch, 2])
        for idx in epoch_order(len(dataset), cfg.batch_size, cfg.seed, epoch):
            try:
                store, report = train_step(model, store, Batch.from_dataset(dataset, idx), cfg,
                                           rng, step, log_marginal)
            except TrainingDiverged as exc:
                reports.append(exc.report)
                checkpoint()
                raise
            reports.append(report)
            step += 1
            if log_every and step % log_every == 0:
                log(f"epoch {epoch} step {step} total {report.total:.4f} "
                    f"fwd {report.L_fwd:.4f} r {report.L_r:.4f} inv {report.L_inv:.4f} "
                    f"pi {report.L_pi:.4f}")
        checkpoint()
    return TrainResult(store, reports, model)
