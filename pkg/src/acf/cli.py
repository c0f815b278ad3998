"""Command line: ``acf collect | train | eval | traverse | ablate``.

Exit codes: 0 success, 2 usage or configuration problem, 3 training diverged,
4 file-system or dataset I/O failure. Every command writes a ``manifest.json``
holding its resolved arguments and git-style blob hashes of its inputs and
outputs, so two runs with the same flags produce the same manifest.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import shlex
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataio
from .config import ConfigError, RunConfig, builtin_configs, load_config, parse_config
from .diffmath import CheckpointError, load_checkpoint
from .envs import ENVS
from .evaluation import (RegressorConfig, aggregate, fit_regressors, jacobian_probe, score_row,
                         scores, traversal_grid, traversal_image, write_heatmap,
                         write_matrix_csv, write_scores_csv)
from .imageio import write_image
from .models import AcfModel, ModelConfig
from .training import ABLATIONS, AcfConfig, TrainingDiverged, train

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
PROBE_ENVS = ("grid2d",)  # only fully continuous ground truth has local Jacobians


class UsageError(Exception):
    """Bad flags or inputs that do not fit together (exit 2)."""


# ---------------------------------------------------------------- manifests

def blob_sha1(data: bytes) -> str:
    """Same digest ``git hash-object`` gives for a file with this content."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def file_hash(path) -> str:
    return blob_sha1(Path(path).read_bytes())


def write_manifest(out_dir, command: str, args: dict, inputs=(), outputs=(), extra=None,
                   name="manifest.json"):
    out_dir = Path(out_dir)
    doc = {"command": command, "args": args,
           "inputs": {str(p): file_hash(p) for p in inputs},
           "outputs": {str(Path(p).relative_to(out_dir)) if Path(p).is_relative_to(out_dir)
                       else str(p): file_hash(p) for p in outputs}}
    if extra:
        doc.update(extra)
    path = out_dir / name
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


# ---------------------------------------------------------------- helpers

def _env_name(name: str) -> str:
    if name not in ENVS:
        raise UsageError(f"unknown env {name!r}; available envs: {', '.join(sorted(ENVS))}")
    return name


def _apply_overrides(cfg: RunConfig, pairs: list[str]) -> RunConfig:
    """``section.key=value`` overrides, validated like config-file lines."""
    if not pairs:
        return cfg
    text = cfg.to_text()  # re-parse so overrides get the same validation as files
    extra: dict[str, list[str]] = {}
    for item in pairs:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        section, name = key.split(".", 1)
        extra.setdefault(section.strip(), []).append(f"{name.strip()} = {value.strip()}")
    return parse_config("\n".join(_merge_sections(text.splitlines(), extra)), path="<--set>")


def _merge_sections(lines, extra):
    out, current, seen = [], None, set()
    keys = {s: {v.split("=", 1)[0].strip() for v in vals} for s, vals in extra.items()}
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            if current in extra and current not in seen:
                out.extend(extra[current])
                seen.add(current)
            current = stripped[1:-1]
            out.append(line)
            continue
        key = stripped.split("=", 1)[0].strip() if "=" in stripped else None
        if current in keys and key in keys[current]:
            continue  # replaced by the override
        out.append(line)
    if current in extra and current not in seen:
        out.extend(extra[current])
        seen.add(current)
    for section, vals in extra.items():
        if section not in seen:
            out.append(f"[{section}]")
            out.extend(vals)
    return out


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    cfg = _apply_overrides(cfg, getattr(args, "set", None) or [])
    if getattr(args, "dataset", None):
        cfg.dataset = args.dataset
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "seeds", None):
        cfg.seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    return cfg


def _load_dataset(path, env: str | None = None) -> dataio.Dataset:
    ds = dataio.load(path)
    if env is not None and ds.spec.name != env:
        raise UsageError(f"dataset {path} holds {ds.spec.name!r} transitions, "
                         f"config wants {env!r}")
    return ds


def _write_model_json(path, env: str, model_cfg: ModelConfig, train_cfg: AcfConfig, ablation):
    doc = {"env": env, "model": model_cfg.to_dict(), "train": train_cfg.to_dict(),
           "ablation": ablation or "none"}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _resolve_checkpoint(path) -> tuple[Path, dict]:
    """Accepts a run directory or a checkpoint file; returns the file and its model.json."""
    path = Path(path)
    ckpt = path / "checkpoint.acfw" if path.is_dir() else path
    meta_path = ckpt.parent / "model.json"
    if not ckpt.is_file():
        raise UsageError(f"no checkpoint at {ckpt}; run `acf train` first")
    if not meta_path.is_file():
        raise UsageError(f"{meta_path} is missing; the checkpoint was not written by `acf train`")
    return ckpt, json.loads(meta_path.read_text())


def _load_model(path, ds: dataio.Dataset | None = None):
    ckpt, meta = _resolve_checkpoint(path)
    model_cfg = ModelConfig(**meta["model"])
    if ds is not None:
        if meta["env"] != ds.spec.name or model_cfg.n_actions != ds.spec.n_actions:
            raise UsageError(f"checkpoint {ckpt} was trained on {meta['env']!r} "
                             f"({model_cfg.n_actions} actions) but the dataset is "
                             f"{ds.spec.name!r} ({ds.spec.n_actions} actions)")
    model = AcfModel(model_cfg)
    params = load_checkpoint(ckpt)
    expected = model.init(0)
    missing = sorted(set(expected) - set(params))
    if missing or any(params[k].shape != expected[k].shape for k in expected):
        raise UsageError(f"checkpoint {ckpt} does not match its model.json "
                         f"(missing or reshaped: {', '.join(missing[:3]) or 'shapes'})")
    return model, params, ckpt, meta


def _seed_dir(out, seed) -> Path:
    return Path(out) / f"seed{seed}"


# ---------------------------------------------------------------- commands

def cmd_collect(args) -> int:
    env = _env_name(args.env)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = dataio.collect(env, args.steps, policy=args.policy, seed=args.seed,
                        episode_length=args.episode_length)
    dataio.save(ds, out)
    freq = dataio.action_frequencies(ds)
    print(f"wrote {len(ds)} {env} transitions to {out}")
    for name, f in zip(ds.spec.action_names, freq):
        print(f"  {name:<12s} {f:.4f}")
    if args.manifest:
        write_manifest(out.parent, "collect", vars_of(args), outputs=[out],
                       extra={"action_frequencies": [float(f) for f in freq]},
                       name=out.name + ".manifest.json")
    return EXIT_OK


def vars_of(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def _train_one(cfg: RunConfig, ds, seed: int, ablation, out_dir: Path, log_every: int):
    train_cfg = replace(cfg.train, seed=seed).with_ablation(ablation)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_model_json(out_dir / "model.json", cfg.env, cfg.model, train_cfg, ablation)
    (out_dir / "config.cfg").write_text(replace(cfg, train=train_cfg, seeds=[seed]).to_text())
    log = (lambda msg: print(f"[seed {seed}] {msg}", flush=True)) if log_every else print
    try:
        train(ds, train_cfg, cfg.model, out_dir=out_dir, log_every=log_every, log=log)
    finally:
        outputs = [p for p in (out_dir / "checkpoint.acfw", out_dir / "losses.csv",
                               out_dir / "model.json", out_dir / "config.cfg") if p.exists()]
        write_manifest(out_dir, "train", {"seed": seed, "ablation": ablation or "none"},
                       inputs=[cfg.dataset], outputs=outputs,
                       extra={"config": replace(cfg, train=train_cfg, seeds=[seed]).to_dict()})


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    if args.epochs is not None:
        cfg.train = replace(cfg.train, epochs=args.epochs)
    ds = _load_dataset(cfg.dataset, cfg.env)
    out = Path(cfg.out)
    for seed in cfg.seeds:
        _train_one(cfg, ds, seed, args.ablate, _seed_dir(out, seed), args.log_every)
        print(f"trained seed {seed} -> {_seed_dir(out, seed)}")
    return EXIT_OK


def evaluate_checkpoints(checkpoints, ds: dataio.Dataset, out_dir, method="acf", pairs=5000,
                         split_seed=0, epochs=200, probe=None, log=print):
    """R^2 matrices per checkpoint plus their aggregate; returns a summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = min(pairs, len(ds))
    frames, factors = ds.obs[:n], ds.gt[:n]
    probe = ds.spec.name in PROBE_ENVS if probe is None else probe
    reg_cfg = RegressorConfig(epochs=epochs)
    matrices, per_seed, outputs = [], [], []
    for i, path in enumerate(checkpoints):
        model, params, ckpt, meta = _load_model(path, ds)
        codes = model.encode_numpy(params, frames)
        m = fit_regressors(codes, factors, split_seed=split_seed, cfg=reg_cfg)
        matrices.append(m)
        s = scores(m)
        entry = {"checkpoint": str(ckpt), "diag_score": s.diag_score,
                 "offdiag_score": s.offdiag_score, "permutation": list(s.permutation)}
        if probe:
            entry["jacobian_diagonality"] = jacobian_probe(factors, codes, seed=split_seed)
        per_seed.append(entry)
        name = "r2.csv" if len(checkpoints) == 1 else f"r2_seed{_seed_label(ckpt, i)}.csv"
        rows = [f"z{k}" for k in range(codes.shape[1])]
        write_matrix_csv(out / name, m.values, rows, ds.spec.factor_names)
        outputs.append(out / name)
        log(f"{ckpt}: diag {s.diag_score:.3f} offdiag {s.offdiag_score:.3f}"
            + (f" probe {entry['jacobian_diagonality']:.3f}" if probe else ""))
    mean, std = aggregate(matrices)
    rows = [f"z{k}" for k in range(mean.shape[0])]
    write_matrix_csv(out / "r2_mean.csv", mean, rows, ds.spec.factor_names)
    write_matrix_csv(out / "r2_std.csv", std, rows, ds.spec.factor_names)
    row = score_row(method, matrices)
    write_scores_csv(out / "scores.csv", [row])
    write_heatmap(out / "r2_mean.ppm", np.clip(mean, 0, 1))
    (out / "per_seed.json").write_text(json.dumps(per_seed, indent=2, sort_keys=True) + "\n")
    outputs += [out / f for f in ("r2_mean.csv", "r2_std.csv", "scores.csv", "r2_mean.ppm",
                                  "per_seed.json")]
    return {"row": row, "per_seed": per_seed, "matrices": matrices, "outputs": outputs}


def _seed_label(ckpt: Path, index: int) -> str:
    name = ckpt.parent.name
    return name[4:] if name.startswith("seed") and name[4:].isdigit() else str(index)


def cmd_eval(args) -> int:
    ds = _load_dataset(args.dataset)
    result = evaluate_checkpoints(args.checkpoints, ds, args.out, method=args.method,
                                  pairs=args.pairs, split_seed=args.split_seed,
                                  epochs=args.epochs, probe=args.probe)
    row = result["row"]
    print(f"{row['method']}: diag {row['diag_mean']:.3f} +- {row['diag_std']:.3f}, "
          f"offdiag {row['offdiag_mean']:.3f} +- {row['offdiag_std']:.3f}")
    inputs = [args.dataset] + [_resolve_checkpoint(c)[0] for c in args.checkpoints]
    write_manifest(args.out, "eval", vars_of(args), inputs=inputs, outputs=result["outputs"])
    return EXIT_OK


def cmd_traverse(args) -> int:
    ds = _load_dataset(args.dataset)
    model, params, ckpt, _ = _load_model(args.checkpoint, ds)
    n = min(args.pairs, len(ds))
    codes = model.encode_numpy(params, ds.obs[:n])
    grid = traversal_grid(ds.obs[:n], codes, bins=args.bins, mode=args.mode, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image(out, traversal_image(grid), scale=args.scale)
    print(f"wrote {grid.shape[0]}x{grid.shape[1]} traversal grid to {out}")
    write_manifest(out.parent, "traverse", vars_of(args), inputs=[args.dataset, ckpt],
                   outputs=[out], name=out.name + ".manifest.json")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    if args.epochs is not None:
        cfg.train = replace(cfg.train, epochs=args.epochs)
    ablations = ["none"] + [a.strip() for a in args.ablations.split(",") if a.strip()]
    for a in ablations[1:]:
        if a not in ABLATIONS:
            raise UsageError(f"unknown ablation {a!r}; choose from {', '.join(ABLATIONS)}")
    ds = _load_dataset(cfg.dataset, cfg.env)
    eval_ds = _load_dataset(args.eval_dataset, cfg.env) if args.eval_dataset else ds
    out = Path(cfg.out)
    rows, outputs = [], []
    for ablation in ablations:
        method = "full" if ablation == "none" else f"no_{ablation}"
        if ablation == "factored-markov":
            method = "factored_markov"
        dirs = []
        for seed in cfg.seeds:
            d = out / method / f"seed{seed}"
            _train_one(cfg, ds, seed, None if ablation == "none" else ablation, d,
                       args.log_every)
            dirs.append(d)
        result = evaluate_checkpoints(dirs, eval_ds, out / method / "eval", method=method,
                                      pairs=cfg.eval.pairs, split_seed=cfg.eval.split_seed,
                                      epochs=cfg.eval.epochs)
        rows.append(result["row"])
        outputs += result["outputs"]
    write_scores_csv(out / "scores.csv", rows)
    for r in rows:
        print(f"{r['method']:<16s} diag {r['diag_mean']:.3f} +- {r['diag_std']:.3f}  "
              f"offdiag {r['offdiag_mean']:.3f} +- {r['offdiag_std']:.3f}")
    write_manifest(out, "ablate", vars_of(args), inputs=[cfg.dataset],
                   outputs=[out / "scores.csv"] + outputs)
    return EXIT_OK


def cmd_configs(args) -> int:
    if args.name:
        cfg = load_config(args.name)
        sys.stdout.write(cfg.to_text())
    else:
        print("\n".join(builtin_configs()))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acf", description="Action-controllable factor learning "
                                "on pixel gridworlds.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("collect", help="roll out a behaviour policy and save transitions")
    c.add_argument("--env", required=True, help=f"one of {', '.join(sorted(ENVS))}")
    c.add_argument("--steps", type=int, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--policy", default="uniform", help="'uniform' or 'weights:w0,w1,...'")
    c.add_argument("--episode-length", type=int, default=dataio.EPISODE_LENGTH)
    c.add_argument("--out", required=True, help="dataset path (.acfd)")
    c.add_argument("--no-manifest", dest="manifest", action="store_false")
    c.set_defaults(func=cmd_collect)

    def run_flags(q):
        q.add_argument("--config", required=True,
                       help="config file, or a builtin name: " + ", ".join(builtin_configs()))
        q.add_argument("--dataset", help="override [run] dataset")
        q.add_argument("--out", help="override [run] out")
        q.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        q.add_argument("--epochs", type=int)
        q.add_argument("--log-every", type=int, default=0)

    t = sub.add_parser("train", help="train one model per seed")
    run_flags(t)
    t.add_argument("--seed", type=int, help="train this seed only")
    t.add_argument("--seeds", help="comma separated seeds, overrides the config")
    t.add_argument("--ablate", choices=ABLATIONS)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="R^2 matrices and scores for trained checkpoints")
    e.add_argument("--checkpoints", "--checkpoint", nargs="+", required=True,
                   help="run directories or checkpoint files")
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--method", default="acf")
    e.add_argument("--pairs", type=int, default=5000)
    e.add_argument("--split-seed", type=int, default=0)
    e.add_argument("--epochs", type=int, default=200, help="regressor epochs")
    e.add_argument("--probe", action=argparse.BooleanOptionalAction, default=None,
                   help="Jacobian diagonality probe (default: on for continuous envs)")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("traverse", help="latent traversal image grid")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--dataset", required=True)
    v.add_argument("--mode", choices=("mean", "sample"), default="mean")
    v.add_argument("--bins", type=int, default=8)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--pairs", type=int, default=5000)
    v.add_argument("--scale", type=int, default=1)
    v.add_argument("--out", required=True, help="image path (.ppm or .png)")
    v.set_defaults(func=cmd_traverse)

    a = sub.add_parser("ablate", help="train and score the full model and its ablations")
    run_flags(a)
    a.add_argument("--seeds", help="comma separated seeds, overrides the config")
    a.add_argument("--ablations", default=",".join(ABLATIONS))
    a.add_argument("--eval-dataset", help="held-out dataset for scoring (default: training set)")
    a.set_defaults(func=cmd_ablate)

    g = sub.add_parser("configs", help="list builtin configs or print one")
    g.add_argument("name", nargs="?")
    g.set_defaults(func=cmd_configs)
    return p


def _thread_limit():
    raw = os.environ.get("ACF_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"ACF_THREADS must be an integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, n))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with _thread_limit():
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"acf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"acf: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, dataio.DatasetError, CheckpointError) as exc:
        print(f"acf: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:  # argument values the library rejects
        print(f"acf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def run(command_line: str) -> int:
    """``main`` on a shell-style string, handy in scripts and tests."""
    return main(shlex.split(command_line))


if __name__ == "__main__":
    sys.exit(main())
