"""Desk-scale experiments through the command line.

    python3 scripts/run_desk.py grid2d  [--out runs/desk]   # identification + traversal
    python3 scripts/run_desk.py doorkey [--out runs/desk]   # full vs no_fwd, door_y column

Each run collects its dataset, trains three seeds with the bundled ``*_desk``
config, scores the checkpoints and writes everything under ``--out``.
"""
from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

import numpy as np

from acf import dataio
from acf.cli import evaluate_checkpoints, main

SIZES = {"grid2d": 20_000, "doorkey": 40_000}
SEEDS = (0, 1, 2)


def train_seeds(env: str, data: Path, out: Path, ablate: str | None = None) -> list[Path]:
    dirs = []
    for seed in SEEDS:
        t0 = time.perf_counter()
        flags = ["--ablate", ablate] if ablate else []
        code = main(["train", "--config", f"{env}_desk", "--dataset", str(data), "--out",
                     str(out), "--seed", str(seed), "--log-every", "500", *flags])
        if code:
            raise SystemExit(code)
        print(f"seed {seed}: {(time.perf_counter() - t0) / 60:.1f} min", flush=True)
        dirs.append(out / f"seed{seed}")
    return dirs


def summarize(label: str, result: dict) -> dict:
    per = result["per_seed"]
    row = {k: float(np.median([e[k] for e in per])) for k in per[0]
           if k in ("diag_score", "offdiag_score", "jacobian_diagonality")}
    print(label, " ".join(f"median {k} {v:.3f}" for k, v in row.items()), flush=True)
    return row


def run(env: str, root: Path) -> dict:
    root.mkdir(parents=True, exist_ok=True)
    data = root / f"{env}.acfd"
    if not data.exists():
        main(["collect", "--env", env, "--steps", str(SIZES[env]), "--seed", "0",
              "--out", str(data)])
    ds = dataio.load(data)
    summary = {}
    methods = [None, "fwd"] if env == "doorkey" else [None]
    for method in methods:
        name = "no_fwd" if method else "full"
        dirs = train_seeds(env, data, root / name, method)
        result = evaluate_checkpoints(dirs, ds, root / f"eval_{name}")
        summary[name] = summarize(name, result)
        if env == "doorkey" and method is None:
            j = list(ds.spec.factor_names).index("door_y")
            summary["door_y"] = [float(m.clipped()[:, j][p[j]]) for m, p in zip(
                result["matrices"], [e["permutation"] for e in result["per_seed"]])]
    (root / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def cli():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("env", choices=sorted(SIZES))
    ap.add_argument("--out", default="runs/desk")
    args = ap.parse_args()
    print(json.dumps(run(args.env, Path(args.out) / args.env), indent=2))


if __name__ == "__main__":
    cli()
