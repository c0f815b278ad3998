import csv
import hashlib
import json
import subprocess

import numpy as np
import pytest

from acf import dataio
from acf.cli import blob_sha1, main
from acf.diffmath import load_checkpoint
from acf.imageio import read_ppm

TINY = ["--set", "model.encoder=mlp", "--set", "model.mlp_width=16",
        "--set", "model.energy_hidden=16", "--set", "model.policy_hidden=16",
        "--set", "train.batch_size=64"]


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["collect", "--env", "grid2d", "--steps", "2200", "--seed", "1",
                 "--out", str(root / "g.acfd")]) == 0
    return root


def _train(root, out, *extra):
    return main(["train", "--config", "grid2d", "--dataset", str(root / "g.acfd"),
                 "--out", str(out), "--epochs", "1", *TINY, *extra])


def test_collect_writes_exact_count(workspace, capsys):
    out = workspace / "c.acfd"
    assert main(["collect", "--env", "grid2d", "--steps", "500", "--seed", "1",
                 "--out", str(out)]) == 0
    assert len(dataio.load(out)) == 500
    assert "noop" in capsys.readouterr().out


def test_collect_is_byte_identical(workspace):
    paths = [workspace / "r1.acfd", workspace / "r2.acfd"]
    for p in paths:
        main(["collect", "--env", "doorkey", "--steps", "300", "--seed", "4", "--out", str(p)])
    assert _sha(paths[0]) == _sha(paths[1])
    m1 = json.loads((workspace / "r1.acfd.manifest.json").read_text())
    assert m1["outputs"]["r1.acfd"] == blob_sha1(paths[0].read_bytes())


def test_unknown_env_exit_code(workspace, capsys):
    assert main(["collect", "--env", "pong", "--steps", "5", "--out",
                 str(workspace / "x.acfd")]) == 2
    assert "grid2d" in capsys.readouterr().err


def test_usage_error_exit_code():
    assert main(["train"]) == 2
    assert main(["frobnicate"]) == 2


def test_blob_hash_matches_git(tmp_path):
    p = tmp_path / "f.txt"
    p.write_bytes(b"hello\n")
    try:
        ref = subprocess.run(["git", "hash-object", str(p)], capture_output=True, text=True,
                             check=True).stdout.strip()
    except (OSError, subprocess.CalledProcessError):
        ref = "ce013625030ba8dba906f756967f9e9ca394464a"
    assert blob_sha1(b"hello\n") == ref


def test_train_is_byte_identical(workspace):
    out = workspace / "twice"
    names = ("losses.csv", "checkpoint.acfw", "manifest.json", "model.json")
    digests = []
    for _ in range(2):  # same flags, same output directory
        assert _train(workspace, out, "--seed", "3") == 0
        digests.append([_sha(out / "seed3" / n) for n in names])
    assert digests[0] == digests[1]
    assert _train(workspace, workspace / "other", "--seed", "3") == 0
    assert _sha(workspace / "other" / "seed3" / "losses.csv") == digests[0][0]


def test_train_seeds_make_directories(workspace):
    out = workspace / "multi"
    assert _train(workspace, out, "--seeds", "0,1,2") == 0
    assert sorted(p.name for p in out.iterdir()) == ["seed0", "seed1", "seed2"]
    manifest = json.loads((out / "seed1" / "manifest.json").read_text())
    assert manifest["config"]["train"]["seed"] == 1
    assert manifest["config"]["train"]["beta_fwd"] == pytest.approx(95.395)
    assert "timestamp" not in json.dumps(manifest)


def test_ablate_fwd_zeroes_its_column(workspace):
    out = workspace / "nofwd"
    assert _train(workspace, out, "--ablate", "fwd") == 0
    with open(out / "seed0" / "losses.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(float(r["L_fwd"]) == 0.0 for r in rows)
    assert all(float(r["L_r"]) > 0 for r in rows)


def test_train_config_error_has_line(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[run]\nenv = grid2d\n[train]\nbeta_fwd = lots\n")
    assert main(["train", "--config", str(bad)]) == 2
    assert "bad.cfg:4" in capsys.readouterr().err


def test_train_missing_dataset_is_io_error(tmp_path):
    assert main(["train", "--config", "grid2d", "--dataset", str(tmp_path / "none.acfd")]) == 4


def test_set_override_is_validated(workspace):
    assert _train(workspace, workspace / "o", "--set", "train.momentum=0.9") == 2
    assert _train(workspace, workspace / "o", "--set", "nodot=1") == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(workspace):
    assert _train(workspace, workspace / "nan", "--set", "train.lr=1e30") == 3
    rows = (workspace / "nan" / "seed0" / "losses.csv").read_text().splitlines()
    assert len(rows) >= 2  # the failing step is logged


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace / "trained"
    assert _train(workspace, out, "--seeds", "0,1") == 0
    return out


def test_eval_single_and_multi_seed(workspace, trained):
    one = workspace / "ev1"
    assert main(["eval", "--checkpoints", str(trained / "seed0"), "--dataset",
                 str(workspace / "g.acfd"), "--out", str(one), "--epochs", "3"]) == 0
    assert (one / "r2.csv").exists() and not (one / "r2_seed0.csv").exists()
    two = workspace / "ev2"
    assert main(["eval", "--checkpoints", str(trained / "seed0"), str(trained / "seed1"),
                 "--dataset", str(workspace / "g.acfd"), "--out", str(two),
                 "--epochs", "3"]) == 0
    header = (two / "scores.csv").read_text().splitlines()[0]
    assert header == "method,diag_mean,diag_std,offdiag_mean,offdiag_std"
    per_seed = [np.loadtxt(two / f"r2_seed{s}.csv", delimiter=",", skiprows=1,
                           usecols=(1, 2)) for s in (0, 1)]
    mean = np.loadtxt(two / "r2_mean.csv", delimiter=",", skiprows=1, usecols=(1, 2))
    std = np.loadtxt(two / "r2_std.csv", delimiter=",", skiprows=1, usecols=(1, 2))
    np.testing.assert_allclose(mean, (per_seed[0] + per_seed[1]) / 2, atol=1e-12)
    np.testing.assert_allclose(std, np.abs(per_seed[0] - per_seed[1]) / 2, atol=1e-12)
    probe = json.loads((two / "per_seed.json").read_text())
    assert all(0 <= e["jacobian_diagonality"] <= 1 for e in probe)


def test_eval_spec_mismatch_exit_code(workspace, trained):
    taxi = workspace / "t.acfd"
    main(["collect", "--env", "taxi", "--steps", "100", "--out", str(taxi)])
    assert main(["eval", "--checkpoints", str(trained / "seed0"), "--dataset", str(taxi),
                 "--out", str(workspace / "evx")]) == 2


def test_traverse_grid_dimensions_and_determinism(workspace, trained):
    paths = [workspace / "tv" / f"{i}.ppm" for i in range(3)]
    for p, seed in zip(paths, (5, 5, 6)):
        assert main(["traverse", "--checkpoint", str(trained / "seed0"), "--dataset",
                     str(workspace / "g.acfd"), "--mode", "sample", "--bins", "6",
                     "--seed", str(seed), "--out", str(p)]) == 0
    img = read_ppm(paths[0])
    assert img.shape == (2 * 33 + 1, 6 * 33 + 1, 3)  # d rows x bins columns, 1px padding
    assert _sha(paths[0]) == _sha(paths[1]) != _sha(paths[2])


def test_traverse_missing_checkpoint(workspace):
    assert main(["traverse", "--checkpoint", str(workspace / "nowhere"), "--dataset",
                 str(workspace / "g.acfd"), "--out", str(workspace / "t.ppm")]) == 2


def test_ablate_command_writes_one_row_per_method(workspace):
    out = workspace / "abl"
    assert main(["ablate", "--config", "grid2d", "--dataset", str(workspace / "g.acfd"),
                 "--out", str(out), "--epochs", "1", "--seeds", "0", "--ablations",
                 "fwd,factored-markov", "--set", "eval.epochs=2", *TINY]) == 0
    with open(out / "scores.csv") as fh:
        methods = [r["method"] for r in csv.DictReader(fh)]
    assert methods == ["full", "no_fwd", "factored_markov"]
    assert load_checkpoint(out / "no_fwd" / "seed0" / "checkpoint.acfw")


def test_thread_cap_env(workspace, monkeypatch):
    monkeypatch.setenv("ACF_THREADS", "1")
    assert main(["collect", "--env", "grid2d", "--steps", "10", "--out",
                 str(workspace / "th.acfd")]) == 0
    monkeypatch.setenv("ACF_THREADS", "lots")
    assert main(["collect", "--env", "grid2d", "--steps", "10", "--out",
                 str(workspace / "th.acfd")]) == 2
