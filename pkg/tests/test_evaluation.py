import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acf.envs import make_env
from acf.envs.palette import AGENT, FLOOR
from acf.evaluation import (RegressorConfig, aggregate, bin_assignments, color_centroid,
                            empty_tile, fit_regressors, hungarian, jacobian_probe, r2_score,
                            read_matrix_csv, score_row, scores, traversal_grid, traverse,
                            write_heatmap, write_matrix_csv, write_scores_csv)
from acf.evaluation.report import SCORE_COLUMNS, colormap


def brute_force(m):
    n = m.shape[0]
    best, arg = -np.inf, None
    for perm in itertools.permutations(range(n)):  # lexicographic order
        v = sum(m[perm[i], i] for i in range(n))
        if v > best + 1e-12:
            best, arg = v, perm
    return np.array(arg), best


# ---------------------------------------------------------------- hungarian

def test_hungarian_identity():
    np.testing.assert_array_equal(hungarian(np.eye(4)), [0, 1, 2, 3])


def test_hungarian_two_by_two_example():
    m = np.array([[0.1, 0.9], [0.8, 0.2]])
    rho = hungarian(m)
    np.testing.assert_array_equal(rho, [1, 0])
    assert scores(m).diag_score == pytest.approx(0.85)


def test_hungarian_matches_brute_force_on_random_matrices():
    rng = np.random.default_rng(0)
    for trial in range(100):
        k = int(rng.integers(1, 8))
        m = rng.uniform(0, 1, (k, k))
        if trial % 4 == 0:
            m = np.round(m, 1)  # plenty of ties
        rho = hungarian(m)
        ref, best = brute_force(m)
        assert sum(m[rho[i], i] for i in range(k)) == pytest.approx(best, abs=1e-12)
        np.testing.assert_array_equal(rho, ref)


def test_hungarian_ties_pick_lexicographically_smallest():
    np.testing.assert_array_equal(hungarian(np.ones((4, 4))), [0, 1, 2, 3])
    np.testing.assert_array_equal(hungarian(np.zeros((3, 3))), [0, 1, 2])


def test_hungarian_rejects_nan_and_rectangular():
    with pytest.raises(ValueError, match="NaN"):
        hungarian(np.array([[np.nan, 0], [0, 1]]))
    with pytest.raises(ValueError, match="square"):
        hungarian(np.zeros((2, 3)))


# ---------------------------------------------------------------- scores

def test_scores_identity_and_constant():
    s = scores(np.eye(3))
    assert (s.diag_score, s.offdiag_score) == (1.0, 0.0)
    s = scores(np.full((3, 3), 0.5))
    assert (s.diag_score, s.offdiag_score) == (0.5, 0.5)


def test_scores_clip_negative_cells():
    s = scores(np.array([[-3.0, 0.2], [0.1, 0.9]]))
    assert s.diag_score == pytest.approx(0.45)


def test_scores_rectangular_more_latents():
    m = np.array([[0.1, 0.0, 0.0], [0.9, 0.1, 0.0], [0.0, 0.8, 0.1], [0.0, 0.0, 0.7],
                  [0.0, 0.2, 0.0]])
    s = scores(m)
    assert s.permutation == (1, 2, 3)
    assert s.diag_score == pytest.approx(0.8)
    assert s.offdiag_score == pytest.approx((0.1 + 0.1 + 0.0) / 3)


def test_scores_skip_undefined_columns():
    m = np.array([[0.9, np.nan], [0.1, np.nan]])
    s = scores(m)
    assert s.diag_score == pytest.approx(0.9)
    assert s.offdiag_score == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_scores_invariant_to_latent_row_permutation(k, seed):
    rng = np.random.default_rng(seed)
    m = rng.uniform(-0.2, 1, (k, k))
    perm = rng.permutation(k)
    a, b = scores(m), scores(m[perm])
    assert a.diag_score == pytest.approx(b.diag_score, abs=1e-12)
    assert a.offdiag_score == pytest.approx(b.offdiag_score, abs=1e-12)


def test_doorkey_reference_values_are_paper_scale_gap():
    # full model vs "no fwd" row, mean diagonal and off-diagonal
    full, no_fwd = (0.5650, 0.2499), (0.1987, 0.1028)
    assert full[0] - no_fwd[0] > 0.10
    assert full[0] > full[1]


# ---------------------------------------------------------------- regressors

@pytest.fixture(scope="module")
def synthetic_r2():
    rng = np.random.default_rng(0)
    s = rng.uniform(-1, 1, (3000, 2))
    z = np.c_[s[:, 0], np.tanh(3 * s[:, 1]), rng.permutation(s[:, 0])]
    return fit_regressors(z, s, split_seed=0)


def test_regressor_identity_relation(synthetic_r2):
    assert synthetic_r2.values[0, 0] >= 0.99


def test_regressor_invertible_nonlinearity(synthetic_r2):
    assert synthetic_r2.values[1, 1] >= 0.95


def test_regressor_permutation_null(synthetic_r2):
    assert synthetic_r2.values[2, 0] <= 0.05
    assert synthetic_r2.values[0, 1] <= 0.05
    assert synthetic_r2.n_train == 2400 and synthetic_r2.n_test == 600


def test_regressor_constant_target_is_undefined():
    rng = np.random.default_rng(1)
    s = np.c_[rng.uniform(size=2000), np.full(2000, 3.0)]
    m = fit_regressors(s[:, :1], s, cfg=RegressorConfig(epochs=5))
    assert np.isnan(m.values[0, 1]) and not np.isnan(m.values[0, 0])
    assert not m.valid_columns[1]


def test_regressor_needs_enough_pairs():
    with pytest.raises(ValueError, match="2000"):
        fit_regressors(np.zeros((100, 1)), np.zeros((100, 1)))


def test_regressor_data_processing_bound():
    rng = np.random.default_rng(2)
    s = rng.uniform(-1, 1, (2500, 1))
    z = s + 0.3 * rng.standard_normal(s.shape)
    cfg = RegressorConfig(epochs=60)
    base = fit_regressors(z, s, cfg=cfg).values[0, 0]
    for g in (np.sin, lambda v: v ** 2, lambda v: np.round(v, 1)):
        assert fit_regressors(g(z), s, cfg=cfg).values[0, 0] <= base + 0.05


def test_r2_score_by_hand():
    y = np.array([1.0, 2.0, 3.0])
    assert r2_score(y, y) == 1.0
    assert r2_score(y, np.full(3, 2.0)) == 0.0
    assert np.isnan(r2_score(np.ones(3), y))


# ---------------------------------------------------------------- probe

def _grid_pairs(n=3000, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (n, 2))


def test_probe_identity_is_diagonal():
    s = _grid_pairs()
    assert jacobian_probe(s, s.copy()) == pytest.approx(1.0, abs=1e-9)


def test_probe_rotation_is_half():
    s = _grid_pairs()
    c = np.cos(np.pi / 4)
    z = s @ np.array([[c, -c], [c, c]]).T
    assert jacobian_probe(s, z) == pytest.approx(0.5, abs=1e-9)


def test_probe_dense_entanglement_is_low():
    s = _grid_pairs()
    a = np.array([[1.0, 0.9], [0.8, 1.0]])
    expected = (1.0 + 1.0) / np.abs(a).sum()
    score = jacobian_probe(s, s @ a.T)
    assert score == pytest.approx(expected, abs=1e-9)
    assert score < 0.6


def test_probe_skips_rank_deficient_neighbourhoods():
    s = np.c_[np.linspace(0, 1, 200), np.zeros(200)]
    with pytest.raises(ValueError, match="rank"):
        jacobian_probe(s, s)


# ---------------------------------------------------------------- traversal

def test_traverse_one_observation_per_bin_is_identity():
    rng = np.random.default_rng(0)
    frames = rng.integers(0, 256, (4, 32, 32, 3), dtype=np.uint8)
    codes = np.array([[0.0], [1.0], [2.0], [3.0]])
    row = traverse(frames, codes, 0, bins=4, mode="mean")
    np.testing.assert_array_equal(row, frames)


def test_traverse_constant_dataset_identical_tiles():
    frame = np.random.default_rng(1).integers(0, 256, (32, 32, 3), dtype=np.uint8)
    frames = np.repeat(frame[None], 200, axis=0)
    codes = np.random.default_rng(2).uniform(size=(200, 2))
    grid = traversal_grid(frames, codes, bins=5, mode="mean")
    assert grid.shape == (2, 5, 32, 32, 3)
    for tile in grid.reshape(-1, 32, 32, 3):
        np.testing.assert_array_equal(tile, frame)


def test_traverse_empty_bin_marked():
    frames = np.zeros((2, 32, 32, 3), np.uint8)
    row = traverse(frames, np.array([[0.0], [1.0]]), 0, bins=3, mode="mean")
    np.testing.assert_array_equal(row[1], empty_tile())


def test_traverse_sample_mode_deterministic():
    rng = np.random.default_rng(3)
    frames = rng.integers(0, 256, (300, 32, 32, 3), dtype=np.uint8)
    codes = rng.uniform(size=(300, 2))
    a = traversal_grid(frames, codes, mode="sample", seed=4)
    b = traversal_grid(frames, codes, mode="sample", seed=4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, traversal_grid(frames, codes, mode="sample", seed=5))


def test_traverse_ground_truth_sweep_is_monotone():
    env = make_env("grid2d")
    rng = np.random.default_rng(0)
    states = rng.uniform(0, 1, (3000, 2)).astype(np.float32)
    frames = env.render_batch(states)
    row = traverse(frames, states, 0, bins=8, mode="mean")
    xs = [color_centroid(t, AGENT, FLOOR)[0] for t in row]
    assert np.all(np.diff(xs) > 0)


def test_bin_assignments_edges():
    np.testing.assert_array_equal(bin_assignments(np.array([0.0, 0.5, 1.0]), 2), [0, 1, 1])
    np.testing.assert_array_equal(bin_assignments(np.ones(3), 4), [0, 0, 0])


# ---------------------------------------------------------------- reports

def test_matrix_csv_round_trip(tmp_path):
    m = np.array([[0.5, np.nan], [-0.25, 1.0]])
    write_matrix_csv(tmp_path / "r2.csv", m, ["z0", "z1"], ["x", "y"])
    back, rows, cols = read_matrix_csv(tmp_path / "r2.csv")
    np.testing.assert_array_equal(back, m)
    assert rows == ["z0", "z1"] and cols == ["x", "y"]


def test_aggregate_elementwise():
    mean, std = aggregate([np.eye(2), np.zeros((2, 2))])
    np.testing.assert_array_equal(mean, 0.5 * np.eye(2))
    np.testing.assert_array_equal(std, 0.5 * np.eye(2))


def test_scores_csv_schema(tmp_path):
    row = score_row("acf", [np.eye(2), np.full((2, 2), 0.5)])
    assert row["diag_mean"] == pytest.approx(0.75) and row["diag_std"] == pytest.approx(0.25)
    write_scores_csv(tmp_path / "scores.csv", [row])
    header = (tmp_path / "scores.csv").read_text().splitlines()[0]
    assert tuple(header.split(",")) == SCORE_COLUMNS


def test_heatmap_colors(tmp_path):
    rgb = colormap(np.array([0.0, 1.0, np.nan]))
    np.testing.assert_array_equal(rgb, [[68, 1, 84], [253, 231, 37], [128, 128, 128]])
    write_heatmap(tmp_path / "h.ppm", np.eye(2), cell=4)
    assert (tmp_path / "h.ppm").stat().st_size == len(b"P6\n8 8\n255\n") + 8 * 8 * 3
