"""Evaluation: R^2 matrices, assignment scores, traversals and the Jacobian probe."""
from .assignment import ScoreSummary, hungarian, pad_square, scores
from .probe import jacobian_probe, local_jacobians
from .regress import R2Matrix, RegressorConfig, fit_regressors, r2_score
from .report import (SCORE_COLUMNS, aggregate, heatmap, read_matrix_csv, score_row,
                     write_heatmap, write_matrix_csv, write_scores_csv)
from .traverse import (bin_assignments, color_centroid, empty_tile, traversal_grid,
                       traversal_image, traverse)

__all__ = [
    "R2Matrix", "RegressorConfig", "SCORE_COLUMNS", "ScoreSummary", "aggregate",
    "bin_assignments", "color_centroid", "empty_tile", "fit_regressors", "heatmap",
    "hungarian", "jacobian_probe", "local_jacobians", "pad_square", "r2_score",
    "read_matrix_csv", "score_row", "scores", "traversal_grid", "traversal_image", "traverse",
    "write_heatmap", "write_matrix_csv", "write_scores_csv",
]
