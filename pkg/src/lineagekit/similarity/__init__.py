from .metrics import (METRIC_KINDS, DegenerateInputError, FeatureBatch,
                      baseline_similarity, centering_matrix, distance_matrix)
from .weights import PiWeights, pi_weights
from .approx import (AlignmentError, LinearizedEval, aligned_delta,
                     approx_similarity, linearized_outputs, oracle_similarity,
                     tapped_features)
from .closedform import ClosedFormSolution, solve_per_sample_map, solve_shared_direction

__all__ = [
    "METRIC_KINDS", "DegenerateInputError", "FeatureBatch",
    "baseline_similarity", "centering_matrix", "distance_matrix",
    "PiWeights", "pi_weights",
    "AlignmentError", "LinearizedEval", "aligned_delta", "approx_similarity",
    "linearized_outputs", "oracle_similarity", "tapped_features",
    "ClosedFormSolution", "solve_per_sample_map", "solve_shared_direction",
]
