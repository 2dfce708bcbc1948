"""prefpath: parsimonious mixed-effects preference models from pairwise comparisons.

Fits a common (social) ranking plus sparse per-user preference deviations and
position biases, as one regularization path from the fully shared model to
fully personalized ones, under linear, Bradley-Terry, or Thurstone-Mosteller
losses. Includes a synchronized parallel solver, cross-validated early
stopping, a synthetic-data generator, and file formats for every artifact.
"""

from .analysis import (
    BiasRow,
    bias_report,
    deviation_ranking,
    rank_compare,
    save_bias_report,
    save_deviation_ranking,
    save_rank_matrix,
)
from .cv import CvConfig, CvReport, mismatch_ratio, run_cv, split_by_items
from .data import (
    ComparisonDataset,
    ComparisonRecord,
    FeatureMatrix,
    ModelState,
    Scores,
    apply_design,
    build_dataset,
    compute_scores,
    design_adjoint,
    predict_linear,
)
from .errors import PrefpathError
from .losses import LossFamily, gradient_residual, hazard, log_cdf, loss_gradients, loss_value
from .parallel import BarrierLog, ShardPlan, fit_path_parallel, make_shard_plan, run_benchmark
from .penalty import PenaltyMode, penalty_value, resolve_mode, shrink
from .simulate import SimConfig, generate, response_probability
from .solver import (
    PathPoint,
    RegularizationPath,
    SolverConfig,
    SupportEvent,
    fit_path,
    hodgerank_baseline,
    interpolate_state,
    resolve_run,
    spectral_norm,
)

__version__ = "0.1.0"

__all__ = [
    "BarrierLog",
    "BiasRow",
    "ComparisonDataset",
    "ComparisonRecord",
    "CvConfig",
    "CvReport",
    "FeatureMatrix",
    "LossFamily",
    "ModelState",
    "PathPoint",
    "PenaltyMode",
    "PrefpathError",
    "RegularizationPath",
    "Scores",
    "ShardPlan",
    "SimConfig",
    "SolverConfig",
    "SupportEvent",
    "apply_design",
    "bias_report",
    "build_dataset",
    "compute_scores",
    "design_adjoint",
    "deviation_ranking",
    "fit_path",
    "fit_path_parallel",
    "generate",
    "gradient_residual",
    "hazard",
    "hodgerank_baseline",
    "interpolate_state",
    "log_cdf",
    "loss_gradients",
    "loss_value",
    "make_shard_plan",
    "mismatch_ratio",
    "penalty_value",
    "predict_linear",
    "rank_compare",
    "resolve_mode",
    "resolve_run",
    "response_probability",
    "run_benchmark",
    "run_cv",
    "shrink",
    "spectral_norm",
    "split_by_items",
]
