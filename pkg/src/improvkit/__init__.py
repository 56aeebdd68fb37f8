"""Equal-improvability fairness toolkit.

Disparity metrics over effort-limited improvement, penalized training that
equalizes improvability across groups, a two-group feedback-dynamics
simulator, and exact analytic oracles for testing all of it.
"""

from .data import (CsvSchema, Dataset, FeaturePartition, SyntheticConfig,
                   generate_synthetic, load_csv, parse_schema, save_csv, split)
from .effort import (BestResponse, EffortBudget, PgdConfig, RecourseResult,
                     best_response_batch, best_response_glm, best_response_pgd,
                     effort_norm, recourse_distance)
from .errors import (ConfigError, DataError, EvaluationError, ImprovkitError,
                     NumericalError)
from .metrics import (DisparityReport, be_disparity, dp_disparity, ei_disparity,
                      eo_disparity, eod_disparity, er_disparity, error_rate,
                      full_report)
from .models import (GlmScorer, MlpScorer, bce_loss, deserialize_model,
                     serialize_model)
from .penalties import PenaltyConfig, PenaltyResult, penalty_value_and_grad
from .train import (CvResult, TrainConfig, TrainResult, cross_validate,
                    pareto_sweep, train)
from .dynamics import (DynamicsConfig, GroupState, Trajectory, run_simulation,
                       solve_thresholds, tv_distance)
from .oracles import (GroupAwareLinearClassifier, PiecewiseUniform,
                      TradeoffCurve, optimal_tradeoff, qform_ei_disparity,
                      qform_error, worked_example_oracle)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
