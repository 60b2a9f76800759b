"""Cost modeling and cost-optimal configuration search for grouped-query attention."""

from .config import (AttentionHeads, FamilyTable, FfnMode, ModelShape, ParamCount,
                     candidate_set, count_params, default_family, derive_ffn_width,
                     nearest_concrete_config, resolve_shape_from_size)
from .costs import (HardwareCostParams, InferenceCost, Objective, Precision, TrainingCost,
                    component_breakdown, hardware_cost, inference_cost, tokens_under_budget,
                    training_cost)
from .errors import (AllInfeasibleError, DegenerateDataError, GQAOptError,
                     InfeasibleTargetError, OutOfRangeError, RecordFormatError)
from .scaling import (HeadLawCurve, LossRecord, ScalingCurve, fit_head_law, fit_power_law,
                      invert_curve, joint_fit_shared_constant, predict_loss,
                      relative_delta_series)
from .search import (OptimalChoice, OptimizationQuery, SweepGrid, aligned_budget_report,
                     brute_force_check, optimize, sweep)

__version__ = "0.1.0"
