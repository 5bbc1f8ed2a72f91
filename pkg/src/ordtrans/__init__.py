"""Ordinal transition model with row and column effects.

The main entry points are re-exported here; see the submodules for details.
"""

from ._backend import BACKEND
from .data import (
    ContingencyTable,
    Dataset,
    DataError,
    Feature,
    FeatureEncoder,
    LevelGrouping,
    RANKIN_GROUPING,
    apply_grouping,
    build_contingency,
    build_dataset,
    load_dataset,
    write_dataset,
)
from .estimation import FitReport, fit, gradient, log_likelihood
from .evaluation import EvalReport, cross_validate, metrics
from .imputation import association, impute_all, impute_categorical, mask_and_score
from .inference import bootstrap_p_value, predict, predict_dataset, rank_improving_features, to_delta
from .model import (
    HyperParams,
    InvalidProbabilityError,
    ModelParams,
    default_c,
    free_parameter_count,
    k_weight,
    transition_probability,
)
from .optim import DivergenceError
from .simulation import SimSpec, generate, k_table, reduced_table, scale_table

__version__ = "0.1.0"
