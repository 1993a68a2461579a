"""Cox proportional hazards models with change-points in the regression coefficients.

The package fits piecewise-constant coefficient Cox models by exact
profile-likelihood search, scores the number of change-points with
change-point-aware information criteria, and ships the Brownian-motion and
simulation machinery used to check those criteria.
"""

from .bm_oracle import (
    BMSimConfig,
    DriftedBMSpec,
    argsup_density,
    e_sup_v,
    e_v_at_argsup_copy,
    simulate_sup_and_argsup,
    spec_from_matrices,
    tail_prob_one_sided,
)
from .criteria import (
    ContractError,
    CriterionReport,
    SegmentMatrices,
    a_hat,
    aic,
    aic_naive,
    aic_xi,
    b_hat,
    c_hat,
    rank_models,
    robust_score_w,
    segment_matrices,
    tic,
)
from .partial_likelihood import RidgeConfig, fit_segments, log_partial_likelihood
from .search import ChangePointModelFit, InfeasibleError, SearchConfig, SegmentCostTable, exhaustive_search, search
from .simulation import (
    RandomTruthSpec,
    TruthSpec,
    bias_experiment,
    generate_dataset,
    kl_risk,
    selection_experiment,
)
from .survival import DataError, SegmentPartition, Subject, SurvivalDataset, kaplan_meier, read_csv

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
