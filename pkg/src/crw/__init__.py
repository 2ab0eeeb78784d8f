"""Covariate rank weighting for large-scale multiple hypothesis testing.

Compute the probability law of a test's covariate rank, turn it into
power-optimal p-value weights, calibrate everything from data, and apply
weighted Bonferroni / Benjamini-Hochberg decisions.  A simulation harness
reproduces the dilution and power studies at desk scale.
"""

__version__ = "0.1.0"

from .errors import (
    CapacityError,
    ConfigError,
    CrwError,
    DataError,
    DegenerateInputError,
    InvalidModelError,
    SolverError,
)
from .estimation import (
    EffectDensity,
    EffectEstimate,
    RegressionFit,
    estimate_covariate_effects,
    estimate_effects,
    estimate_pi0,
    fit_covariate_regression,
    point_mass,
    posthoc_power,
    truncated_normal,
)
from .mtp import (
    DecisionReport,
    ErrorMetrics,
    TestCollection,
    TestRecord,
    compute_metrics,
    plain_bh,
    plain_bonferroni,
    rank_by_covariate,
    weighted_bh,
    weighted_bonferroni,
)
from .pipeline import Calibration, calibrate_weights
from .rankprob import (
    EXACT_M_CAP,
    RankDistribution,
    RankModel,
    alt_cdf_at,
    null_cdf_at,
    rank_prob,
    rank_prob_exact,
    rank_prob_grid,
    rank_prob_mc,
    rank_prob_normal_approx,
)
from .simharness import (
    SimConfig,
    SimResult,
    generate_dataset,
    load_external_weights,
    rdw_baseline_weights,
    run_dilution_study,
    run_power_comparison,
)
from .weights import (
    DeltaSolution,
    WeightConfig,
    WeightVector,
    average_power,
    crw_weights,
    exact_weights,
    rdw_weights,
    solve_delta,
    weight_at,
)
