"""Design-based difference-in-differences estimation for staggered rollouts.

The package turns a balanced panel with staggered treatment adoption into
the complete system of two-by-two difference-in-differences comparisons,
solves for the minimum-variance weighting that is unbiased for a chosen
treatment-effect estimand under a chosen effect-heterogeneity setting, and
attaches randomization inference.  Established staggered-adoption
estimators are reproduced as fixed weight vectors over the same comparisons
so their implied estimands can be audited, and a simulation harness
benchmarks everything on a stepped-wedge rollout.
"""

from .assumptions import (
    SETTINGS,
    EffectKey,
    EstimandSpec,
    FMatrix,
    ObsProfile,
    ThetaCatalog,
    attw,
    average,
    build_f,
    calendar_average,
    collapse_matrix,
    contrast,
    effect_key,
    enumerate_theta,
    estimand,
    expectation_profile,
    exposure_average,
    group_average,
    obs_expectation_profile,
    parse_estimand,
    single,
)
from .comparators import (
    CS_AGGREGATIONS,
    NP_WEIGHTINGS,
    ComparatorSpec,
    ch_weights,
    co_weights,
    cs_weights,
    np_weights,
    sa_weights,
    tw_weights,
)
from .covariance import (
    STRUCTURES,
    WorkingCovariance,
    build_m,
    from_matrix,
    load_custom_m,
    load_rel_var,
)
from .didmat import (
    TYPE_NAMES,
    DIDIndex,
    DIDSystem,
    build_a_matrix,
    build_system,
    classify_all,
    classify_did,
    count_types,
    did_row_index,
    iter_did_indices,
    n_did_rows,
    row_entries,
    row_to_index,
)
from .errors import (
    AdoptionAtStartError,
    BalancedPanelError,
    CovarianceParamError,
    DegenerateDesignError,
    DegenerateVarianceError,
    DesignTooLargeError,
    DesignTooSmallError,
    DimensionError,
    EmptyEstimandError,
    GenDIDError,
    InfeasibleEstimandError,
    NoTreatmentError,
    NumericalError,
    PeriodIndexError,
    TransformDomainError,
    UnsupportedEstimatorError,
)
from .estimate import (
    EstimateResult,
    back_transform,
    estimate_only,
    permutation_p,
    permutation_test,
    plug_in_variance,
    point_estimate,
)
from .panel import (
    TRANSFORMS,
    AdoptionPattern,
    PanelData,
    apply_transform,
    canonical_order,
    load_panel,
    never_code,
)
from .simulate import (
    CLUSTER_POOL,
    PERIOD_EFFECTS,
    SWT_ADOPTION,
    EstimatorEntry,
    SimScenario,
    StudyResult,
    default_registry,
    entry_truth,
    generate_swt,
    run_study,
    scenario,
    select_entries,
)
from .solver import (
    Feasibility,
    FeasibilityClass,
    WeightSolution,
    feasibility,
    obs_scaled_variance,
    relative_efficiency,
    scaled_variance,
    solve_min_variance,
)

__version__ = "0.1.0"

__all__ = [
    "AdoptionPattern",
    "BalancedPanelError",
    "CS_AGGREGATIONS",
    "CLUSTER_POOL",
    "ComparatorSpec",
    "CovarianceParamError",
    "DIDIndex",
    "DIDSystem",
    "DegenerateDesignError",
    "DegenerateVarianceError",
    "DesignTooLargeError",
    "DesignTooSmallError",
    "DimensionError",
    "EffectKey",
    "EmptyEstimandError",
    "EstimandSpec",
    "EstimateResult",
    "EstimatorEntry",
    "FMatrix",
    "Feasibility",
    "FeasibilityClass",
    "GenDIDError",
    "InfeasibleEstimandError",
    "NP_WEIGHTINGS",
    "NoTreatmentError",
    "NumericalError",
    "ObsProfile",
    "PERIOD_EFFECTS",
    "PanelData",
    "PeriodIndexError",
    "SETTINGS",
    "STRUCTURES",
    "SWT_ADOPTION",
    "SimScenario",
    "StudyResult",
    "ThetaCatalog",
    "TRANSFORMS",
    "TYPE_NAMES",
    "TransformDomainError",
    "UnsupportedEstimatorError",
    "WeightSolution",
    "WorkingCovariance",
    "AdoptionAtStartError",
    "apply_transform",
    "attw",
    "average",
    "back_transform",
    "build_a_matrix",
    "build_f",
    "build_m",
    "build_system",
    "calendar_average",
    "canonical_order",
    "ch_weights",
    "classify_all",
    "classify_did",
    "co_weights",
    "collapse_matrix",
    "contrast",
    "count_types",
    "cs_weights",
    "default_registry",
    "did_row_index",
    "effect_key",
    "entry_truth",
    "enumerate_theta",
    "estimand",
    "estimate_only",
    "expectation_profile",
    "exposure_average",
    "feasibility",
    "from_matrix",
    "generate_swt",
    "group_average",
    "iter_did_indices",
    "load_custom_m",
    "load_panel",
    "load_rel_var",
    "n_did_rows",
    "never_code",
    "np_weights",
    "obs_expectation_profile",
    "obs_scaled_variance",
    "parse_estimand",
    "permutation_p",
    "permutation_test",
    "plug_in_variance",
    "point_estimate",
    "relative_efficiency",
    "row_entries",
    "row_to_index",
    "run_study",
    "sa_weights",
    "scaled_variance",
    "scenario",
    "select_entries",
    "single",
    "solve_min_variance",
    "tw_weights",
]
