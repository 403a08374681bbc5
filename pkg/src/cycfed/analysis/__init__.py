from .costs import (
    CostReport,
    Verdict,
    gd_cycling_sweep,
    sgd_cycling_grid,
    ssgd_vs_rr_grid,
    cost_gd,
    cost_gd_full_group,
    cost_local_rr,
    cost_sgd,
    cost_ssgd_full_group,
    cost_ssgd_vs_alternatives,
    finite_population_factor,
    local_rr_threshold,
    ssgd_beats_gd_predicate,
)
from .identities import (
    CycleDecomposition,
    ExpectationCheck,
    cycle_expectation_check,
    cycle_terms,
    decompose_cycle,
    expected_loss_gap,
    selection_outcomes,
    wor_variance_check,
)
from .rates import RateFit, estimate_heterogeneity, fit_rate, sign_changes_per_cycle

__all__ = [
    "CostReport",
    "CycleDecomposition",
    "ExpectationCheck",
    "RateFit",
    "Verdict",
    "gd_cycling_sweep",
    "sgd_cycling_grid",
    "ssgd_vs_rr_grid",
    "cost_gd",
    "cost_gd_full_group",
    "cost_local_rr",
    "cost_sgd",
    "cost_ssgd_full_group",
    "cost_ssgd_vs_alternatives",
    "cycle_expectation_check",
    "cycle_terms",
    "decompose_cycle",
    "estimate_heterogeneity",
    "expected_loss_gap",
    "finite_population_factor",
    "fit_rate",
    "local_rr_threshold",
    "selection_outcomes",
    "sign_changes_per_cycle",
    "ssgd_beats_gd_predicate",
    "wor_variance_check",
]
