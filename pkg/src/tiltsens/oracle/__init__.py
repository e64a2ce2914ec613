"""Independent brute-force and simulation checks of the closed-form engine."""

from .exact import (
    SubmodelSpec,
    brute_force_bounds,
    enumerate_assignments,
    literal_tilted_stat,
    null_expectation_upper,
    overlap_counts,
    submodel_conditional,
    vertex_conditional_exact,
)
from .montecarlo import monte_carlo_type1, monte_carlo_variance_conservatism
from .principal import (
    StratumConfig,
    augmented_full_data_gap,
    conditional_treatment_enumerated,
    conditional_treatment_formula,
    enumerated_stopped_controls,
    exact_bias,
    exhaustive_bias,
    hypergeom_stopped_controls,
)

__all__ = [
    "StratumConfig",
    "SubmodelSpec",
    "augmented_full_data_gap",
    "brute_force_bounds",
    "conditional_treatment_enumerated",
    "conditional_treatment_formula",
    "enumerate_assignments",
    "enumerated_stopped_controls",
    "exact_bias",
    "exhaustive_bias",
    "hypergeom_stopped_controls",
    "literal_tilted_stat",
    "monte_carlo_type1",
    "monte_carlo_variance_conservatism",
    "null_expectation_upper",
    "overlap_counts",
    "submodel_conditional",
    "vertex_conditional_exact",
]
