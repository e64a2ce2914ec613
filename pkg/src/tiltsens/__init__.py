"""Sensitivity analysis for stratified binary outcomes under sample selection and biased encounters."""

from .augment import AugmentedStratum, AugmentedStudy, augment, augment_study, rho_lb_from_w, w_from_rho_lb
from .data import (
    EncounterRecord,
    StratumSummary,
    StudySummary,
    filter_informative,
    load_encounters,
    read_summary,
    summarize,
)
from .errors import DataError, NumericalGuardError, OracleMismatch, SweepError
from .geo import (
    BlockGroupRecord,
    CeilingTable,
    build_ceiling_table,
    coverage_share,
    geo_ceiling,
    inherit_ceilings,
    odds,
    weighted_quantile,
)
from .inference import (
    ConfSetRow,
    SweepCell,
    changepoint,
    conf_set_sweep,
    conservative_variance,
    estimate,
    grid_sweep,
    one_sided_pvalue,
)
from .tilt import (
    TiltResult,
    TiltSpec,
    aggregate_tilted_stat,
    overlap_pmf,
    prob_bounds,
    stratum_tilted_stat,
    tilt_multiplier,
)

__version__ = "0.1.0"
