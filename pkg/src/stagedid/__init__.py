"""Two-stage difference-in-differences for staggered adoption designs."""

from .diagnostics import (
    StackedWeights,
    WeightDecomposition,
    did_weights,
    did_weights_bruteforce,
    implied_estimand,
    stacked_weights,
    stacked_weights_from_panel,
)
from .estimators import (
    EffectGrid,
    Estimate,
    EventStudySpec,
    aggregated_att,
    aggregated_event_study,
    did_regression,
    naive_event_study,
    stacked_did,
    two_stage_did,
    two_stage_event_study,
)
from .gmm import GmmResult, MomentSystem, build_moment_system, sandwich_vcov, solve_gmm
from .panel import (
    CellGrid,
    Observation,
    Panel,
    Requirements,
    cell_means,
    derive_relative_time,
    exclude_cohorts,
    read_panel_csv,
    validate_panel,
    write_panel_csv,
)
from .regression import DesignSpec, FitResult, Vcov, cluster_vcov, double_demean, wls_fit
from .simulation import PRESETS, MCResult, SimConfig, monte_carlo, simulate_panel, true_estimands

__version__ = "0.1.0"
