"""
habitforge - Habit-formation analytics over gym membership cohorts.
"""

from .errors import (
    HabitForgeError,
    ParseError,
    ValidationError,
    DomainError,
    EstimationError,
    MatchingError,
    SchemeError,
    SpecError,
    TreatmentLookupError,
    ConfigError,
)
from .cohort import (
    Gender,
    MemberProfile,
    VisitEvent,
    InterventionCounts,
    CohortRules,
    CohortDataset,
    week_index,
    filter_cohort,
    load_members,
    load_visits,
    load_interventions,
    load_cohort,
)
from .vectorize import VisitVector, VisitMatrix, build_visit_vector, build_matrix
from .nmf import (
    NMFResult,
    ClusterModel,
    TransitionMatrix,
    nmf_factorize,
    cluster_probabilities,
    fit_clusters,
    assign_clusters,
    transition_matrix,
    membership_prob_cdf,
)
from .survival import (
    WeeklyAttendance,
    SurvivalRecord,
    weekly_attendance,
    survival_streak,
    survival_records,
    survival_cdf,
    survival_shares,
    gap_usage_stats,
    intermediate_gap_cdf,
)
from .critical import (
    CriticalVisitTable,
    MilestoneFit,
    visit_count_in_window,
    critical_visits,
    critical_visit_table,
    fit_milestone_line,
)
from .demographics import DemographicPartition, DeviationReport, deviation
from .causal import (
    TreatmentSpec,
    CausalEstimate,
    CausalContext,
    CausalPipeline,
    binarize_treatment,
    effect_timeline,
    effect_by_cluster,
    self_reported_effects,
    refute_random_common_cause,
)
from .synth import GeneratorSpec, GroundTruth, generate_cohort, ground_truth_att
from .config import RunConfig, resolve_config
from .sinks import CohortSource, ArtifactSink, DirectorySource, DirectorySink
from .app import HabitForgeApp

__all__ = [
    # Errors
    "HabitForgeError",
    "ParseError",
    "ValidationError",
    "DomainError",
    "EstimationError",
    "MatchingError",
    "SchemeError",
    "SpecError",
    "TreatmentLookupError",
    "ConfigError",
    # Cohort
    "Gender",
    "MemberProfile",
    "VisitEvent",
    "InterventionCounts",
    "CohortRules",
    "CohortDataset",
    "week_index",
    "filter_cohort",
    "load_members",
    "load_visits",
    "load_interventions",
    "load_cohort",
    # Vectorize
    "VisitVector",
    "VisitMatrix",
    "build_visit_vector",
    "build_matrix",
    # Clusters
    "NMFResult",
    "ClusterModel",
    "TransitionMatrix",
    "nmf_factorize",
    "cluster_probabilities",
    "fit_clusters",
    "assign_clusters",
    "transition_matrix",
    "membership_prob_cdf",
    # Survival
    "WeeklyAttendance",
    "SurvivalRecord",
    "weekly_attendance",
    "survival_streak",
    "survival_records",
    "survival_cdf",
    "survival_shares",
    "gap_usage_stats",
    "intermediate_gap_cdf",
    # Critical visits
    "CriticalVisitTable",
    "MilestoneFit",
    "visit_count_in_window",
    "critical_visits",
    "critical_visit_table",
    "fit_milestone_line",
    # Demographics
    "DemographicPartition",
    "DeviationReport",
    "deviation",
    # Causal
    "TreatmentSpec",
    "CausalEstimate",
    "CausalContext",
    "CausalPipeline",
    "binarize_treatment",
    "effect_timeline",
    "effect_by_cluster",
    "self_reported_effects",
    "refute_random_common_cause",
    # Synthetic cohorts
    "GeneratorSpec",
    "GroundTruth",
    "generate_cohort",
    "ground_truth_att",
    # Application
    "RunConfig",
    "resolve_config",
    "CohortSource",
    "ArtifactSink",
    "DirectorySource",
    "DirectorySink",
    "HabitForgeApp",
]
