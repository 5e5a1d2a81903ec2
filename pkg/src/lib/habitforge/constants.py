"""
Constants for the habitforge toolkit.
All magic strings and numbers are defined here for easy maintenance.
"""


# ============================================================================
# MEMBERSHIP CALENDAR
# ============================================================================
class Calendar:
    """Membership-relative calendar constants."""
    DAYS_PER_WEEK = 7
    CONTRACT_WEEKS = 52

    # 0 = Monday
    WEEKEND_DAYS = (5, 6)
    DAY_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")


# ============================================================================
# OPERATING HOURS / VISIT VECTOR LAYOUT
# ============================================================================
class Hours:
    """Hourly bin layout of a visit vector."""
    FIRST_BIN_HOUR = 6
    N_BINS = 18          # 6:00-24:00
    VECTOR_LENGTH = Calendar.DAYS_PER_WEEK * N_BINS

    # Exclusive upper hour of the last usable bin
    WEEKDAY_CLOSE = 23
    WEEKEND_CLOSE = 20
    WEEKDAY_OPEN = 6
    WEEKEND_OPEN = 8

    @staticmethod
    def bin_column(day, hour):
        """Matrix column name for a day (0-6) and hour (6-23)."""
        return f"d{day}_h{hour:02d}"


# ============================================================================
# CSV SCHEMAS
# ============================================================================
class Columns:
    """Headers of every file the toolkit reads or writes."""
    MEMBERS = (
        "member_id",
        "age",
        "gender",
        "bmi",
        "contract_start",
        "main_club",
        "membership_category",
        "experience_level",
        "form_level",
        "est_visit_frequency",
        "contract_type",
        "paid",
    )
    VISITS = ("member_id", "date", "entry_hour", "exit_hour")
    INTERVENTIONS = (
        "member_id",
        "group_lessons_6w",
        "pt_sessions_6w",
        "invitation_credits_6w",
        "distinct_clubs_6w",
        "distinct_group_lessons_6w",
    )
    SURVIVAL_RECORDS = ("member_id", "streak_weeks", "gaps_used", "gap_week_indices")
    SURVIVAL_SHARES = (
        "group_by",
        "group",
        "n_members",
        "share_below_habit_week",
        "share_surviving_habit_week",
        "share_surviving_sustained_week",
    )
    CRITICAL_TABLE = ("week", "critical_visits", "max_cdf_diff")
    DEVIATIONS = ("cluster", "group", "p_conditional", "p_marginal", "deviation")
    ESTIMATES = (
        "treatment",
        "level",
        "week",
        "cluster",
        "att",
        "n_treated",
        "n_matched",
        "refute_estimate",
        "refute_p",
    )


# ============================================================================
# FILE NAMES
# ============================================================================
class Files:
    """Artifact names shared by subcommands."""
    MEMBERS = "members.csv"
    VISITS = "visits.csv"
    INTERVENTIONS = "interventions.csv"
    TRUTH = "truth.json"
    CLUSTERS = "clusters.csv"
    CLUSTERS_LATE = "clusters_late.csv"
    CLUSTER_MODEL = "cluster_model.json"
    TRANSITION = "transition.csv"
    MEMBERSHIP_CDF = "membership_cdf.csv"
    SURVIVAL_RECORDS = "survival_records.csv"
    SURVIVAL_CDF = "survival_cdf.csv"
    SURVIVAL_SUMMARY = "survival_summary.json"
    SURVIVAL_SHARES = "survival_shares.csv"
    GAPS_PER_WEEK = "gaps_per_week.csv"
    GAP_RATE_BY_WEEK = "gap_rate_by_week.csv"
    GAP_RATE_BY_WEEKS_TO_END = "gap_rate_by_weeks_to_end.csv"
    GAP_JOINT = "gaps_by_streak.csv"
    INTERMEDIATE_GAP_CDF = "intermediate_gap_cdf.csv"
    CRITICAL_TABLE = "critical_visits.csv"
    MILESTONE_FIT = "milestone_fit.json"
    DEVIATIONS = "deviations.csv"
    ESTIMATES = "causal_estimates.csv"
    BALANCE = "causal_balance.csv"
    SUMMARY = "summary.json"

    # Report figures
    FIG_COMPONENTS = "fig_components.svg"
    FIG_MEMBERSHIP_CDF = "fig_membership_cdf.svg"
    FIG_TRANSITION = "fig_transition.svg"
    FIG_SURVIVAL = "fig_survival_{group_by}.svg"
    FIG_GAP_USAGE = "fig_gap_usage.svg"
    FIG_INTERMEDIATE_GAPS = "fig_intermediate_gaps.svg"
    FIG_CRITICAL_SPLIT = "fig_critical_split_w{week}.svg"
    FIG_MILESTONE_FIT = "fig_milestone_fit.svg"
    FIG_DEVIATIONS = "fig_deviations_{partition}.svg"
    FIG_EFFECT_TIMELINE = "fig_effects_{treatment}_{level}.svg"
    FIG_CLUSTER_EFFECTS = "fig_cluster_effects_{treatment}_{level}.svg"

    @staticmethod
    def matrix(window_weeks):
        return f"matrix_w{window_weeks}.csv"

    @staticmethod
    def manifest(subcommand):
        return f"manifest_{subcommand}.json"


# ============================================================================
# TREATMENTS
# ============================================================================
class Treatment:
    """Treatment variables and their source columns."""
    GROUP_LESSONS = "group_lessons"
    PT_SESSIONS = "pt_sessions"
    INVITATION_CREDITS = "invitation_credits"
    DISTINCT_CLUBS = "distinct_clubs"
    DISTINCT_GROUP_LESSONS = "distinct_group_lessons"

    FORM_LEVEL = "form_level"
    EXPERIENCE_LEVEL = "experience_level"
    EST_VISIT_FREQUENCY = "est_visit_frequency"

    INTERVENTIONS = (
        GROUP_LESSONS,
        PT_SESSIONS,
        INVITATION_CREDITS,
        DISTINCT_CLUBS,
        DISTINCT_GROUP_LESSONS,
    )
    SELF_REPORTED = (FORM_LEVEL, EXPERIENCE_LEVEL, EST_VISIT_FREQUENCY)
    ALL = INTERVENTIONS + SELF_REPORTED

    # Number of ordinal levels of each self-reported variable
    SELF_REPORTED_LEVELS = {
        FORM_LEVEL: 3,
        EXPERIENCE_LEVEL: 4,
        EST_VISIT_FREQUENCY: 3,
    }

    FOUR_LEVEL = "four_level"
    THRESHOLD = "threshold"
    SCHEMES = (FOUR_LEVEL, THRESHOLD)

    @staticmethod
    def csv_column(variable):
        """interventions.csv column for an intervention variable."""
        return f"{variable}_6w"


# ============================================================================
# TREATMENT LEVELS
# ============================================================================
class Level:
    """Binarized treatment levels."""
    NONE = "none"
    LOW = "low"
    MODERATE = "moderate"
    HIGH = "high"

    TREATED = "treated"
    CONTROL = "control"

    FOUR_LEVEL = (NONE, LOW, MODERATE, HIGH)
    POSITIVE = (LOW, MODERATE, HIGH)

    # Percentiles over strictly positive values
    LOW_CUT_PERCENTILE = 33
    HIGH_CUT_PERCENTILE = 66


# ============================================================================
# BEHAVIORAL ARCHETYPES
# ============================================================================
class Archetype:
    """Time-of-day archetypes, in peak-hour order."""
    MORNING = "morning"
    NOON = "noon"
    AFTERNOON = "afternoon"
    EVENING = "evening"
    NIGHT = "night"

    ALL = (MORNING, NOON, AFTERNOON, EVENING, NIGHT)


# ============================================================================
# GROUPINGS
# ============================================================================
class Grouping:
    """Keys accepted by survival_cdf."""
    ALL = "all"
    GENDER = "gender"
    CLUSTER = "cluster"
    AGE_BAND = "age_band"

    CHOICES = (ALL, GENDER, CLUSTER, AGE_BAND)


class HabitStage:
    """Streak-length classes bounded by the two reference milestones."""
    DROPOUT = "dropout"
    HABIT_HOLDER = "habit_holder"
    SUSTAINED = "sustained"

    ALL = (DROPOUT, HABIT_HOLDER, SUSTAINED)


# ============================================================================
# DEFAULTS
# ============================================================================
class Defaults:
    """Default values for every tunable."""
    SEED = 0
    N_MEMBERS = 1000
    PRESET = "calibrated"

    # Cohort
    MIN_AGE = 14
    CONTRACT_TYPES = ("annual",)

    # Clustering
    K = 5
    WINDOW = 6
    LATE_WINDOW = 17
    NMF_MAX_ITERS = 500
    NMF_TOL = 1e-6
    NMF_EPS = 1e-12
    NMF_RESTARTS = 10

    # Survival
    GAP_TOLERANCE = 1
    SURVIVAL_BINS = ((1, 5), (6, 16), (17, 29), (30, 52))
    HABIT_WEEK = 6
    SUSTAINED_WEEK = 17

    # Demographics (None = open upper bound)
    AGE_BANDS = ((14, 20), (21, 27), (28, 34), (35, 48), (49, None))

    # Critical visits
    CRITICAL_WEEKS = (6, 52)

    # Causal
    OUTCOME_WEEKS = (6, 17)
    CLUSTER_WEEKS = (6, 17)
    RIDGE = 1e-3
    RIDGE_ESCALATION = 100.0
    NEWTON_MAX_ITER = 100
    NEWTON_TOL = 1e-8
    LOGIT_CLIP = 35.0
    BOOTSTRAP_RESAMPLES = 1000
    BAND_LEVEL = 0.95
    REFUTE_DRAWS = 0
    CLUSTER_ENCODING = "label"
    CLUSTER_ENCODINGS = ("label", "probabilities")


class ExitCode:
    """Process exit statuses."""
    OK = 0
    ERROR = 1
    USAGE = 2


class Env:
    """Environment variables."""
    SEED = "HABITFORGE_SEED"
