"""
Survival streaks, gap-week usage and intermediate-gap statistics.

A streak runs from week 1 until the first run of (gap_tolerance + 1)
consecutive absent weeks. Its length is the last attended week before that
run, so a trailing absent week never extends it. Absent weeks inside the
streak are gap weeks.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .cohort import week_index
from .constants import Calendar, Columns, Defaults, Grouping, HabitStage
from .distributions import EmpiricalCDF
from .errors import DomainError, ValidationError

logger = logging.getLogger(__name__)


# ============================================================================
# TYPES
# ============================================================================
@dataclass(frozen=True, eq=False)
class WeeklyAttendance:
    """Attendance flags for membership weeks 1..52 (index 0 = week 1)."""

    member_id: str | None
    attended: np.ndarray

    def __post_init__(self):
        attended = np.asarray(self.attended, dtype=bool)
        if attended.shape != (Calendar.CONTRACT_WEEKS,):
            raise ValidationError(
                f"attendance must cover {Calendar.CONTRACT_WEEKS} weeks, got shape {attended.shape}"
            )
        object.__setattr__(self, "attended", attended)

    def __getitem__(self, week):
        """Attendance of a 1-based week."""
        return bool(self.attended[week - 1])

    @property
    def weeks_attended(self):
        return int(self.attended.sum())


@dataclass(frozen=True)
class SurvivalRecord:
    member_id: str | None
    streak_weeks: int
    gaps_used: int
    gap_week_indices: tuple = ()

    def __post_init__(self):
        if self.gaps_used != len(self.gap_week_indices):
            raise ValidationError(
                f"gaps_used={self.gaps_used} but {len(self.gap_week_indices)} gap weeks listed"
            )
        if any(not 1 <= w < self.streak_weeks for w in self.gap_week_indices):
            raise ValidationError(f"gap weeks {self.gap_week_indices} outside the streak")

    @property
    def stage(self):
        return habit_stage(self.streak_weeks)


# ============================================================================
# ATTENDANCE
# ============================================================================
def weekly_attendance(visits, contract_start, member_id=None):
    """
    Attendance flags from one member's visits.

    Visits after week 52 belong to a renewed contract and are ignored.
    """
    attended = np.zeros(Calendar.CONTRACT_WEEKS, dtype=bool)
    for visit in visits:
        week = week_index(visit.date, contract_start)
        if week <= Calendar.CONTRACT_WEEKS:
            attended[week - 1] = True
    if member_id is None and visits:
        member_id = visits[0].member_id
    return WeeklyAttendance(member_id=member_id, attended=attended)


def attendance_matrix(cohort):
    """Boolean (members x 52) attendance array in cohort member order."""
    visits = cohort.visit_frame
    in_contract = visits[visits["week"] <= Calendar.CONTRACT_WEEKS]
    attended = np.zeros((len(cohort), Calendar.CONTRACT_WEEKS), dtype=bool)
    attended[in_contract["row"].to_numpy(), in_contract["week"].to_numpy() - 1] = True
    return attended


# ============================================================================
# STREAKS
# ============================================================================
def _check_tolerance(gap_tolerance):
    if not 0 <= gap_tolerance < Calendar.CONTRACT_WEEKS:
        raise DomainError(f"gap_tolerance must be within 0..{Calendar.CONTRACT_WEEKS - 1}")


def survival_streaks(attended, gap_tolerance=Defaults.GAP_TOLERANCE):
    """
    Streak length of every row of a (members x weeks) attendance array.

    Returns:
        (streaks, gap_mask) where gap_mask marks the gap weeks of each row
    """
    _check_tolerance(gap_tolerance)
    attended = np.atleast_2d(np.asarray(attended, dtype=bool))
    n, n_weeks = attended.shape
    absent = ~attended
    run = gap_tolerance + 1
    first_break = np.full(n, n_weeks, dtype=np.int64)
    if run <= n_weeks:
        breaks = sliding_window_view(absent, run, axis=1).all(axis=2)
        has_break = breaks.any(axis=1)
        first_break[has_break] = breaks[has_break].argmax(axis=1)

    weeks = np.arange(1, n_weeks + 1)
    before_break = weeks[None, :] <= first_break[:, None]
    streaks = (np.where(attended & before_break, weeks[None, :], 0)).max(axis=1, initial=0)
    gap_mask = absent & (weeks[None, :] < streaks[:, None])
    return streaks.astype(np.int64), gap_mask


def survival_streak(att, gap_tolerance=Defaults.GAP_TOLERANCE):
    """
    Survival record of one attendance series.

    Args:
        att: WeeklyAttendance or a boolean sequence (index 0 = week 1)
        gap_tolerance: Longest absence run that does not break the streak
    """
    member_id = getattr(att, "member_id", None)
    attended = getattr(att, "attended", att)
    streaks, gap_mask = survival_streaks(np.asarray(attended, dtype=bool)[None, :], gap_tolerance)
    gap_weeks = tuple(int(w) for w in np.flatnonzero(gap_mask[0]) + 1)
    return SurvivalRecord(
        member_id=member_id,
        streak_weeks=int(streaks[0]),
        gaps_used=len(gap_weeks),
        gap_week_indices=gap_weeks,
    )


def survival_records(cohort, gap_tolerance=Defaults.GAP_TOLERANCE):
    """Survival records of every member, in cohort member order."""
    streaks, gap_mask = survival_streaks(attendance_matrix(cohort), gap_tolerance)
    records = []
    for member_id, streak, gaps in zip(cohort.member_ids, streaks, gap_mask):
        gap_weeks = tuple(int(w) for w in np.flatnonzero(gaps) + 1)
        records.append(SurvivalRecord(member_id, int(streak), len(gap_weeks), gap_weeks))
    logger.info(
        "Computed %d survival records (gap tolerance %d)", len(records), gap_tolerance
    )
    return records


def habit_stage(streak_weeks):
    if streak_weeks < Defaults.HABIT_WEEK:
        return HabitStage.DROPOUT
    if streak_weeks < Defaults.SUSTAINED_WEEK:
        return HabitStage.HABIT_HOLDER
    return HabitStage.SUSTAINED


def records_to_frame(records):
    return pd.DataFrame(
        [
            (r.member_id, r.streak_weeks, r.gaps_used, ";".join(str(w) for w in r.gap_week_indices))
            for r in records
        ],
        columns=list(Columns.SURVIVAL_RECORDS),
    )


# ============================================================================
# GROUPED CDFS
# ============================================================================
def band_label(low, high):
    return f"{low}+" if high is None else f"{low}-{high}"


def age_band(age, bands=Defaults.AGE_BANDS):
    """Label of the band holding an age, or None."""
    for low, high in bands:
        if age >= low and (high is None or age <= high):
            return band_label(low, high)
    return None


def group_keys(cohort, group_by, labels=None, age_bands=Defaults.AGE_BANDS):
    """
    member_id -> group label for a grouping key.

    Args:
        cohort: CohortDataset
        group_by: One of Grouping.CHOICES
        labels: member_id -> cluster name, required for cluster grouping

    Raises:
        ValidationError: unknown key, or cluster grouping without labels
    """
    if group_by not in Grouping.CHOICES:
        raise ValidationError(f"unknown grouping key '{group_by}'")
    if group_by == Grouping.ALL:
        return {m.member_id: Grouping.ALL for m in cohort.members}
    if group_by == Grouping.GENDER:
        return {m.member_id: str(m.gender) for m in cohort.members}
    if group_by == Grouping.AGE_BAND:
        return {m.member_id: age_band(m.age, age_bands) for m in cohort.members}
    if labels is None:
        raise ValidationError("cluster grouping needs cluster labels")
    return dict(labels)


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    """Empirical streak CDF of one group."""

    group: str
    cdf: EmpiricalCDF

    @property
    def n(self):
        return self.cdf.n

    def share_below(self, week):
        """Fraction of members whose streak is shorter than week."""
        return float(self.cdf(week - 1))

    def share_surviving(self, week):
        """Fraction of members whose streak reaches week."""
        return 1.0 - self.share_below(week)


def survival_cdf(records, group_by=Grouping.ALL, keys=None):
    """
    Streak CDF per group.

    Args:
        records: SurvivalRecord sequence
        group_by: Grouping key name
        keys: member_id -> group label (see group_keys); ignored for "all"

    Returns:
        dict of group label -> SurvivalCurve, in sorted label order

    Raises:
        ValidationError: unknown grouping key or members missing from keys
    """
    if group_by not in Grouping.CHOICES:
        raise ValidationError(f"unknown grouping key '{group_by}'")
    if group_by == Grouping.ALL:
        streaks = [r.streak_weeks for r in records]
        return {Grouping.ALL: SurvivalCurve(Grouping.ALL, EmpiricalCDF.from_values(streaks))}
    if keys is None:
        raise ValidationError(f"grouping by '{group_by}' needs group keys")

    grouped = {}
    for record in records:
        key = keys.get(record.member_id)
        if key is None:
            raise ValidationError(f"member {record.member_id} has no '{group_by}' group")
        grouped.setdefault(str(key), []).append(record.streak_weeks)
    return {
        key: SurvivalCurve(key, EmpiricalCDF.from_values(values))
        for key, values in sorted(grouped.items())
    }


def survival_summary(records):
    """Headline survival numbers of a record set."""
    curve = survival_cdf(records)[Grouping.ALL]
    stages = pd.Series([r.stage for r in records], dtype=object).value_counts()
    return {
        "n_members": curve.n,
        "share_below_habit_week": curve.share_below(Defaults.HABIT_WEEK),
        "share_surviving_habit_week": curve.share_surviving(Defaults.HABIT_WEEK),
        "share_surviving_sustained_week": curve.share_surviving(Defaults.SUSTAINED_WEEK),
        "median_streak": curve.cdf.median(),
        "stages": {stage: int(stages.get(stage, 0)) for stage in HabitStage.ALL},
        "total_gaps": int(sum(r.gaps_used for r in records)),
    }


def survival_shares(curves):
    """
    Milestone shares of every group.

    Args:
        curves: grouping name -> {group -> SurvivalCurve}, as built per grouping by survival_cdf

    Returns:
        DataFrame with Columns.SURVIVAL_SHARES, one row per (grouping, group)
    """
    rows = [
        (
            group_by,
            group,
            curve.n,
            curve.share_below(Defaults.HABIT_WEEK),
            curve.share_surviving(Defaults.HABIT_WEEK),
            curve.share_surviving(Defaults.SUSTAINED_WEEK),
        )
        for group_by, grouped in curves.items()
        for group, curve in grouped.items()
    ]
    return pd.DataFrame(rows, columns=list(Columns.SURVIVAL_SHARES))


# ============================================================================
# GAP USAGE
# ============================================================================
@dataclass(frozen=True, eq=False)
class GapUsageStats:
    """
    gaps_per_week: gap weeks at each membership week (Series indexed 1..52)
    rate_by_week: per survival bin, gap rate at each week among members still in their streak
    rate_by_weeks_to_end: per survival bin, gap rate by distance to the streak's last week
    joint: members by streak_weeks (rows) x gaps_used (columns)
    """

    gaps_per_week: pd.Series
    rate_by_week: pd.DataFrame
    rate_by_weeks_to_end: pd.DataFrame
    joint: pd.DataFrame


def _rate_frame(bin_name, positions, gaps, at_risk, position_name):
    rates = np.divide(gaps, at_risk, out=np.zeros(len(gaps)), where=at_risk > 0)
    return pd.DataFrame(
        {
            "bin": bin_name,
            position_name: positions,
            "gaps": gaps,
            "at_risk": at_risk,
            "rate": rates,
        }
    )


def gap_usage_stats(records, bins=Defaults.SURVIVAL_BINS):
    """
    Gap-week usage aggregated over records.

    Args:
        records: SurvivalRecord sequence
        bins: (low, high) inclusive streak-length bins
    """
    weeks = np.arange(1, Calendar.CONTRACT_WEEKS + 1)
    streaks = np.array([r.streak_weeks for r in records], dtype=np.int64)
    gaps = np.zeros((len(records), Calendar.CONTRACT_WEEKS), dtype=bool)
    for i, record in enumerate(records):
        gaps[i, np.asarray(record.gap_week_indices, dtype=np.int64) - 1] = True

    gaps_per_week = pd.Series(gaps.sum(axis=0), index=pd.Index(weeks, name="week"), name="gaps")

    by_week, by_end = [], []
    for low, high in bins:
        name = band_label(low, high)
        in_bin = (streaks >= low) & (streaks <= high)
        bin_gaps = gaps[in_bin]
        bin_streaks = streaks[in_bin]
        # Week w lies inside the streak when streak >= w
        at_risk = (bin_streaks[:, None] >= weeks[None, :]).sum(axis=0)
        by_week.append(_rate_frame(name, weeks, bin_gaps.sum(axis=0), at_risk, "week"))

        distance = np.arange(Calendar.CONTRACT_WEEKS)
        to_end = bin_streaks[:, None] - weeks[None, :]
        end_gaps = np.array([(bin_gaps & (to_end == d)).sum() for d in distance])
        end_risk = (bin_streaks[:, None] > distance[None, :]).sum(axis=0)
        by_end.append(_rate_frame(name, distance, end_gaps, end_risk, "weeks_to_end"))

    joint = pd.crosstab(
        pd.Series(streaks, name="streak_weeks"),
        pd.Series([r.gaps_used for r in records], name="gaps_used", dtype=np.int64),
    )
    return GapUsageStats(
        gaps_per_week=gaps_per_week,
        rate_by_week=pd.concat(by_week, ignore_index=True),
        rate_by_weeks_to_end=pd.concat(by_end, ignore_index=True),
        joint=joint,
    )


# ============================================================================
# INTERMEDIATE GAPS
# ============================================================================
def intermediate_gaps(att):
    """Lengths of absence runs with an attended week on both sides."""
    attended = np.asarray(getattr(att, "attended", att), dtype=bool)
    weeks = np.flatnonzero(attended)
    if weeks.size < 2:
        return []
    runs = np.diff(weeks) - 1
    return [int(r) for r in runs[runs > 0]]


def intermediate_gap_cdf(attendance_set):
    """
    Pooled CDF of intermediate gap lengths.

    Args:
        attendance_set: WeeklyAttendance iterable or a (members x weeks) boolean array
    """
    lengths = []
    for att in attendance_set:
        lengths.extend(intermediate_gaps(att))
    return EmpiricalCDF.from_values(lengths)
