"""
Critical visit counts and the milestone line.

For a week w the cohort splits into members whose streak ended by week w and
those who kept going. The critical count c_w is the visit count (within the
first w weeks) that maximizes CDF_short(x) - CDF_long(x).
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import linregress

from .cohort import week_index
from .constants import Calendar, Columns, Defaults
from .distributions import cdf_at
from .errors import DomainError, EstimationError

logger = logging.getLogger(__name__)


# ============================================================================
# VISIT COUNTS
# ============================================================================
def visit_count_in_window(visits, contract_start, week):
    """Number of visits with week_index <= week."""
    if week < 1:
        raise DomainError(f"week must be >= 1, got {week}")
    return sum(1 for v in visits if week_index(v.date, contract_start) <= week)


def visit_count_matrix(cohort, max_week=Calendar.CONTRACT_WEEKS):
    """
    Cumulative visit counts: entry [i, w - 1] counts member i's visits in weeks 1..w.
    """
    visits = cohort.visit_frame
    in_range = visits[visits["week"] <= max_week]
    weekly = np.zeros((len(cohort), max_week), dtype=np.int64)
    np.add.at(weekly, (in_range["row"].to_numpy(), in_range["week"].to_numpy() - 1), 1)
    return np.cumsum(weekly, axis=1)


def _streak_array(cohort, records):
    streaks = {r.member_id: r.streak_weeks for r in records}
    missing = [mid for mid in cohort.member_ids if mid not in streaks]
    if missing:
        raise EstimationError(f"{len(missing)} members have no survival record")
    return np.array([streaks[mid] for mid in cohort.member_ids], dtype=np.int64)


# ============================================================================
# CRITICAL VISITS
# ============================================================================
@dataclass(frozen=True)
class CriticalEstimate:
    week: int
    critical_visits: int
    max_diff: float
    n_short: int
    n_long: int


def critical_split(short_counts, long_counts, week=None):
    """
    Count maximizing CDF_short - CDF_long over the observed counts.

    Ties go to the smallest count.

    Returns:
        (critical count, max difference)

    Raises:
        EstimationError: if either group is empty
    """
    short = np.sort(np.asarray(short_counts))
    long = np.sort(np.asarray(long_counts))
    if short.size == 0 or long.size == 0:
        where = f" at week {week}" if week is not None else ""
        raise EstimationError(
            f"survivor split{where} has {short.size} short and {long.size} long members"
        )
    support = np.union1d(short, long)
    diff = cdf_at(short, support) - cdf_at(long, support)
    best = int(np.argmax(diff))
    return int(support[best]), float(diff[best])


def visit_count_split(cohort, records, week, counts=None):
    """
    Visit counts in weeks 1..week of members with streak <= week and > week.

    Returns:
        (short_counts, long_counts) arrays
    """
    if not 1 <= week <= Calendar.CONTRACT_WEEKS:
        raise DomainError(f"week must be within 1..{Calendar.CONTRACT_WEEKS}, got {week}")
    if counts is None:
        counts = visit_count_matrix(cohort)
    streaks = _streak_array(cohort, records)
    in_window = counts[:, week - 1]
    return in_window[streaks <= week], in_window[streaks > week]


def critical_visits(cohort, records, week, counts=None):
    """
    Critical visit count of one week.

    Raises:
        EstimationError: if either survivor group is empty
    """
    if len(cohort) == 0:
        raise EstimationError("cohort is empty")
    short, long = visit_count_split(cohort, records, week, counts)
    c, max_diff = critical_split(short, long, week)
    return CriticalEstimate(week, c, max_diff, int(short.size), int(long.size))


@dataclass(frozen=True)
class CriticalVisitTable:
    """Per-week critical counts plus the weeks whose split was impossible."""

    entries: tuple
    flagged: tuple = ()

    def __len__(self):
        return len(self.entries)

    @property
    def weeks(self):
        return tuple(e.week for e in self.entries)

    def get(self, week):
        for entry in self.entries:
            if entry.week == week:
                return entry
        return None

    def thresholds(self):
        """week -> critical count."""
        return {e.week: e.critical_visits for e in self.entries}

    def to_frame(self):
        return pd.DataFrame(
            [(e.week, e.critical_visits, e.max_diff) for e in self.entries],
            columns=list(Columns.CRITICAL_TABLE),
        )


def critical_visit_table(cohort, records, weeks=None):
    """
    Critical counts for a week range, flagging weeks with an empty group.

    Args:
        weeks: Iterable of weeks, default 6..52
    """
    if weeks is None:
        low, high = Defaults.CRITICAL_WEEKS
        weeks = range(low, high + 1)
    counts = visit_count_matrix(cohort)
    entries, flagged = [], []
    for week in weeks:
        try:
            entries.append(critical_visits(cohort, records, week, counts))
        except EstimationError as exc:
            logger.warning("Week %d flagged: %s", week, exc)
            flagged.append(week)
    logger.info("Critical visit table: %d entries, %d flagged weeks", len(entries), len(flagged))
    return CriticalVisitTable(entries=tuple(entries), flagged=tuple(flagged))


# ============================================================================
# MILESTONES
# ============================================================================
@dataclass(frozen=True)
class MilestoneFit:
    """Least squares line critical_visits ~ slope * week + intercept."""

    slope: float
    intercept: float
    r_squared: float
    n: int

    def predict(self, week):
        return self.slope * week + self.intercept

    def to_json_dict(self):
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "n": self.n,
        }


def fit_milestone_line(table):
    """
    Ordinary least squares on the table's (week, critical count) pairs.

    Raises:
        EstimationError: with fewer than two entries
    """
    if len(table) < 2:
        raise EstimationError(f"milestone fit needs >= 2 entries, got {len(table)}")
    weeks = np.array([e.week for e in table.entries], dtype=float)
    counts = np.array([e.critical_visits for e in table.entries], dtype=float)
    if np.ptp(weeks) == 0:
        raise EstimationError("milestone fit needs at least two distinct weeks")
    result = linregress(weeks, counts)
    r_squared = float(result.rvalue**2) if np.ptp(counts) > 0 else 1.0
    return MilestoneFit(
        slope=float(result.slope),
        intercept=float(result.intercept),
        r_squared=r_squared,
        n=len(table),
    )


def milestone_outcomes(cohort, table, weeks):
    """
    Milestone flags: visits in weeks 1..w >= c_w.

    Returns:
        bool DataFrame indexed by member_id with one column per week

    Raises:
        EstimationError: if the table has no entry for a requested week
    """
    thresholds = table.thresholds()
    missing = [w for w in weeks if w not in thresholds]
    if missing:
        raise EstimationError(f"critical visit table has no entry for weeks {missing}")
    counts = visit_count_matrix(cohort)
    data = {w: counts[:, w - 1] >= thresholds[w] for w in weeks}
    return pd.DataFrame(data, index=pd.Index(cohort.member_ids, name="member_id"))
