"""
Visit vectorization: day-of-week x hourly-bin counts per member.

Bins cover 6:00-24:00 in hourly steps. A visit increments every bin from its
entry hour (clipped below at 6) up to, but excluding, min(exit_hour + 1, close)
where close is 20 on weekends and 23 on weekdays. A visit that would touch no
bin at all (entirely before 6 or after closing) counts once in the nearest
open bin of its day.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .cohort import write_frame
from .constants import Calendar, Hours
from .errors import DomainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class VisitVector:
    """7 x 18 bin counts for one member within an observation window."""

    member_id: str | None
    bins: np.ndarray
    window_weeks: int

    @property
    def flat(self):
        return self.bins.reshape(Hours.VECTOR_LENGTH)

    @property
    def total(self):
        return int(self.bins.sum())


@dataclass(frozen=True, eq=False)
class VisitMatrix:
    """Stacked visit vectors, one row per member in member-id order."""

    rows: np.ndarray
    row_ids: tuple
    window_weeks: int
    normalized: bool = False

    def __len__(self):
        return len(self.row_ids)

    @property
    def zero_rows(self):
        """Mask of members without any in-window visit-hour."""
        return ~(self.rows > 0).any(axis=1)

    @property
    def active_ids(self):
        return tuple(mid for mid, zero in zip(self.row_ids, self.zero_rows) if not zero)

    def to_frame(self):
        frame = pd.DataFrame(self.rows, columns=bin_columns())
        frame.insert(0, "member_id", list(self.row_ids))
        return frame


def bin_columns():
    """Column names d{day}_h{hour} in row-major (day, hour) order."""
    return [
        Hours.bin_column(day, Hours.FIRST_BIN_HOUR + offset)
        for day in range(Calendar.DAYS_PER_WEEK)
        for offset in range(Hours.N_BINS)
    ]


def opening_hours(weekdays):
    """
    Opening and closing hour of every day of week (0 = Monday).

    Returns:
        (open, close) int arrays; close is the exclusive upper hour
    """
    weekend = np.isin(np.asarray(weekdays, dtype=np.int64), Calendar.WEEKEND_DAYS)
    opening = np.where(weekend, Hours.WEEKEND_OPEN, Hours.WEEKDAY_OPEN)
    closing = np.where(weekend, Hours.WEEKEND_CLOSE, Hours.WEEKDAY_CLOSE)
    return opening, closing


def accumulate_bins(rows, weekdays, entries, exits, n_rows):
    """
    Add every visit's hourly bins into a (n_rows, 7, 18) count array.

    Args:
        rows: Row index of each visit
        weekdays: Day of week of each visit (0 = Monday)
        entries: Entry hour of each visit
        exits: Exit hour of each visit
        n_rows: Number of output rows

    Returns:
        int64 array of shape (n_rows, 7, 18)
    """
    rows = np.asarray(rows, dtype=np.int64)
    weekdays = np.asarray(weekdays, dtype=np.int64)
    entries = np.asarray(entries, dtype=np.int64)
    exits = np.asarray(exits, dtype=np.int64)
    counts = np.zeros((n_rows, Calendar.DAYS_PER_WEEK, Hours.N_BINS), dtype=np.int64)
    if rows.size == 0:
        return counts

    opening, close = opening_hours(weekdays)
    upper = np.minimum(exits + 1, close)
    lower = np.maximum(entries, Hours.FIRST_BIN_HOUR)
    # Every visit touches at least one bin
    outside = lower >= upper
    nearest = np.clip(entries, opening, close - 1)
    lower = np.where(outside, nearest, lower)
    upper = np.where(outside, nearest + 1, upper)
    for offset in range(Hours.N_BINS):
        hour = Hours.FIRST_BIN_HOUR + offset
        hit = (lower <= hour) & (hour < upper)
        np.add.at(counts, (rows[hit], weekdays[hit], offset), 1)
    return counts


def build_visit_vector(visits, contract_start, window_weeks, member_id=None):
    """
    Visit vector of a single member.

    Args:
        visits: VisitEvent sequence, all for the same member
        contract_start: The member's contract start date
        window_weeks: Only visits with week_index <= window_weeks count

    Raises:
        DomainError: window_weeks < 1, entry after exit, or visits of several members
    """
    if window_weeks < 1:
        raise DomainError(f"window_weeks must be >= 1, got {window_weeks}")
    owners = {v.member_id for v in visits}
    if len(owners) > 1:
        raise DomainError(f"visits belong to {len(owners)} members")
    if member_id is None and owners:
        member_id = owners.pop()

    kept = []
    for visit in visits:
        if visit.entry_hour > visit.exit_hour:
            raise DomainError(f"entry_hour {visit.entry_hour} after exit_hour {visit.exit_hour}")
        days = (visit.date - contract_start).days
        if days < 0:
            raise DomainError(f"visit on {visit.date} precedes contract start {contract_start}")
        if 1 + days // Calendar.DAYS_PER_WEEK <= window_weeks:
            kept.append(visit)

    counts = accumulate_bins(
        np.zeros(len(kept), dtype=np.int64),
        [v.date.weekday() for v in kept],
        [v.entry_hour for v in kept],
        [v.exit_hour for v in kept],
        n_rows=1,
    )
    return VisitVector(member_id=member_id, bins=counts[0], window_weeks=window_weeks)


def build_matrix(cohort, window_weeks, normalize=False):
    """
    Stack all members' visit vectors for a window.

    Members with no in-window visits produce zero rows (see VisitMatrix.zero_rows).
    With normalize=True non-zero rows are scaled to sum to 1.
    """
    if window_weeks < 1:
        raise DomainError(f"window_weeks must be >= 1, got {window_weeks}")
    visits = cohort.visit_frame
    in_window = visits[visits["week"] <= window_weeks]
    counts = accumulate_bins(
        in_window["row"].to_numpy(),
        in_window["weekday"].to_numpy(),
        in_window["entry_hour"].to_numpy(),
        in_window["exit_hour"].to_numpy(),
        n_rows=len(cohort),
    )
    rows = counts.reshape(len(cohort), Hours.VECTOR_LENGTH)
    if normalize:
        totals = rows.sum(axis=1, keepdims=True)
        rows = np.divide(rows, totals, out=np.zeros(rows.shape), where=totals > 0)
    matrix = VisitMatrix(
        rows=rows, row_ids=cohort.member_ids, window_weeks=window_weeks, normalized=normalize
    )
    logger.info(
        "Built %d x %d visit matrix for window %d (%d zero rows)",
        rows.shape[0], rows.shape[1], window_weeks, int(matrix.zero_rows.sum()),
    )
    return matrix


def write_matrix_csv(matrix, path):
    write_frame(matrix.to_frame(), path)
