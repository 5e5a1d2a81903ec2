"""
Cohort domain types, CSV ingestion/serialization, filtering and week indexing.

All types are immutable after construction and can be shared read-only.
"""
import logging
from dataclasses import dataclass, field
from datetime import date
from enum import StrEnum
from functools import cached_property
from pathlib import Path
from types import MappingProxyType

import numpy as np
import pandas as pd

from .constants import Calendar, Columns, Defaults, Files, Treatment
from .errors import DomainError, ParseError, ValidationError

logger = logging.getLogger(__name__)

_TRUE = ("true", "1", "yes")
_FALSE = ("false", "0", "no")


class Gender(StrEnum):
    FEMALE = "female"
    MALE = "male"


# ============================================================================
# DOMAIN TYPES
# ============================================================================
@dataclass(frozen=True)
class MemberProfile:
    """One member's profile as of contract start."""

    member_id: str
    age: int
    gender: Gender
    bmi: float
    contract_start: date
    main_club: str
    membership_category: str
    experience_level: int | None = None
    form_level: int | None = None
    est_visit_frequency: int | None = None
    contract_type: str = "annual"
    paid: bool = True

    def __post_init__(self):
        if not self.member_id:
            raise ValidationError("member_id must not be empty")
        if self.age < Defaults.MIN_AGE:
            raise ValidationError(f"age {self.age} below minimum {Defaults.MIN_AGE}")
        if not self.bmi > 0:
            raise ValidationError(f"bmi must be positive, got {self.bmi}")
        object.__setattr__(self, "gender", Gender(self.gender))
        for name in Treatment.SELF_REPORTED:
            value = getattr(self, name)
            top = Treatment.SELF_REPORTED_LEVELS[name] - 1
            if value is not None and not 0 <= value <= top:
                raise ValidationError(f"{name} must be within 0..{top}, got {value}")

    @property
    def is_complete_responder(self):
        """True when every self-reported field is present."""
        return all(getattr(self, name) is not None for name in Treatment.SELF_REPORTED)


@dataclass(frozen=True, slots=True)
class VisitEvent:
    """A single gym entry/exit on one calendar day."""

    member_id: str
    date: date
    entry_hour: int
    exit_hour: int

    def __post_init__(self):
        if not (0 <= self.entry_hour <= 23 and 0 <= self.exit_hour <= 23):
            raise DomainError(
                f"hours must be within 0..23, got {self.entry_hour}-{self.exit_hour}"
            )
        if self.entry_hour > self.exit_hour:
            raise DomainError(
                f"entry_hour {self.entry_hour} after exit_hour {self.exit_hour}"
            )


@dataclass(frozen=True)
class InterventionCounts:
    """Interventions received during the first six membership weeks."""

    member_id: str
    group_lessons: int = 0
    pt_sessions: int = 0
    invitation_credits: int = 0
    distinct_clubs: int = 0
    distinct_group_lessons: int = 0

    def __post_init__(self):
        for name in Treatment.INTERVENTIONS:
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative for {self.member_id}")

    def get(self, variable):
        return getattr(self, variable)


@dataclass(frozen=True)
class CohortRules:
    """Declarative inclusion rules applied by filter_cohort."""

    contract_types: tuple = Defaults.CONTRACT_TYPES
    require_paid: bool = True

    def accepts(self, member):
        if member.contract_type not in self.contract_types:
            return False
        return member.paid or not self.require_paid


@dataclass(frozen=True, eq=False)
class CohortDataset:
    """
    Members, their visits and their intervention counts.

    Members are kept in member-id order and visits in (member, date, hour)
    order, so every derived matrix has a stable row order.
    """

    members: tuple = ()
    visits: tuple = ()
    interventions: dict = field(default_factory=dict)

    def __post_init__(self):
        members = tuple(sorted(self.members, key=lambda m: m.member_id))
        visits = tuple(
            sorted(self.visits, key=lambda v: (v.member_id, v.date, v.entry_hour, v.exit_hour))
        )
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "visits", visits)
        object.__setattr__(self, "interventions", MappingProxyType(dict(self.interventions)))
        self._validate()

    def _validate(self):
        starts = {}
        for member in self.members:
            if member.member_id in starts:
                raise ValidationError(f"duplicate member_id {member.member_id}")
            starts[member.member_id] = member.contract_start
        for visit in self.visits:
            start = starts.get(visit.member_id)
            if start is None:
                raise ValidationError(f"visit references unknown member {visit.member_id}")
            if visit.date < start:
                raise ValidationError(
                    f"visit on {visit.date} precedes contract start {start} "
                    f"for member {visit.member_id}"
                )
        for member_id in self.interventions:
            if member_id not in starts:
                raise ValidationError(f"interventions reference unknown member {member_id}")

    def __len__(self):
        return len(self.members)

    @cached_property
    def member_ids(self):
        return tuple(m.member_id for m in self.members)

    @cached_property
    def profiles(self):
        return {m.member_id: m for m in self.members}

    @cached_property
    def visits_by_member(self):
        grouped = {member_id: [] for member_id in self.member_ids}
        for visit in self.visits:
            grouped[visit.member_id].append(visit)
        return {member_id: tuple(items) for member_id, items in grouped.items()}

    def intervention(self, member_id):
        """Counts for a member; members without a row received nothing."""
        counts = self.interventions.get(member_id)
        return counts if counts is not None else InterventionCounts(member_id)

    @cached_property
    def visit_frame(self):
        """
        One row per visit with its member row index, membership week and weekday.

        Returns:
            DataFrame with columns row, member_id, day_offset, week, weekday,
            entry_hour, exit_hour
        """
        n = len(self.visits)
        index = {member_id: i for i, member_id in enumerate(self.member_ids)}
        starts = np.array([m.contract_start.toordinal() for m in self.members], dtype=np.int64)
        rows = np.fromiter((index[v.member_id] for v in self.visits), dtype=np.int64, count=n)
        ordinals = np.fromiter((v.date.toordinal() for v in self.visits), dtype=np.int64, count=n)
        offsets = ordinals - starts[rows] if n else np.empty(0, dtype=np.int64)
        return pd.DataFrame(
            {
                "row": rows,
                "member_id": [v.member_id for v in self.visits],
                "day_offset": offsets,
                "week": 1 + offsets // Calendar.DAYS_PER_WEEK,
                # date.toordinal() == 1 is a Monday
                "weekday": (ordinals - 1) % Calendar.DAYS_PER_WEEK,
                "entry_hour": np.fromiter((v.entry_hour for v in self.visits), np.int64, n),
                "exit_hour": np.fromiter((v.exit_hour for v in self.visits), np.int64, n),
            }
        )

    @cached_property
    def member_frame(self):
        """Profiles and intervention counts indexed by member_id."""
        records = []
        for member in self.members:
            counts = self.intervention(member.member_id)
            record = {
                "member_id": member.member_id,
                "age": member.age,
                "gender": str(member.gender),
                "bmi": member.bmi,
                "contract_start": member.contract_start.toordinal(),
                "main_club": member.main_club,
                "membership_category": member.membership_category,
            }
            for name in Treatment.SELF_REPORTED:
                value = getattr(member, name)
                record[name] = np.nan if value is None else float(value)
            for name in Treatment.INTERVENTIONS:
                record[name] = counts.get(name)
            records.append(record)
        columns = ["member_id", "age", "gender", "bmi", "contract_start", "main_club",
                   "membership_category", *Treatment.SELF_REPORTED, *Treatment.INTERVENTIONS]
        return pd.DataFrame(records, columns=columns).set_index("member_id")

    def subset(self, member_ids):
        """Cohort restricted to the given members."""
        keep = set(member_ids)
        return CohortDataset(
            members=tuple(m for m in self.members if m.member_id in keep),
            visits=tuple(v for v in self.visits if v.member_id in keep),
            interventions={k: v for k, v in self.interventions.items() if k in keep},
        )


# ============================================================================
# OPERATIONS
# ============================================================================
def week_index(day, contract_start):
    """
    Membership week of a date; week 1 covers days 0-6 after contract start.

    Raises:
        DomainError: if day precedes contract_start
    """
    days = (day - contract_start).days
    if days < 0:
        raise DomainError(f"date {day} precedes contract start {contract_start}")
    return 1 + days // Calendar.DAYS_PER_WEEK


def filter_cohort(members, visits, rules=None, interventions=None):
    """
    Keep members passing every rule, with their visits and interventions.

    An empty result is valid. Nothing is fabricated: the output is a subset.
    """
    rules = rules or CohortRules()
    kept = tuple(m for m in members if rules.accepts(m))
    ids = {m.member_id for m in kept}
    logger.info("Cohort filter kept %d of %d members", len(kept), len(members))
    return CohortDataset(
        members=kept,
        visits=tuple(v for v in visits if v.member_id in ids),
        interventions={k: v for k, v in (interventions or {}).items() if k in ids},
    )


# ============================================================================
# CSV INGESTION
# ============================================================================
def _read_frame(path, header):
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if tuple(frame.columns) != tuple(header):
        raise ParseError(f"{path}: expected header {','.join(header)}")
    for column in frame.columns:
        frame[column] = frame[column].str.strip()
    return frame


def _parse_int(text, row, column, optional=False):
    if text == "":
        if optional:
            return None
        raise ParseError("missing value", row, column)
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"not an integer: {text!r}", row, column) from None


def _parse_float(text, row, column):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", row, column) from None


def _parse_date(text, row, column):
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise ParseError(f"not an ISO-8601 date: {text!r}", row, column) from None


def _parse_bool(text, row, column):
    lowered = text.lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ParseError(f"not a boolean: {text!r}", row, column)


def _parse_gender(text, row, column):
    try:
        return Gender(text.lower())
    except ValueError:
        raise ParseError(f"unknown gender: {text!r}", row, column) from None


def _int_column(frame, column):
    """Vectorized integer parse reporting the first bad row."""
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna().to_numpy() | (values.fillna(0) % 1 != 0).to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ParseError(f"not an integer: {frame[column].iloc[row]!r}", row + 1, column)
    return values.astype(np.int64).to_numpy()


def load_members(path):
    """
    Parse members.csv into profiles.

    Raises:
        ParseError: malformed cell, naming row and column
        ValidationError: duplicate member_id or out-of-range field
    """
    frame = _read_frame(path, Columns.MEMBERS)
    members = []
    seen = {}
    for row, record in enumerate(frame.itertuples(index=False, name=None), start=1):
        cell = dict(zip(Columns.MEMBERS, record))
        try:
            member = MemberProfile(
                member_id=cell["member_id"],
                age=_parse_int(cell["age"], row, "age"),
                gender=_parse_gender(cell["gender"], row, "gender"),
                bmi=_parse_float(cell["bmi"], row, "bmi"),
                contract_start=_parse_date(cell["contract_start"], row, "contract_start"),
                main_club=cell["main_club"],
                membership_category=cell["membership_category"],
                experience_level=_parse_int(cell["experience_level"], row, "experience_level", True),
                form_level=_parse_int(cell["form_level"], row, "form_level", True),
                est_visit_frequency=_parse_int(
                    cell["est_visit_frequency"], row, "est_visit_frequency", True
                ),
                contract_type=cell["contract_type"],
                paid=_parse_bool(cell["paid"], row, "paid"),
            )
        except ValidationError as exc:
            raise ValidationError(f"row {row}: {exc}") from exc
        if member.member_id in seen:
            raise ValidationError(
                f"row {row}: duplicate member_id {member.member_id} (first at row {seen[member.member_id]})"
            )
        seen[member.member_id] = row
        members.append(member)
    logger.debug("Loaded %d members from %s", len(members), path)
    return tuple(members)


def load_visits(path):
    """
    Parse visits.csv.

    Raises:
        ParseError: malformed cell, naming row and column
        DomainError: entry after exit or hour outside 0..23, naming the row
    """
    frame = _read_frame(path, Columns.VISITS)
    dates = pd.to_datetime(frame["date"], format="%Y-%m-%d", errors="coerce")
    if dates.isna().any():
        row = int(np.flatnonzero(dates.isna().to_numpy())[0])
        raise ParseError(f"not an ISO-8601 date: {frame['date'].iloc[row]!r}", row + 1, "date")
    entries = _int_column(frame, "entry_hour")
    exits = _int_column(frame, "exit_hour")
    bad = (entries > exits) | (entries < 0) | (exits > 23)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DomainError(f"row {row + 1}: invalid hours {entries[row]}-{exits[row]}")
    visits = tuple(
        VisitEvent(member_id, day, int(entry), int(exit_))
        for member_id, day, entry, exit_ in zip(
            frame["member_id"], dates.dt.date, entries, exits
        )
    )
    logger.debug("Loaded %d visits from %s", len(visits), path)
    return visits


def load_interventions(path):
    """Parse interventions.csv into a member_id -> InterventionCounts mapping."""
    frame = _read_frame(path, Columns.INTERVENTIONS)
    columns = {name: _int_column(frame, Treatment.csv_column(name)) for name in Treatment.INTERVENTIONS}
    counts = {}
    for i, member_id in enumerate(frame["member_id"]):
        if member_id in counts:
            raise ValidationError(f"row {i + 1}: duplicate member_id {member_id}")
        try:
            counts[member_id] = InterventionCounts(
                member_id, **{name: int(values[i]) for name, values in columns.items()}
            )
        except ValidationError as exc:
            raise ValidationError(f"row {i + 1}: {exc}") from exc
    return counts


def load_cohort(directory, rules=None):
    """
    Load members, visits and (optional) interventions from a directory.

    Args:
        directory: Directory holding the core CSV files
        rules: Optional CohortRules; None keeps every member
    """
    directory = Path(directory)
    members = load_members(directory / Files.MEMBERS)
    visits = load_visits(directory / Files.VISITS)
    interventions_path = directory / Files.INTERVENTIONS
    interventions = load_interventions(interventions_path) if interventions_path.exists() else {}
    if rules is not None:
        return filter_cohort(members, visits, rules, interventions)
    return CohortDataset(members=members, visits=visits, interventions=interventions)


# ============================================================================
# CSV SERIALIZATION
# ============================================================================
def _optional(value):
    return "" if value is None else str(value)


def members_to_frame(members):
    rows = [
        (
            m.member_id,
            str(m.age),
            str(m.gender),
            repr(float(m.bmi)),
            m.contract_start.isoformat(),
            m.main_club,
            m.membership_category,
            _optional(m.experience_level),
            _optional(m.form_level),
            _optional(m.est_visit_frequency),
            m.contract_type,
            "true" if m.paid else "false",
        )
        for m in members
    ]
    return pd.DataFrame(rows, columns=list(Columns.MEMBERS))


def visits_to_frame(visits):
    return pd.DataFrame(
        {
            "member_id": [v.member_id for v in visits],
            "date": [v.date.isoformat() for v in visits],
            "entry_hour": [v.entry_hour for v in visits],
            "exit_hour": [v.exit_hour for v in visits],
        },
        columns=list(Columns.VISITS),
    )


def interventions_to_frame(counts):
    rows = [
        (member_id, *(counts[member_id].get(name) for name in Treatment.INTERVENTIONS))
        for member_id in sorted(counts)
    ]
    return pd.DataFrame(rows, columns=list(Columns.INTERVENTIONS))


def write_frame(frame, path):
    """Write a table the way every habitforge CSV is written."""
    frame.to_csv(path, index=False, lineterminator="\n")


def write_members(members, path):
    write_frame(members_to_frame(members), path)


def write_visits(visits, path):
    write_frame(visits_to_frame(visits), path)


def write_interventions(counts, path):
    write_frame(interventions_to_frame(counts), path)
