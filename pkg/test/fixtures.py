"""
Builders for members, visits and cohorts shared by the test modules.
"""
from datetime import date, timedelta
from functools import lru_cache

from habitforge.cohort import (
    CohortDataset,
    InterventionCounts,
    MemberProfile,
    VisitEvent,
    write_interventions,
    write_members,
    write_visits,
)
from habitforge.constants import Files
from habitforge.synth import GeneratorSpec, generate_cohort

# A Monday
START = date(2024, 1, 1)


def make_member(member_id="M1", age=30, gender="female", bmi=24.0, start=START,
                main_club="club_a", membership_category="standard", experience_level=1,
                form_level=1, est_visit_frequency=1, contract_type="annual", paid=True):
    return MemberProfile(
        member_id=member_id,
        age=age,
        gender=gender,
        bmi=bmi,
        contract_start=start,
        main_club=main_club,
        membership_category=membership_category,
        experience_level=experience_level,
        form_level=form_level,
        est_visit_frequency=est_visit_frequency,
        contract_type=contract_type,
        paid=paid,
    )


def make_visit(member_id="M1", week=1, weekday=0, entry=18, exit_=19, start=START):
    """Visit in a membership week; weekday counts days from the contract start."""
    day = start + timedelta(days=(week - 1) * 7 + weekday)
    return VisitEvent(member_id, day, entry, exit_)


def weekly_visits(member_id, weeks, per_week=1, entry=18, exit_=19, start=START):
    """per_week visits on consecutive days of every listed week."""
    return [
        make_visit(member_id, week, day, entry, exit_, start)
        for week in weeks
        for day in range(per_week)
    ]


def attended_weeks(pattern):
    """'11011' -> [1, 2, 4, 5]."""
    return [i + 1 for i, flag in enumerate(pattern) if flag == "1"]


def make_cohort(plans, interventions=None, **member_fields):
    """
    Cohort from {member_id: list of VisitEvent} plans.

    Every member gets the same profile fields apart from its id.
    """
    members = [make_member(member_id, **member_fields) for member_id in plans]
    visits = [v for items in plans.values() for v in items]
    counts = {
        member_id: InterventionCounts(member_id, **fields)
        for member_id, fields in (interventions or {}).items()
    }
    return CohortDataset(members=tuple(members), visits=tuple(visits), interventions=counts)


def write_cohort(directory, cohort):
    write_members(cohort.members, directory / Files.MEMBERS)
    write_visits(cohort.visits, directory / Files.VISITS)
    write_interventions(dict(cohort.interventions), directory / Files.INTERVENTIONS)


@lru_cache(maxsize=8)
def generated(preset="calibrated", n_members=1000, seed=7):
    """Cached (cohort, truth) of a generator preset."""
    spec = GeneratorSpec.preset(preset).with_members(n_members)
    return generate_cohort(spec, seed)
