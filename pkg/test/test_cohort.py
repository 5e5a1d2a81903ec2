"""
Unit tests for cohort types, CSV ingestion and week indexing.

Run with: python test/test_cohort.py
"""
import sys
import tempfile
import unittest
from datetime import date
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src" / "lib"))
sys.path.insert(0, str(Path(__file__).resolve().parent))

from fixtures import START, make_cohort, make_member, make_visit, write_cohort  # noqa: E402
from habitforge.cohort import (  # noqa: E402
    CohortDataset,
    CohortRules,
    VisitEvent,
    filter_cohort,
    load_cohort,
    load_members,
    load_visits,
    week_index,
)
from habitforge.constants import Files  # noqa: E402
from habitforge.errors import DomainError, ParseError, ValidationError  # noqa: E402

MEMBERS_HEADER = (
    "member_id,age,gender,bmi,contract_start,main_club,membership_category,"
    "experience_level,form_level,est_visit_frequency,contract_type,paid\n"
)


class TestWeekIndex(unittest.TestCase):
    """Membership-relative weeks."""

    def test_first_week_covers_days_zero_to_six(self):
        assert week_index(START, START) == 1
        assert week_index(date(2024, 1, 7), START) == 1
        assert week_index(date(2024, 1, 8), START) == 2

    def test_week_of_last_contract_day(self):
        # Day 363 after start
        assert week_index(date(2024, 12, 29), START) == 52

    def test_date_before_start_raises(self):
        with self.assertRaises(DomainError):
            week_index(date(2023, 12, 31), START)


class TestDomainTypes(unittest.TestCase):
    """Invariants of the immutable cohort types."""

    def test_entry_after_exit_rejected(self):
        with self.assertRaises(DomainError):
            VisitEvent("M1", START, 19, 18)

    def test_member_below_minimum_age_rejected(self):
        with self.assertRaises(ValidationError):
            make_member(age=13)

    def test_self_reported_range_checked(self):
        with self.assertRaises(ValidationError):
            make_member(experience_level=4)

    def test_complete_responder(self):
        assert make_member().is_complete_responder
        assert not make_member(form_level=None).is_complete_responder

    def test_duplicate_member_rejected(self):
        with self.assertRaises(ValidationError):
            CohortDataset(members=(make_member("M1"), make_member("M1")))

    def test_visit_of_unknown_member_rejected(self):
        with self.assertRaises(ValidationError):
            CohortDataset(members=(make_member("M1"),), visits=(make_visit("M2"),))

    def test_visit_before_contract_start_rejected(self):
        with self.assertRaises(ValidationError):
            CohortDataset(
                members=(make_member("M1"),),
                visits=(VisitEvent("M1", date(2023, 12, 31), 18, 19),),
            )

    def test_members_are_sorted_by_id(self):
        cohort = make_cohort({"M2": [], "M1": []})
        assert cohort.member_ids == ("M1", "M2"), cohort.member_ids

    def test_missing_interventions_default_to_zero(self):
        cohort = make_cohort({"M1": []})
        assert cohort.intervention("M1").pt_sessions == 0

    def test_visit_frame_weeks_and_weekdays(self):
        cohort = make_cohort({"M1": [make_visit("M1", week=3, weekday=5)]})
        row = cohort.visit_frame.iloc[0]
        assert row["week"] == 3
        # 2024-01-20 is a Saturday
        assert row["weekday"] == 5
        assert row["day_offset"] == 19

    def test_subset_keeps_visits_of_kept_members(self):
        cohort = make_cohort({"M1": [make_visit("M1")], "M2": [make_visit("M2")]})
        subset = cohort.subset(["M2"])
        assert subset.member_ids == ("M2",)
        assert len(subset.visits) == 1


class TestFilterCohort(unittest.TestCase):
    """Inclusion rules."""

    def test_unpaid_and_other_contracts_dropped(self):
        members = (
            make_member("M1"),
            make_member("M2", paid=False),
            make_member("M3", contract_type="monthly"),
        )
        visits = (make_visit("M1"), make_visit("M2"), make_visit("M3"))
        cohort = filter_cohort(members, visits)
        assert cohort.member_ids == ("M1",)
        assert len(cohort.visits) == 1

    def test_rules_can_keep_unpaid(self):
        members = (make_member("M1", paid=False),)
        cohort = filter_cohort(members, (), CohortRules(require_paid=False))
        assert len(cohort) == 1

    def test_empty_result_is_valid(self):
        cohort = filter_cohort((make_member("M1", paid=False),), ())
        assert len(cohort) == 0


class TestCsvIngestion(unittest.TestCase):
    """Parsing and re-serialization of the core CSV files."""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_three_valid_rows(self):
        path = self.dir / Files.MEMBERS
        path.write_text(
            MEMBERS_HEADER
            + "A,30,female,22.5,2024-01-01,c1,standard,1,2,0,annual,true\n"
            + "B,41,male,27.0,2024-02-05,c2,premium,,,,annual,false\n"
            + "C,19,female,20.1,2024-03-04,c1,standard,3,0,2,annual,true\n"
        )
        members = load_members(path)
        assert [m.member_id for m in members] == ["A", "B", "C"]
        assert members[1].experience_level is None
        assert members[1].paid is False

    def test_bad_cell_names_row_and_column(self):
        path = self.dir / Files.MEMBERS
        path.write_text(
            MEMBERS_HEADER
            + "A,30,female,22.5,2024-01-01,c1,standard,1,2,0,annual,true\n"
            + "B,old,male,27.0,2024-02-05,c2,premium,,,,annual,false\n"
        )
        with self.assertRaises(ParseError) as ctx:
            load_members(path)
        assert ctx.exception.row == 2, ctx.exception.row
        assert ctx.exception.column == "age"

    def test_wrong_header_rejected(self):
        path = self.dir / Files.VISITS
        path.write_text("member,date,entry_hour,exit_hour\n")
        with self.assertRaises(ParseError):
            load_visits(path)

    def test_visit_with_entry_after_exit_rejected(self):
        path = self.dir / Files.VISITS
        path.write_text("member_id,date,entry_hour,exit_hour\nA,2024-01-02,19,18\n")
        with self.assertRaises(DomainError):
            load_visits(path)

    def test_round_trip_is_byte_identical(self):
        cohort = make_cohort(
            {"M1": [make_visit("M1", 1), make_visit("M1", 2, 3, 7, 9)], "M2": [make_visit("M2")]},
            interventions={"M1": {"pt_sessions": 3}},
            experience_level=None,
        )
        first = self.dir / "first"
        second = self.dir / "second"
        first.mkdir()
        second.mkdir()
        write_cohort(first, cohort)
        write_cohort(second, load_cohort(first))
        for name in (Files.MEMBERS, Files.VISITS, Files.INTERVENTIONS):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

    def test_missing_interventions_file_is_allowed(self):
        cohort = make_cohort({"M1": [make_visit("M1")]})
        write_cohort(self.dir, cohort)
        (self.dir / Files.INTERVENTIONS).unlink()
        loaded = load_cohort(self.dir)
        assert loaded.intervention("M1").group_lessons == 0


if __name__ == "__main__":
    unittest.main()
