"""
Unit tests for demographic deviations within clusters.

Run with: python test/test_demographics.py
"""
import math
import sys
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src" / "lib"))
sys.path.insert(0, str(Path(__file__).resolve().parent))

from fixtures import make_member  # noqa: E402
from habitforge.demographics import (  # noqa: E402
    age_band_partition,
    deviation,
    gender_partition,
    reports_frame,
)
from habitforge.errors import ValidationError  # noqa: E402


def population(spec):
    """
    Members and labels from (cluster, gender, age, count) tuples.
    """
    members, labels = [], {}
    for cluster, gender, age, count in spec:
        for _ in range(count):
            member_id = f"M{len(members):04d}"
            members.append(make_member(member_id, age=age, gender=gender))
            labels[member_id] = cluster
    return members, labels


class TestDeviation(unittest.TestCase):
    """Likelihood-ratio deviations."""

    def test_population_composition_gives_zero(self):
        members, labels = population(
            [(0, "female", 25, 10), (0, "male", 25, 10), (1, "female", 25, 5), (1, "male", 25, 5)]
        )
        report = deviation(members, labels, gender_partition())
        assert np.allclose(report.frame["deviation"], 0.0)

    def test_slight_over_representation(self):
        members, labels = population(
            [(0, "female", 25, 51), (0, "male", 25, 49), (1, "female", 25, 49), (1, "male", 25, 51)]
        )
        report = deviation(members, labels, gender_partition(), names=("morning", "night"))
        assert abs(report.value("morning", "female") - 0.02) < 1e-12
        assert abs(report.value("night", "female") + 0.02) < 1e-12

    def test_conditional_shares_sum_to_one(self):
        members, labels = population(
            [(0, "female", 18, 3), (0, "male", 40, 7), (1, "female", 30, 4), (2, "male", 60, 1)]
        )
        report = deviation(members, labels, age_band_partition())
        sums = report.frame.groupby("cluster")["p_conditional"].sum()
        assert np.allclose(sums, 1.0)
        assert (report.frame["deviation"].dropna() >= -1).all()

    def test_mixture_identity(self):
        rng = np.random.default_rng(8)
        members = [
            make_member(f"M{i:04d}", age=int(rng.integers(14, 70)),
                        gender=str(rng.choice(["female", "male"])))
            for i in range(400)
        ]
        labels = {m.member_id: int(rng.integers(0, 5)) for m in members}
        report = deviation(members, labels, age_band_partition())
        frame = report.frame.merge(
            report.cluster_shares.rename("p_cluster"), left_on="cluster", right_index=True
        )
        weighted = (frame["p_cluster"] * (frame["deviation"] + 1.0)).groupby(frame["group"]).sum()
        assert np.allclose(weighted, 1.0), weighted

    def test_duplicating_members_changes_nothing(self):
        members, labels = population(
            [(0, "female", 18, 3), (0, "male", 40, 7), (1, "female", 30, 4), (1, "male", 22, 2)]
        )
        doubled = members + [make_member(m.member_id + "b", age=m.age, gender=m.gender)
                             for m in members]
        doubled_labels = {**labels, **{mid + "b": c for mid, c in labels.items()}}
        first = deviation(members, labels, age_band_partition()).frame
        second = deviation(doubled, doubled_labels, age_band_partition()).frame
        assert np.allclose(first["deviation"], second["deviation"], equal_nan=True)

    def test_absent_group_is_undefined(self):
        members, labels = population([(0, "female", 30, 4), (1, "male", 30, 4)])
        report = deviation(members, labels, age_band_partition())
        undefined = report.undefined
        assert set(undefined["group"]) == {"14-20", "21-27", "35-48", "49+"}
        assert undefined["deviation"].isna().all()
        assert not math.isnan(report.value("0", "28-34"))

    def test_unlabeled_members_skipped(self):
        members, labels = population([(0, "female", 30, 2), (1, "male", 30, 2)])
        extra = make_member("X", gender="female")
        report = deviation(members + [extra], labels, gender_partition())
        assert report.frame["p_marginal"].tolist() == [0.5, 0.5, 0.5, 0.5]

    def test_labels_of_unknown_members_rejected(self):
        members, labels = population([(0, "female", 30, 2)])
        labels["ghost"] = 0
        with self.assertRaises(ValidationError):
            deviation(members, labels, gender_partition())

    def test_member_outside_partition_rejected(self):
        members, labels = population([(0, "female", 60, 2)])
        with self.assertRaises(ValidationError):
            deviation(members, labels, age_band_partition(((20, 30),)))

    def test_stacked_reports_header(self):
        members, labels = population([(0, "female", 30, 2), (1, "male", 50, 2)])
        frame = reports_frame(
            [
                deviation(members, labels, gender_partition()),
                deviation(members, labels, age_band_partition()),
            ]
        )
        assert list(frame.columns) == [
            "cluster", "group", "p_conditional", "p_marginal", "deviation",
        ]
        assert len(frame) == 2 * 2 + 2 * 5


if __name__ == "__main__":
    unittest.main()
