"""
Unit tests for treatment binarization and the matching-based effect estimates.

Run with: python test/test_causal.py
"""
import io
import sys
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src" / "lib"))
sys.path.insert(0, str(Path(__file__).resolve().parent))

from fixtures import generated  # noqa: E402
from habitforge.causal import (  # noqa: E402
    CausalContext,
    CausalEstimate,
    CausalPipeline,
    EstimationSettings,
    TreatmentSpec,
    binarize_treatment,
    contrast_pipeline,
    effect_by_cluster,
    effect_timeline,
    estimates_frame,
    estimates_from_frame,
    four_level_cuts,
    refute_random_common_cause,
    self_reported_effects,
)
from habitforge.constants import Level, Treatment  # noqa: E402
from habitforge.critical import critical_visit_table  # noqa: E402
from habitforge.errors import EstimationError, SchemeError  # noqa: E402
from habitforge.nmf import fit_clusters  # noqa: E402
from habitforge.survival import survival_records  # noqa: E402
from habitforge.vectorize import build_matrix  # noqa: E402

WEEKS = (6, 7, 8)
HIGH_PT = TreatmentSpec.four_level(Treatment.PT_SESSIONS, Level.HIGH)


def synthetic_context(n=6000, seed=0, effect=0.2, effect_clusters=None):
    """
    Context whose pt_sessions uptake and outcomes both depend on bmi.

    Members at the high pt_sessions level gain `effect` in milestone
    probability; with effect_clusters set, only members of those clusters do.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    pt = np.where(rng.random(n) < expit(0.8 * z - 1.0), rng.integers(1, 10, n), 0)
    high = binarize_treatment(pt) == Level.HIGH
    clusters = np.where(np.arange(n) % 2 == 0, "morning", "night")
    if effect_clusters is not None:
        high &= np.isin(clusters, effect_clusters)
    base = np.clip(0.45 - 0.2 * z, 0.05, 0.7)
    p = base + effect * high
    answered = rng.random(n) < 0.6

    def self_report(levels):
        return np.where(answered, rng.integers(0, levels, n), np.nan)

    frame = pd.DataFrame(
        {
            "age": rng.integers(18, 70, n).astype(float),
            "gender": rng.choice(["female", "male"], n),
            "bmi": 25.0 + 4.0 * z,
            "contract_start": rng.integers(0, 365, n).astype(float),
            "main_club": rng.choice(["club_a", "club_b"], n),
            "membership_category": rng.choice(["standard", "premium"], n),
            Treatment.FORM_LEVEL: self_report(3),
            Treatment.EXPERIENCE_LEVEL: self_report(4),
            Treatment.EST_VISIT_FREQUENCY: self_report(3),
            Treatment.GROUP_LESSONS: 0,
            Treatment.PT_SESSIONS: pt,
            Treatment.INVITATION_CREDITS: 0,
            Treatment.DISTINCT_CLUBS: 0,
            Treatment.DISTINCT_GROUP_LESSONS: 0,
            "cluster": clusters,
        },
        index=pd.Index([f"M{i:05d}" for i in range(n)], name="member_id"),
    )
    outcomes = pd.DataFrame(
        {week: rng.random(n) < p for week in WEEKS}, index=frame.index
    )
    return CausalContext(frame=frame, outcomes=outcomes, n_clusters=2)


class TestBinarize(unittest.TestCase):
    """Four-level and threshold schemes."""

    def test_thirds_of_positive_values(self):
        levels = binarize_treatment([0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9])
        assert levels.tolist() == [Level.NONE] * 3 + [Level.LOW] * 3 + [Level.MODERATE] * 3 + [
            Level.HIGH
        ] * 3

    def test_single_positive_value_is_high(self):
        levels = binarize_treatment([0, 0, 5, 0])
        assert levels.tolist() == [Level.NONE, Level.NONE, Level.HIGH, Level.NONE]

    def test_ties_at_a_cut_stay_in_the_lower_level(self):
        values = [0] * 5 + [1] * 8 + [2, 5]
        assert four_level_cuts(values) == (1.0, 1.0)
        levels = dict(zip(values, binarize_treatment(values)))
        assert levels == {0: Level.NONE, 1: Level.LOW, 2: Level.HIGH, 5: Level.HIGH}, levels

    def test_cut_values_are_inclusive_upper_bounds(self):
        values = [1, 1, 2, 2, 3, 3]
        low_cut, high_cut = four_level_cuts(values)
        levels = binarize_treatment(values)
        for value, level in zip(values, levels):
            if value <= low_cut:
                assert level == Level.LOW, (value, level)
            elif value <= high_cut:
                assert level == Level.MODERATE, (value, level)
            else:
                assert level == Level.HIGH, (value, level)
        assert set(levels) == {Level.LOW, Level.MODERATE, Level.HIGH}

    def test_threshold_at_zero(self):
        levels = binarize_treatment([0, 1, 2], Treatment.THRESHOLD, threshold=0)
        assert levels.tolist() == [Level.CONTROL, Level.TREATED, Level.TREATED]

    def test_missing_values_excluded(self):
        levels = binarize_treatment([np.nan, 2.0, 0.0], Treatment.THRESHOLD, threshold=1)
        assert levels.tolist() == [None, Level.TREATED, Level.CONTROL]

    def test_cuts_use_positive_values_only(self):
        assert four_level_cuts([0] * 50 + [3, 3, 3]) == (3.0, 3.0)

    def test_invalid_inputs(self):
        with self.assertRaises(SchemeError):
            binarize_treatment([0, 0, 0])
        with self.assertRaises(SchemeError):
            binarize_treatment([1, -1])
        with self.assertRaises(SchemeError):
            binarize_treatment([1, 2], Treatment.THRESHOLD)


class TestTreatmentSpec(unittest.TestCase):
    """Scheme validation."""

    def test_labels(self):
        assert HIGH_PT.label == Level.HIGH
        assert TreatmentSpec.threshold_at(Treatment.FORM_LEVEL, 1).label == ">1"

    def test_four_level_needs_intervention(self):
        with self.assertRaises(SchemeError):
            TreatmentSpec.four_level(Treatment.FORM_LEVEL, Level.HIGH)

    def test_threshold_range(self):
        TreatmentSpec.threshold_at(Treatment.EXPERIENCE_LEVEL, 2)
        with self.assertRaises(SchemeError):
            TreatmentSpec.threshold_at(Treatment.FORM_LEVEL, 2)
        with self.assertRaises(SchemeError):
            TreatmentSpec.threshold_at(Treatment.PT_SESSIONS, 0)

    def test_unknown_level(self):
        with self.assertRaises(SchemeError):
            TreatmentSpec.four_level(Treatment.PT_SESSIONS, "extreme")


class TestContext(unittest.TestCase):
    """Covariates and outcomes built from a cohort."""

    @classmethod
    def setUpClass(cls):
        cls.cohort = generated("calibrated", 300, 3)[0]
        records = survival_records(cls.cohort)
        cls.table = critical_visit_table(cls.cohort, records, range(6, 18))
        cls.model = fit_clusters(build_matrix(cls.cohort, 6), seed=0)

    def test_outcome_weeks(self):
        context = CausalContext.build(self.cohort, self.table)
        assert context.weeks == tuple(range(6, 18))
        assert list(context.outcomes.index) == list(self.cohort.member_ids)
        assert context.frame["contract_start"].min() == 0

    def test_cluster_columns(self):
        context = CausalContext.build(self.cohort, self.table, self.model)
        assert context.n_clusters == 5
        names = set(context.frame["cluster"])
        assert names <= set(self.model.names) | {"inactive"}
        assert np.allclose(context.frame[[f"p_{j}" for j in range(5)]].sum(axis=1), 1.0)

    def test_covariate_sets(self):
        context = CausalContext.build(self.cohort, self.table, self.model)
        settings = EstimationSettings()
        numeric, categorical = context.covariates(settings)
        assert numeric == ("age", "bmi", "contract_start")
        assert "cluster" in categorical and "experience_level" in categorical
        _, categorical = context.covariates(settings, self_reported=True)
        assert "experience_level" not in categorical
        _, categorical = context.covariates(settings, within_cluster=True)
        assert "cluster" not in categorical
        numeric, categorical = context.covariates(
            EstimationSettings(cluster_encoding="probabilities")
        )
        assert numeric[3:] == ("p_0", "p_1", "p_2", "p_3")
        assert "cluster" not in categorical

    def test_table_must_cover_outcome_weeks(self):
        table = critical_visit_table(self.cohort, survival_records(self.cohort), range(6, 10))
        with self.assertRaises(EstimationError):
            CausalContext.build(self.cohort, table)


class TestPipeline(unittest.TestCase):
    """Estimates on a confounded population with a known effect."""

    @classmethod
    def setUpClass(cls):
        cls.context = synthetic_context()
        cls.estimates = effect_timeline(cls.context, HIGH_PT, settings=EstimationSettings(
            n_bootstrap=200))

    def test_one_estimate_per_week(self):
        assert [e.week for e in self.estimates] == list(WEEKS)
        assert all(e.treatment == Treatment.PT_SESSIONS and e.level == Level.HIGH
                   for e in self.estimates)

    def test_recovers_effect_better_than_naive(self):
        for estimate in self.estimates:
            assert abs(estimate.att - 0.2) < 0.1, estimate
            assert abs(estimate.naive - 0.2) > abs(estimate.att - 0.2), estimate

    def test_estimate_invariants(self):
        for estimate in self.estimates:
            assert -1.0 <= estimate.att <= 1.0
            assert estimate.n_matched <= estimate.n_treated
            assert estimate.band[0] <= estimate.att <= estimate.band[1]
            assert np.isnan(estimate.refute_p)

    def test_null_effect(self):
        context = synthetic_context(n=60_000, seed=1, effect=0.0)
        estimates = effect_timeline(context, HIGH_PT, settings=EstimationSettings(n_bootstrap=50))
        for estimate in estimates:
            assert abs(estimate.att) < 0.03, estimate
            # Unmatched difference still carries the bmi confounding
            assert estimate.naive < -0.05, estimate

    def test_matching_improves_balance(self):
        pipeline = contrast_pipeline(self.context, HIGH_PT, EstimationSettings())
        balance = pipeline.balance().set_index("covariate")
        assert abs(balance.loc["bmi", "smd_after"]) < abs(balance.loc["bmi", "smd_before"])

    def test_week_subset(self):
        pipeline = contrast_pipeline(self.context, HIGH_PT, EstimationSettings(), weeks=[7])
        assert pipeline.weeks == (7,)

    def test_contrast_without_treated_members(self):
        context = synthetic_context(n=200, seed=2)
        context.frame[Treatment.PT_SESSIONS] = np.where(
            context.frame[Treatment.PT_SESSIONS] > 0, 1, 0
        )
        # A single distinct positive count is high, so nobody is low
        spec = TreatmentSpec.four_level(Treatment.PT_SESSIONS, Level.LOW)
        with self.assertRaises(EstimationError):
            effect_timeline(context, spec)

    def test_refutation_columns_filled(self):
        context = synthetic_context(n=1500, seed=3)
        settings = EstimationSettings(n_bootstrap=100, refute_draws=3, seed=4)
        for estimate in effect_timeline(context, HIGH_PT, weeks=[6], settings=settings):
            assert 0.0 <= estimate.refute_p <= 1.0
            assert np.isfinite(estimate.refute_estimate)

    def test_refuter_stable_over_twenty_draws(self):
        context = synthetic_context(n=2000, seed=8)
        high = binarize_treatment(context.frame[Treatment.PT_SESSIONS]) == Level.HIGH
        outcomes = pd.DataFrame({week: high for week in WEEKS}, index=context.frame.index)
        clean = CausalContext(frame=context.frame, outcomes=outcomes, n_clusters=2)
        settings = EstimationSettings(n_bootstrap=100, refute_draws=20, seed=2)
        for estimate in effect_timeline(clean, HIGH_PT, weeks=[6, 8], settings=settings):
            assert estimate.att == 1.0, estimate
            assert estimate.refute_estimate == 1.0, estimate
            assert estimate.refute_p == 1.0, estimate


class TestRefutation(unittest.TestCase):
    """Random common cause."""

    def pipeline(self, outcome_of_treated):
        rng = np.random.default_rng(9)
        n = 400
        covariates = pd.DataFrame({"age": rng.normal(35, 10, n)})
        treated = rng.random(n) < 0.4
        outcomes = pd.DataFrame({6: outcome_of_treated(treated)})
        return CausalPipeline(
            covariates, treated, outcomes, ("age",), (), EstimationSettings(n_bootstrap=100)
        )

    def test_outcome_equal_to_treatment_is_stable(self):
        result = refute_random_common_cause(self.pipeline(lambda t: t), n_draws=5, seed=1)
        assert result[6].new_estimate == 1.0
        assert result[6].p_value == 1.0
        assert result[6].n_draws == 5

    def test_constant_outcomes(self):
        result = refute_random_common_cause(
            self.pipeline(lambda t: np.zeros(t.size, dtype=bool)), n_draws=3, seed=1
        )
        assert result[6].new_estimate == 0.0
        assert result[6].p_value == 1.0

    def test_needs_a_draw(self):
        with self.assertRaises(EstimationError):
            refute_random_common_cause(self.pipeline(lambda t: t), n_draws=0)


class TestClusterEffects(unittest.TestCase):
    """Per-cluster contrasts."""

    def test_effect_only_where_injected(self):
        context = synthetic_context(seed=5, effect=0.3, effect_clusters=["morning"])
        effects = effect_by_cluster(
            context, HIGH_PT, weeks=WEEKS, settings=EstimationSettings(n_bootstrap=50)
        )
        assert effects.flagged == {}
        by_cluster = {}
        for estimate in effects.estimates:
            by_cluster.setdefault(estimate.cluster, []).append(estimate.att)
        assert sorted(by_cluster) == ["morning", "night"]
        assert abs(np.mean(by_cluster["morning"]) - 0.3) < 0.12, by_cluster
        assert abs(np.mean(by_cluster["night"])) < 0.12, by_cluster

    def test_empty_cluster_flagged(self):
        context = synthetic_context(n=400, seed=6)
        effects = effect_by_cluster(
            context, HIGH_PT, weeks=[6], settings=EstimationSettings(n_bootstrap=20),
            clusters=["ghost"],
        )
        assert effects.estimates == []
        assert "ghost" in effects.flagged

    def test_needs_cluster_column(self):
        context = synthetic_context(n=200, seed=7)
        bare = CausalContext(context.frame.drop(columns="cluster"), context.outcomes)
        with self.assertRaises(EstimationError):
            effect_by_cluster(bare, HIGH_PT)


class TestSelfReported(unittest.TestCase):
    """Threshold contrasts on complete responders."""

    def test_every_threshold_estimated(self):
        context = synthetic_context(n=2000, seed=8)
        effects = self_reported_effects(context, weeks=[6], settings=EstimationSettings(
            n_bootstrap=20))
        labels = {(e.treatment, e.level) for e in effects.estimates}
        assert labels == {
            (Treatment.FORM_LEVEL, ">0"),
            (Treatment.FORM_LEVEL, ">1"),
            (Treatment.EXPERIENCE_LEVEL, ">0"),
            (Treatment.EXPERIENCE_LEVEL, ">1"),
            (Treatment.EXPERIENCE_LEVEL, ">2"),
            (Treatment.EST_VISIT_FREQUENCY, ">0"),
            (Treatment.EST_VISIT_FREQUENCY, ">1"),
        }
        responders = len(context.complete_responders())
        assert all(e.n_treated < responders for e in effects.estimates)


class TestEstimateTables(unittest.TestCase):
    """CSV form of the estimates."""

    def test_frame_read_back(self):
        estimates = [
            CausalEstimate("pt_sessions", "high", 6, "", 0.2, 0.1, 40, 38, (0.1, 0.3)),
            CausalEstimate("pt_sessions", "high", 6, "morning", 0.3, 0.2, 20, 20, (0.2, 0.4),
                           0.29, 1.0),
        ]
        frame = estimates_frame(estimates)
        assert list(frame.columns[:9]) == [
            "treatment", "level", "week", "cluster", "att", "n_treated", "n_matched",
            "refute_estimate", "refute_p",
        ]
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False)
        buffer.seek(0)
        again = estimates_from_frame(pd.read_csv(buffer))
        assert again[0].cluster == ""
        assert again[1].cluster == "morning"
        assert again[1].band == (0.2, 0.4)
        assert again[1].refute_p == 1.0
        assert np.isnan(again[0].refute_p)


if __name__ == "__main__":
    unittest.main()
