"""
Unit tests for the factorization, cluster assignment and transitions.

Run with: python test/test_nmf.py
"""
import math
import sys
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src" / "lib"))
sys.path.insert(0, str(Path(__file__).resolve().parent))

from habitforge.constants import Archetype, Hours  # noqa: E402
from habitforge.errors import DomainError, ValidationError  # noqa: E402
from habitforge.nmf import (  # noqa: E402
    ClusterModel,
    assign_clusters,
    cluster_probabilities,
    component_names,
    fit_clusters,
    membership_prob_cdf,
    nmf_factorize,
    project_onto_components,
    transition_matrix,
)
from habitforge.vectorize import VisitMatrix  # noqa: E402


def pattern(hour, days=range(5)):
    """Flat visit vector with both bins of a one-hour visit set on the given days."""
    bins = np.zeros((7, Hours.N_BINS))
    for day in days:
        bins[day, hour - Hours.FIRST_BIN_HOUR] = 1.0
        bins[day, hour + 1 - Hours.FIRST_BIN_HOUR] = 1.0
    return bins.ravel()


def two_block_matrix():
    """Ten morning members, ten night members and one member without visits."""
    rows, ids = [], []
    for i in range(10):
        rows.append((1 + i % 3) * pattern(8))
        ids.append(f"A{i:02d}")
    for i in range(10):
        rows.append((1 + i % 4) * pattern(20))
        ids.append(f"B{i:02d}")
    rows.append(np.zeros(Hours.VECTOR_LENGTH))
    ids.append("Z00")
    return VisitMatrix(rows=np.array(rows), row_ids=tuple(ids), window_weeks=6)


class TestFactorize(unittest.TestCase):
    """Multiplicative updates."""

    def test_rank_one_exact(self):
        rng = np.random.default_rng(1)
        A = np.outer(rng.random(30) + 0.1, rng.random(126) + 0.1)
        result = nmf_factorize(A, 1, max_iters=200, tol=1e-12, seed=3)
        error = np.linalg.norm(A - result.W @ result.H) / np.linalg.norm(A)
        assert error < 1e-6, error

    def test_objective_never_increases(self):
        for seed in range(20):
            A = np.random.default_rng(100 + seed).random((40, 126))
            result = nmf_factorize(A, 5, max_iters=60, tol=0.0, seed=seed)
            steps = np.diff(result.objective)
            slack = 1e-12 * result.objective[:-1]
            assert (steps <= slack).all(), f"seed {seed}: max increase {steps.max()}"

    def test_factors_stay_nonnegative(self):
        A = np.random.default_rng(5).random((25, 126))
        A[A < 0.5] = 0.0
        result = nmf_factorize(A, 4, max_iters=100, seed=2)
        assert (result.W >= 0).all() and (result.H >= 0).all()

    def test_seed_fixes_result(self):
        A = np.random.default_rng(9).random((20, 126))
        first = nmf_factorize(A, 3, seed=4)
        second = nmf_factorize(A, 3, seed=4)
        assert np.array_equal(first.W, second.W)
        assert np.array_equal(first.H, second.H)

    def test_negative_entry_rejected(self):
        A = np.ones((5, 126))
        A[2, 3] = -1.0
        with self.assertRaises(DomainError):
            nmf_factorize(A, 2)

    def test_k_out_of_range_rejected(self):
        A = np.ones((5, 126))
        with self.assertRaises(DomainError):
            nmf_factorize(A, 0)
        with self.assertRaises(DomainError):
            nmf_factorize(A, 6)

    def test_all_zero_matrix_rejected(self):
        with self.assertRaises(DomainError):
            nmf_factorize(np.zeros((5, 126)), 2)

    def test_projection_recovers_known_weights(self):
        H = np.vstack([pattern(8), pattern(20)])
        W = np.array([[2.0, 0.0], [0.0, 3.0], [1.0, 1.0]])
        result = project_onto_components(W @ H, H, max_iters=2000, tol=1e-14)
        assert np.allclose(result.W, W, atol=1e-4), result.W


class TestProbabilities(unittest.TestCase):
    """Softmax membership."""

    def test_constant_row_is_uniform(self):
        p = cluster_probabilities(np.full((1, 5), 3.7))
        assert np.allclose(p, 0.2)

    def test_single_unit_weight(self):
        p = cluster_probabilities(np.array([[1.0, 0.0, 0.0, 0.0, 0.0]]))[0]
        assert abs(p[0] - math.e / (math.e + 4)) < 1e-12
        assert abs(p[0] - 0.4046) < 1e-4, p[0]
        assert abs(p[1] - 0.1488) < 1e-4, p[1]

    def test_rows_sum_to_one_and_keep_argmax(self):
        W = np.random.default_rng(0).random((50, 5)) * 4
        p = cluster_probabilities(W)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert (p.argmax(axis=1) == W.argmax(axis=1)).all()


class TestClusterModel(unittest.TestCase):
    """Zero-row handling, ordering and projection."""

    def test_blocks_recovered_and_ordered_by_peak(self):
        model = fit_clusters(two_block_matrix(), k=2, seed=0)
        assert model.names == ("cluster_0", "cluster_1")
        assert model.peak_hours[0] < model.peak_hours[1], model.peak_hours
        assert (model.labels[:10] == 0).all(), model.labels
        assert (model.labels[10:20] == 1).all(), model.labels

    def test_zero_row_is_inactive_and_uniform(self):
        model = fit_clusters(two_block_matrix(), k=2, seed=0)
        assert not model.active[-1]
        assert np.allclose(model.probabilities[-1], 0.5)
        assert "Z00" not in model.label_map()
        assert "Z00" in model.label_map(active_only=False)

    def test_components_have_unit_sum(self):
        model = fit_clusters(two_block_matrix(), k=2, seed=0)
        assert np.allclose(model.H.sum(axis=1), 1.0)
        assert (model.W >= 0).all()

    def test_restarts_keep_the_lowest_error(self):
        matrix = two_block_matrix()
        single = fit_clusters(matrix, k=2, seed=3, restarts=1)
        best = fit_clusters(matrix, k=2, seed=3, restarts=6)
        assert best.final_error <= single.final_error
        rows = matrix.rows[~matrix.zero_rows]
        seeds = [3] + [[3, r] for r in range(1, 6)]
        errors = [nmf_factorize(rows, 2, seed=s).final_error for s in seeds]
        assert math.isclose(best.final_error, min(errors))

    def test_single_restart_is_the_seeded_fit(self):
        matrix = two_block_matrix()
        model = fit_clusters(matrix, k=2, seed=4, restarts=1)
        plain = nmf_factorize(matrix.rows[~matrix.zero_rows], 2, seed=4)
        assert math.isclose(model.final_error, plain.final_error)
        assert model.n_iter == plain.n_iter

    def test_zero_restarts_rejected(self):
        with self.assertRaises(ValidationError):
            fit_clusters(two_block_matrix(), k=2, restarts=0)

    def test_five_components_use_archetype_names(self):
        assert component_names(5) == Archetype.ALL
        assert component_names(3) == ("cluster_0", "cluster_1", "cluster_2")

    def test_projection_keeps_labels(self):
        matrix = two_block_matrix()
        model = fit_clusters(matrix, k=2, seed=0)
        projected = assign_clusters(matrix, model)
        assert np.array_equal(projected.labels[:20], model.labels[:20])
        assert np.array_equal(projected.H, model.H)

    def test_refit_orders_like_reference(self):
        matrix = two_block_matrix()
        model = fit_clusters(matrix, k=2, seed=0)
        refit = assign_clusters(matrix, model, refit=True, seed=5)
        assert np.array_equal(refit.labels[:20], model.labels[:20])

    def test_json_round_trip(self):
        model = fit_clusters(two_block_matrix(), k=2, seed=0)
        again = ClusterModel.from_json_dict(model.to_json_dict())
        assert again.member_ids == model.member_ids
        assert np.array_equal(again.labels, model.labels)
        assert np.array_equal(again.active, model.active)
        assert np.allclose(again.H, model.H)
        assert np.allclose(again.probabilities, model.probabilities)

    def test_malformed_json_rejected(self):
        with self.assertRaises(ValidationError):
            ClusterModel.from_json_dict({"k": 2})

    def test_frame_columns(self):
        frame = fit_clusters(two_block_matrix(), k=2, seed=0).to_frame()
        assert list(frame.columns) == ["member_id", "label", "cluster_name", "active", "p_0", "p_1"]


class TestTransitions(unittest.TestCase):
    """Early-to-late cross tabulation."""

    def test_identical_labels_are_diagonal(self):
        labels = {f"M{i}": i % 5 for i in range(20)}
        transition = transition_matrix(labels, dict(labels), 5)
        assert np.array_equal(transition.counts, np.diag(np.full(5, 4)))
        assert transition.diagonal_share == 1.0

    def test_single_mover(self):
        source = {f"M{i}": 0 for i in range(10)}
        target = dict(source)
        target["M3"] = 1
        transition = transition_matrix(source, target, 5)
        assert transition.counts[0, 1] == 1
        assert transition.percentages[0, 1] == 10.0
        assert abs(transition.percentages.sum() - 100.0) < 1e-9
        assert transition.total == 10

    def test_row_percentages(self):
        source = {"A": 0, "B": 0, "C": 1, "D": 1}
        target = {"A": 0, "B": 1, "C": 1, "D": 1}
        transition = transition_matrix(source, target, 2)
        assert transition.row_percentages.tolist() == [[50.0, 50.0], [0.0, 100.0]]

    def test_mismatched_members_rejected(self):
        with self.assertRaises(ValidationError):
            transition_matrix({"A": 0}, {"B": 0}, 2)

    def test_frame_columns(self):
        frame = transition_matrix({"A": 0}, {"A": 1}, 2).to_frame()
        assert list(frame.columns) == ["from", "to", "count", "percent", "row_percent"]
        assert len(frame) == 4


class TestMembershipCdf(unittest.TestCase):
    """Probability CDFs of hard-assigned members."""

    def test_two_members(self):
        p = np.array([[0.4, 0.3, 0.3], [0.6, 0.2, 0.2], [0.1, 0.8, 0.1]])
        cdf = membership_prob_cdf(p, 0)
        assert cdf.points() == [(0.4, 0.5), (0.6, 1.0)], cdf.points()

    def test_certain_members_step_at_one(self):
        p = np.array([[1.0, 0.0], [1.0, 0.0]])
        assert membership_prob_cdf(p, 0).points() == [(1.0, 1.0)]

    def test_empty_cluster(self):
        p = np.array([[0.9, 0.1]])
        assert membership_prob_cdf(p, 1).is_empty


if __name__ == "__main__":
    unittest.main()
