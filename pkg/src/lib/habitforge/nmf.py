"""
Non-negative matrix factorization and behavioral cluster assignment.

A ~= W @ H is fit with Lee-Seung multiplicative updates under the Frobenius
loss. Members are assigned to the component with the largest weight and
get soft membership probabilities softmax(W_i).
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import softmax

from .constants import Archetype, Calendar, Defaults, Hours
from .distributions import EmpiricalCDF
from .errors import DomainError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NMFResult:
    """Factors plus the objective value before the first and after every iteration."""

    W: np.ndarray
    H: np.ndarray
    n_iter: int
    objective: np.ndarray
    converged: bool

    @property
    def final_error(self):
        return float(self.objective[-1])


def _as_array(A):
    rows = getattr(A, "rows", A)
    return np.asarray(rows, dtype=float)


def _objective(A, W, H):
    residual = A - W @ H
    return float(np.einsum("ij,ij->", residual, residual))


def _init_factor(rng, shape, scale):
    # 1 - U[0, 1) lies in (0, 1]
    return (1.0 - rng.random(shape)) * scale


def _check_input(A, k):
    if A.ndim != 2:
        raise DomainError(f"expected a 2-D matrix, got {A.ndim} dimensions")
    if (A < 0).any():
        raise DomainError("matrix has negative entries")
    if not 1 <= k <= min(A.shape):
        raise DomainError(f"k={k} outside 1..{min(A.shape)}")
    if not (A > 0).any():
        raise DomainError("matrix has no positive entries")


def _improved_enough(previous, current, tol):
    if previous <= 0:
        return False
    return (previous - current) / previous >= tol


def nmf_factorize(A, k, max_iters=Defaults.NMF_MAX_ITERS, tol=Defaults.NMF_TOL,
                  seed=Defaults.SEED):
    """
    Factorize a nonnegative matrix with multiplicative updates.

    Args:
        A: VisitMatrix or 2-D nonnegative array
        k: Number of components, 1 <= k <= min(A.shape)
        max_iters: Iteration cap
        tol: Stop once the relative objective improvement falls below tol
        seed: Seed of the uniform (0, 1] initialization

    Returns:
        NMFResult with W (rows x k) and H (k x cols)

    Raises:
        DomainError: negative entries, all-zero matrix, or k out of range
    """
    A = _as_array(A)
    _check_input(A, k)
    rng = np.random.default_rng(seed)
    # Each factor gets sqrt(mean/k) so W @ H starts on the scale of mean(A)
    scale = np.sqrt(A.mean() / k)
    W = _init_factor(rng, (A.shape[0], k), scale)
    H = _init_factor(rng, (k, A.shape[1]), scale)
    eps = Defaults.NMF_EPS

    objective = [_objective(A, W, H)]
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        H *= (W.T @ A) / np.maximum(W.T @ W @ H, eps)
        W *= (A @ H.T) / np.maximum(W @ (H @ H.T), eps)
        objective.append(_objective(A, W, H))
        if not _improved_enough(objective[-2], objective[-1], tol):
            converged = True
            break
    logger.debug("NMF k=%d stopped after %d iterations, error %.6g", k, n_iter, objective[-1])
    return NMFResult(W=W, H=H, n_iter=n_iter, objective=np.array(objective), converged=converged)


def project_onto_components(A, H, max_iters=Defaults.NMF_MAX_ITERS, tol=Defaults.NMF_TOL,
                            seed=Defaults.SEED):
    """
    Nonnegative least squares for W with H held fixed (W-only updates).

    Zero rows of A end with zero weights.
    """
    A = _as_array(A)
    H = np.asarray(H, dtype=float)
    if (A < 0).any():
        raise DomainError("matrix has negative entries")
    if A.shape[1] != H.shape[1]:
        raise DomainError(f"matrix has {A.shape[1]} columns, components have {H.shape[1]}")
    k = H.shape[0]
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(A.mean(), Defaults.NMF_EPS) / k)
    W = _init_factor(rng, (A.shape[0], k), scale)
    eps = Defaults.NMF_EPS
    gram = H @ H.T
    numerator = A @ H.T

    objective = [_objective(A, W, H)]
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        W *= numerator / np.maximum(W @ gram, eps)
        objective.append(_objective(A, W, H))
        if not _improved_enough(objective[-2], objective[-1], tol):
            converged = True
            break
    return NMFResult(W=W, H=H, n_iter=n_iter, objective=np.array(objective), converged=converged)


def cluster_probabilities(W):
    """Row-wise softmax of the weights; every row sums to 1."""
    W = np.asarray(W, dtype=float)
    if W.size == 0:
        return W.copy()
    return softmax(W, axis=1)


# ============================================================================
# CLUSTER MODEL
# ============================================================================
def component_peak_hours(H):
    """Hour (6-23) at which each component's day-summed profile peaks."""
    H = np.asarray(H, dtype=float)
    profile = H.reshape(H.shape[0], Calendar.DAYS_PER_WEEK, Hours.N_BINS).sum(axis=1)
    return Hours.FIRST_BIN_HOUR + profile.argmax(axis=1)


def component_names(k):
    """Names of components already sorted by peak hour."""
    if k == len(Archetype.ALL):
        return Archetype.ALL
    return tuple(f"cluster_{i}" for i in range(k))


def _normalize_components(W, H):
    """Scale H rows to unit sum, moving the scale into W."""
    totals = H.sum(axis=1)
    totals = np.where(totals > 0, totals, 1.0)
    return W * totals, H / totals[:, None]


@dataclass(frozen=True, eq=False)
class ClusterModel:
    """
    Cluster assignment of every member of a visit matrix.

    W covers all members (zero rows of inactive members stay zero), H rows sum
    to 1 and are ordered by peak hour. Inactive members carry a uniform
    probability row.
    """

    member_ids: tuple
    W: np.ndarray
    H: np.ndarray
    probabilities: np.ndarray
    labels: np.ndarray
    active: np.ndarray
    names: tuple
    window_weeks: int
    seed: int
    n_iter: int
    final_error: float

    @property
    def k(self):
        return self.H.shape[0]

    @property
    def peak_hours(self):
        return component_peak_hours(self.H)

    def label_map(self, active_only=True):
        """member_id -> cluster index."""
        return {
            member_id: int(label)
            for member_id, label, active in zip(self.member_ids, self.labels, self.active)
            if active or not active_only
        }

    def to_frame(self):
        frame = pd.DataFrame(self.probabilities, columns=[f"p_{j}" for j in range(self.k)])
        frame.insert(0, "member_id", list(self.member_ids))
        frame.insert(1, "label", self.labels.astype(int))
        frame.insert(2, "cluster_name", [self.names[j] for j in self.labels])
        frame.insert(3, "active", self.active.astype(int))
        return frame

    def to_json_dict(self):
        return {
            "k": self.k,
            "seed": self.seed,
            "window_weeks": self.window_weeks,
            "n_iter": self.n_iter,
            "final_error": self.final_error,
            "names": list(self.names),
            "peak_hours": [int(h) for h in self.peak_hours],
            "components": self.H.tolist(),
            "members": [
                {
                    "member_id": member_id,
                    "label": int(label),
                    "active": bool(active),
                    "probabilities": row.tolist(),
                    "weights": weights.tolist(),
                }
                for member_id, label, active, row, weights in zip(
                    self.member_ids, self.labels, self.active, self.probabilities, self.W
                )
            ],
        }

    @classmethod
    def from_json_dict(cls, data):
        """
        Rebuild a model written by to_json_dict.

        Raises:
            ValidationError: missing keys or inconsistent shapes
        """
        try:
            members = data["members"]
            H = np.asarray(data["components"], dtype=float)
            k = int(data["k"])
            model = cls(
                member_ids=tuple(m["member_id"] for m in members),
                W=np.asarray([m["weights"] for m in members], dtype=float).reshape(len(members), k),
                H=H,
                probabilities=np.asarray(
                    [m["probabilities"] for m in members], dtype=float
                ).reshape(len(members), k),
                labels=np.asarray([m["label"] for m in members], dtype=np.int64),
                active=np.asarray([m["active"] for m in members], dtype=bool),
                names=tuple(data["names"]),
                window_weeks=int(data["window_weeks"]),
                seed=int(data["seed"]),
                n_iter=int(data["n_iter"]),
                final_error=float(data["final_error"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed cluster model: {exc}") from exc
        if H.shape != (k, Hours.VECTOR_LENGTH) or len(model.names) != k:
            raise ValidationError(f"cluster model components do not match k={k}")
        return model


def _assemble(matrix, W_active, H, active, result, seed):
    n, k = len(matrix.row_ids), H.shape[0]
    W = np.zeros((n, k))
    W[active] = W_active
    probabilities = np.full((n, k), 1.0 / k)
    probabilities[active] = cluster_probabilities(W_active)
    labels = probabilities.argmax(axis=1)
    return ClusterModel(
        member_ids=matrix.row_ids,
        W=W,
        H=H,
        probabilities=probabilities,
        labels=labels,
        active=active,
        names=component_names(k),
        window_weeks=matrix.window_weeks,
        seed=seed,
        n_iter=result.n_iter,
        final_error=result.final_error,
    )


def _restart_seeds(seed, restarts):
    # Restart 0 keeps the plain seed so restarts=1 is a single seeded fit
    return [seed] + [[seed, r] for r in range(1, restarts)]


def fit_clusters(matrix, k=Defaults.K, max_iters=Defaults.NMF_MAX_ITERS, tol=Defaults.NMF_TOL,
                 seed=Defaults.SEED, restarts=Defaults.NMF_RESTARTS):
    """
    Factorize the active rows of a visit matrix and assign clusters.

    The factorization is run from `restarts` seeded initializations and the
    one with the lowest final error is kept. Components are sorted by peak
    hour and normalized to unit sum.
    """
    if restarts < 1:
        raise ValidationError(f"restarts must be >= 1, got {restarts}")
    active = ~matrix.zero_rows
    rows = matrix.rows[active]
    logger.info("Clustering %d active of %d members with k=%d, %d restarts",
                rows.shape[0], len(matrix), k, restarts)
    result = None
    for restart_seed in _restart_seeds(seed, restarts):
        candidate = nmf_factorize(rows, k, max_iters=max_iters, tol=tol, seed=restart_seed)
        if result is None or candidate.final_error < result.final_error:
            result = candidate
    order = np.argsort(component_peak_hours(result.H), kind="stable")
    W, H = _normalize_components(result.W[:, order], result.H[order])
    model = _assemble(matrix, W, H, active, result, seed)
    logger.info("NMF converged=%s after %d iterations, error %.6g",
                result.converged, result.n_iter, result.final_error)
    return model


def assign_clusters(matrix, reference, refit=False, max_iters=Defaults.NMF_MAX_ITERS,
                    tol=Defaults.NMF_TOL, seed=Defaults.SEED, restarts=Defaults.NMF_RESTARTS):
    """
    Cluster a later window against a reference model.

    By default the reference components stay fixed and only W is fit, so
    labels of both windows refer to the same components. refit=True fits new
    components (ordered by peak hour like the reference).
    """
    if refit:
        return fit_clusters(matrix, reference.k, max_iters=max_iters, tol=tol, seed=seed,
                            restarts=restarts)
    active = ~matrix.zero_rows
    result = project_onto_components(matrix.rows[active], reference.H, max_iters, tol, seed)
    return _assemble(matrix, result.W, reference.H, active, result, seed)


# ============================================================================
# TRANSITIONS AND MEMBERSHIP CDFS
# ============================================================================
@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Counts of members moving from cluster i (early window) to j (late window)."""

    counts: np.ndarray
    names: tuple

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def percentages(self):
        """Share of all members in each cell, in percent."""
        if self.total == 0:
            return np.zeros(self.counts.shape)
        return 100.0 * self.counts / self.total

    @property
    def row_percentages(self):
        totals = self.counts.sum(axis=1, keepdims=True)
        return np.divide(100.0 * self.counts, totals, out=np.zeros(self.counts.shape),
                         where=totals > 0)

    @property
    def diagonal_share(self):
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def to_frame(self):
        rows = []
        pct = self.percentages
        row_pct = self.row_percentages
        for i, source in enumerate(self.names):
            for j, target in enumerate(self.names):
                rows.append((source, target, int(self.counts[i, j]), pct[i, j], row_pct[i, j]))
        return pd.DataFrame(rows, columns=["from", "to", "count", "percent", "row_percent"])


def transition_matrix(labels_from, labels_to, k, names=None):
    """
    Cross-tabulate two label assignments of the same members.

    Args:
        labels_from: member_id -> cluster at the early window
        labels_to: member_id -> cluster at the late window
        k: Number of clusters

    Raises:
        ValidationError: if the member sets differ
    """
    if set(labels_from) != set(labels_to):
        missing = len(set(labels_from) ^ set(labels_to))
        raise ValidationError(f"label sets differ in {missing} members")
    counts = np.zeros((k, k), dtype=np.int64)
    for member_id, source in labels_from.items():
        counts[source, labels_to[member_id]] += 1
    return TransitionMatrix(counts=counts, names=tuple(names or component_names(k)))


def membership_prob_cdf(probabilities, cluster):
    """
    Empirical CDF of P(cluster) over members whose argmax is that cluster.

    An empty cluster gives an empty CDF.
    """
    probabilities = np.asarray(probabilities, dtype=float)
    if probabilities.size == 0:
        return EmpiricalCDF.from_values([])
    assigned = probabilities.argmax(axis=1) == cluster
    return EmpiricalCDF.from_values(probabilities[assigned, cluster])
