"""
Greedy nearest-neighbor propensity matching without replacement, and the
estimates built on matched pairs.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .constants import Defaults
from .errors import EstimationError, MatchingError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MatchResult:
    """
    pairs: (m, 2) row indices (treated, control) in matching order
    unmatched_treated: row indices of treated members left without a control
    distances: |score difference| of each pair
    """

    pairs: np.ndarray
    unmatched_treated: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.pairs)

    @property
    def treated_rows(self):
        return self.pairs[:, 0]

    @property
    def control_rows(self):
        return self.pairs[:, 1]


def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


def match_nearest(scores, treated, caliper=None):
    """
    Match every treated member to the closest unused control.

    Treated members are processed in descending score order (stable). Equal
    distances go to the lower-scored control. With a caliper, treated members
    whose closest control is farther away stay unmatched.

    Args:
        scores: Propensity score of every member
        treated: Boolean treatment flags aligned with scores

    Raises:
        MatchingError: if there are no treated or no control members
    """
    scores = np.asarray(scores, dtype=float)
    treated = np.asarray(treated, dtype=bool)
    treated_rows = np.flatnonzero(treated)
    control_rows = np.flatnonzero(~treated)
    if treated_rows.size == 0:
        raise MatchingError("no treated members to match")
    if control_rows.size == 0:
        raise MatchingError("no control members to match against")

    order = np.argsort(scores[control_rows], kind="stable")
    controls = control_rows[order]
    control_scores = scores[controls]
    n_controls = controls.size
    # right[i]: first available sorted control >= i (n_controls = none)
    # left[i + 1]: last available sorted control <= i (0 = none)
    right = np.arange(n_controls + 1)
    left = np.arange(n_controls + 1)

    sequence = treated_rows[np.argsort(-scores[treated_rows], kind="stable")]
    pairs, distances, unmatched = [], [], []
    for row in sequence:
        score = scores[row]
        pos = int(np.searchsorted(control_scores, score, side="left"))
        hi = _find(right, pos)
        lo = _find(left, pos) - 1
        best = None
        if lo >= 0:
            best = lo
        if hi < n_controls and (best is None or control_scores[hi] - score < score - control_scores[lo]):
            best = hi
        if best is None:
            unmatched.append(row)
            continue
        distance = abs(control_scores[best] - score)
        if caliper is not None and distance > caliper:
            unmatched.append(row)
            continue
        pairs.append((row, controls[best]))
        distances.append(distance)
        right[best] = best + 1
        left[best + 1] = best

    if unmatched:
        logger.info("%d treated members left unmatched", len(unmatched))
    return MatchResult(
        pairs=np.array(pairs, dtype=np.int64).reshape(-1, 2),
        unmatched_treated=np.array(unmatched, dtype=np.int64),
        distances=np.array(distances, dtype=float),
    )


# ============================================================================
# ESTIMATES
# ============================================================================
def pair_differences(match, outcome):
    outcome = np.asarray(outcome, dtype=float)
    return outcome[match.treated_rows] - outcome[match.control_rows]


def estimate_att(match, outcome):
    """
    Mean outcome difference over matched pairs.

    Raises:
        EstimationError: if there are no pairs
    """
    if len(match) == 0:
        raise EstimationError("no matched pairs")
    return float(pair_differences(match, outcome).mean())


def naive_difference(treated, outcome):
    """Difference in mean outcome between all treated and all control members."""
    treated = np.asarray(treated, dtype=bool)
    outcome = np.asarray(outcome, dtype=float)
    if treated.all() or not treated.any():
        raise EstimationError("naive contrast needs treated and control members")
    return float(outcome[treated].mean() - outcome[~treated].mean())


def bootstrap_band(differences, n_resamples=Defaults.BOOTSTRAP_RESAMPLES,
                   level=Defaults.BAND_LEVEL, seed=Defaults.SEED):
    """
    Percentile band of the mean pair difference under pair-level resampling.

    Returns:
        (low, high)
    """
    differences = np.asarray(differences, dtype=float)
    if differences.size == 0:
        raise EstimationError("no matched pairs to resample")
    rng = np.random.default_rng(seed)
    means = np.empty(n_resamples)
    for b in range(n_resamples):
        means[b] = differences[rng.integers(0, differences.size, differences.size)].mean()
    tail = 100.0 * (1.0 - level) / 2.0
    low, high = np.percentile(means, [tail, 100.0 - tail])
    return float(low), float(high)


def _smd(values, treated_mask, control_mask):
    a, b = values[treated_mask], values[control_mask]
    if a.size == 0 or b.size == 0:
        return np.nan
    pooled = np.sqrt((a.var(ddof=1 if a.size > 1 else 0) + b.var(ddof=1 if b.size > 1 else 0)) / 2)
    diff = a.mean() - b.mean()
    if pooled == 0:
        return 0.0 if diff == 0 else np.inf
    return float(diff / pooled)


def balance_table(design, columns, treated, match):
    """
    Standardized mean difference of every encoded covariate before and after matching.
    """
    design = np.asarray(design, dtype=float)
    treated = np.asarray(treated, dtype=bool)
    matched_treated = np.zeros(len(treated), dtype=bool)
    matched_control = np.zeros(len(treated), dtype=bool)
    matched_treated[match.treated_rows] = True
    matched_control[match.control_rows] = True
    rows = [
        (
            name,
            _smd(design[:, j], treated, ~treated),
            _smd(design[:, j], matched_treated, matched_control),
        )
        for j, name in enumerate(columns)
    ]
    return pd.DataFrame(rows, columns=["covariate", "smd_before", "smd_after"])
