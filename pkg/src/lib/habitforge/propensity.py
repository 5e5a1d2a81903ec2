"""
Propensity model: covariate encoding plus ridge-regularized logistic
regression fit by Newton iterations (IRLS).
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, solve
from scipy.special import expit

from .constants import Defaults
from .errors import EstimationError

logger = logging.getLogger(__name__)

MISSING_CATEGORY = "missing"


# ============================================================================
# COVARIATE ENCODING
# ============================================================================
def _category_strings(series):
    def as_text(value):
        if pd.isna(value):
            return MISSING_CATEGORY
        if isinstance(value, float) and value.is_integer():
            return str(int(value))
        return str(value)

    return series.map(as_text)


@dataclass
class CovariateEncoder:
    """
    One-hot encodes categoricals (sorted categories, first dropped) and
    z-scores numerics. Columns that are constant on the fitting frame are
    dropped.
    """

    numeric: tuple = ()
    categorical: tuple = ()
    means: dict = field(default_factory=dict)
    scales: dict = field(default_factory=dict)
    categories: dict = field(default_factory=dict)

    def fit(self, frame):
        self.means, self.scales, self.categories = {}, {}, {}
        for name in self.numeric:
            values = frame[name].to_numpy(dtype=float)
            scale = values.std()
            if scale > 0:
                self.means[name] = values.mean()
                self.scales[name] = scale
        for name in self.categorical:
            levels = sorted(set(_category_strings(frame[name])))
            if len(levels) > 1:
                self.categories[name] = tuple(levels)
        return self

    @property
    def columns(self):
        names = [name for name in self.numeric if name in self.scales]
        for name in self.categorical:
            names.extend(f"{name}={level}" for level in self.categories.get(name, ())[1:])
        return names

    def transform(self, frame):
        """Encoded design matrix (no intercept column)."""
        blocks = []
        for name in self.numeric:
            if name in self.scales:
                values = frame[name].to_numpy(dtype=float)
                blocks.append(((values - self.means[name]) / self.scales[name])[:, None])
        for name in self.categorical:
            levels = self.categories.get(name)
            if not levels:
                continue
            values = _category_strings(frame[name]).to_numpy()
            blocks.append(np.stack([values == level for level in levels[1:]], axis=1).astype(float))
        if not blocks:
            return np.empty((len(frame), 0))
        return np.hstack(blocks)

    def fit_transform(self, frame):
        return self.fit(frame).transform(frame)


# ============================================================================
# LOGISTIC REGRESSION
# ============================================================================
def _penalized_log_likelihood(X, y, beta, penalty):
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)) - 0.5 * np.sum(penalty * beta**2))


def newton_logistic(X, y, ridge=Defaults.RIDGE, max_iter=Defaults.NEWTON_MAX_ITER,
                    tol=Defaults.NEWTON_TOL):
    """
    Maximize the ridge-penalized logistic log-likelihood.

    X must include the intercept as its first column; the intercept is not
    penalized. Convergence means max|gradient| / n < tol and the last
    accepted Newton step moved no coefficient by more than tol.

    Returns:
        (beta, log_likelihood, n_iter, converged)
    """
    n, p = X.shape
    penalty = np.full(p, ridge)
    penalty[0] = 0.0
    beta = np.zeros(p)
    current = _penalized_log_likelihood(X, y, beta, penalty)
    moved = np.inf
    for n_iter in range(max_iter + 1):
        mu = expit(X @ beta)
        gradient = X.T @ (y - mu) - penalty * beta
        small = np.max(np.abs(gradient)) / n < tol
        if small and moved < tol:
            return beta, current, n_iter, True
        if n_iter == max_iter:
            break
        weights = mu * (1.0 - mu)
        hessian = X.T @ (X * weights[:, None]) + np.diag(penalty)
        try:
            step = solve(hessian, gradient, assume_a="pos")
        except LinAlgError:
            step = np.linalg.lstsq(hessian, gradient, rcond=None)[0]

        candidate = beta + step
        value = _penalized_log_likelihood(X, y, candidate, penalty)
        # Backtracking keeps the objective non-decreasing; full steps once the
        # gradient is negligible
        t = 1.0
        while not small and not value >= current and t > 1e-10:
            t *= 0.5
            candidate = beta + t * step
            value = _penalized_log_likelihood(X, y, candidate, penalty)
        if not small and not value >= current:
            # Stalled at numerical precision
            break
        moved = float(np.max(np.abs(candidate - beta), initial=0.0))
        beta, current = candidate, value
    return beta, current, n_iter, False


@dataclass(frozen=True, eq=False)
class PropensityModel:
    """Fitted logistic propensity model with its encoding."""

    encoder: CovariateEncoder
    coefficients: np.ndarray
    log_likelihood: float
    n_iter: int
    converged: bool
    ridge: float
    near_separation: bool

    @property
    def intercept(self):
        return float(self.coefficients[0])

    def coefficient_table(self):
        return pd.Series(self.coefficients, index=["intercept", *self.encoder.columns])

    def logits(self, frame, extra=None):
        return design_matrix(self.encoder.transform(frame), extra) @ self.coefficients

    def predict(self, frame, extra=None):
        """Scores strictly inside (0, 1)."""
        return expit(np.clip(self.logits(frame, extra), -Defaults.LOGIT_CLIP, Defaults.LOGIT_CLIP))


def design_matrix(encoded, extra=None):
    """Intercept column, encoded covariates and optional extra columns."""
    blocks = [np.ones((encoded.shape[0], 1)), encoded]
    if extra is not None:
        blocks.append(np.asarray(extra, dtype=float).reshape(encoded.shape[0], -1))
    return np.hstack(blocks)


def _separated(scores, treated):
    if treated.all() or not treated.any():
        return False
    return bool(scores[treated].min() > scores[~treated].max())


def fit_propensity(covariates, treated, numeric=(), categorical=(), extra=None,
                   ridge=Defaults.RIDGE, max_iter=Defaults.NEWTON_MAX_ITER,
                   tol=Defaults.NEWTON_TOL):
    """
    Fit P(treated | covariates).

    Args:
        covariates: DataFrame with the numeric and categorical columns
        treated: Boolean array aligned with covariates rows
        numeric: Columns to z-score
        categorical: Columns to one-hot encode
        extra: Optional already-numeric columns appended unencoded
        ridge: L2 penalty on non-intercept coefficients

    A fit that fails to converge is retried once with the ridge penalty
    raised by Defaults.RIDGE_ESCALATION.

    Raises:
        EstimationError: single-class treatment, a non-finite fit, or no
            convergence after escalation
    """
    y = np.asarray(treated, dtype=float)
    if y.size == 0 or y.min() == y.max():
        raise EstimationError("propensity model needs both treated and control members")
    encoder = CovariateEncoder(tuple(numeric), tuple(categorical))
    X = design_matrix(encoder.fit_transform(covariates), extra)

    beta, loglik, n_iter, converged = newton_logistic(X, y, ridge, max_iter, tol)
    near_separation = np.all(np.isfinite(beta)) and _separated(X @ beta, y > 0)
    if not converged:
        escalated = ridge * Defaults.RIDGE_ESCALATION
        logger.warning(
            "Propensity fit did not converge (near separation: %s); refitting with ridge %g",
            near_separation, escalated,
        )
        ridge = escalated
        beta, loglik, n_iter, converged = newton_logistic(X, y, ridge, max_iter, tol)
    if not np.all(np.isfinite(beta)):
        raise EstimationError("propensity fit produced non-finite coefficients")
    if not converged:
        raise EstimationError(f"propensity fit did not converge with ridge {ridge:g}")
    near_separation = _separated(X @ beta, y > 0)
    if near_separation:
        logger.warning("Treated and control propensity scores do not overlap")
    logger.debug("Propensity fit: %d iterations, log-likelihood %.6g", n_iter, loglik)
    return PropensityModel(
        encoder=encoder,
        coefficients=beta,
        log_likelihood=loglik,
        n_iter=n_iter,
        converged=converged,
        ridge=ridge,
        near_separation=near_separation,
    )
