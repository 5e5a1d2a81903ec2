"""
Propensity-score-matching effect estimates of interventions on milestone
attainment.

Each estimate binarizes a treatment variable, fits a propensity model on
member covariates, matches treated to control members and averages the
paired milestone differences (ATT) for every outcome week.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import pandas as pd

from .constants import Columns, Defaults, Level, Treatment
from .critical import milestone_outcomes
from .errors import EstimationError, SchemeError
from .matching import (
    balance_table,
    bootstrap_band,
    estimate_att,
    match_nearest,
    naive_difference,
    pair_differences,
)
from .propensity import fit_propensity

logger = logging.getLogger(__name__)

INACTIVE_CLUSTER = "inactive"

NUMERIC_COVARIATES = ("age", "bmi", "contract_start")
CATEGORICAL_COVARIATES = ("gender", "main_club", "membership_category", "experience_level")
CLUSTER_COVARIATE = "cluster"


# ============================================================================
# TREATMENTS
# ============================================================================
@dataclass(frozen=True)
class TreatmentSpec:
    """A treatment variable, its binarization scheme and the contrast to estimate."""

    variable: str
    scheme: str
    treated_level: str
    control_level: str
    threshold: int | None = None

    def __post_init__(self):
        if self.scheme not in Treatment.SCHEMES:
            raise SchemeError(f"unknown scheme '{self.scheme}'")
        if self.scheme == Treatment.FOUR_LEVEL:
            if self.variable not in Treatment.INTERVENTIONS:
                raise SchemeError(f"four_level applies to intervention counts, not {self.variable}")
            for level in (self.treated_level, self.control_level):
                if level not in Level.FOUR_LEVEL:
                    raise SchemeError(f"unknown level '{level}'")
        else:
            if self.variable not in Treatment.SELF_REPORTED:
                raise SchemeError(f"threshold applies to self-reported variables, not {self.variable}")
            top = Treatment.SELF_REPORTED_LEVELS[self.variable] - 2
            if self.threshold is None or not 0 <= self.threshold <= top:
                raise SchemeError(f"threshold for {self.variable} must be within 0..{top}")

    @classmethod
    def four_level(cls, variable, level, control=Level.NONE):
        return cls(variable, Treatment.FOUR_LEVEL, level, control)

    @classmethod
    def threshold_at(cls, variable, threshold):
        return cls(variable, Treatment.THRESHOLD, Level.TREATED, Level.CONTROL, threshold)

    @property
    def label(self):
        """Level column of the estimates table."""
        if self.scheme == Treatment.THRESHOLD:
            return f">{self.threshold}"
        return self.treated_level


def four_level_cuts(values):
    """33rd and 66th percentiles of the strictly positive values."""
    values = np.asarray(values, dtype=float)
    positive = values[values > 0]
    if positive.size == 0:
        raise SchemeError("four_level binarization needs at least one positive value")
    low, high = np.percentile(positive, [Level.LOW_CUT_PERCENTILE, Level.HIGH_CUT_PERCENTILE])
    return float(low), float(high)


def binarize_treatment(values, scheme=Treatment.FOUR_LEVEL, threshold=None):
    """
    Map raw treatment values to levels.

    four_level: none for 0; over the positive values, low up to and
    including the 33rd percentile, moderate up to and including the 66th,
    high above. A single distinct positive value is high. threshold:
    treated when value > threshold, control otherwise. Missing values map
    to None.

    Returns:
        object array of level names (None where excluded)

    Raises:
        SchemeError: negative counts, all-zero counts, or a missing threshold
    """
    values = np.asarray(values, dtype=float)
    present = ~np.isnan(values)
    levels = np.full(values.shape, None, dtype=object)
    if scheme == Treatment.THRESHOLD:
        if threshold is None:
            raise SchemeError("threshold scheme needs a threshold")
        levels[present & (values > threshold)] = Level.TREATED
        levels[present & ~(values > threshold)] = Level.CONTROL
        return levels
    if scheme != Treatment.FOUR_LEVEL:
        raise SchemeError(f"unknown scheme '{scheme}'")
    if (values[present] < 0).any():
        raise SchemeError("treatment counts must be nonnegative")
    low_cut, high_cut = four_level_cuts(values[present])
    levels[present & (values == 0)] = Level.NONE
    positive = present & (values > 0)
    if np.unique(values[positive]).size == 1:
        levels[positive] = Level.HIGH
        return levels
    levels[positive & (values <= low_cut)] = Level.LOW
    levels[positive & (values > low_cut) & (values <= high_cut)] = Level.MODERATE
    levels[positive & (values > high_cut)] = Level.HIGH
    return levels


# ============================================================================
# CONTEXT
# ============================================================================
@dataclass(frozen=True)
class EstimationSettings:
    ridge: float = Defaults.RIDGE
    caliper: float | None = None
    n_bootstrap: int = Defaults.BOOTSTRAP_RESAMPLES
    band_level: float = Defaults.BAND_LEVEL
    refute_draws: int = Defaults.REFUTE_DRAWS
    seed: int = Defaults.SEED
    cluster_encoding: str = Defaults.CLUSTER_ENCODING


@dataclass(frozen=True, eq=False)
class CausalContext:
    """
    Member covariates, treatment variables and milestone outcomes.

    frame is indexed by member_id; outcomes holds one boolean column per
    outcome week.
    """

    frame: pd.DataFrame
    outcomes: pd.DataFrame
    n_clusters: int = 0

    @classmethod
    def build(cls, cohort, table, clusters=None, weeks=None):
        """
        Args:
            cohort: CohortDataset
            table: CriticalVisitTable covering the outcome weeks
            clusters: Optional ClusterModel of the early window
            weeks: Outcome weeks, default 6..17
        """
        if weeks is None:
            low, high = Defaults.OUTCOME_WEEKS
            weeks = range(low, high + 1)
        frame = cohort.member_frame.copy()
        if len(frame):
            frame["contract_start"] = frame["contract_start"] - frame["contract_start"].min()
        n_clusters = 0
        if clusters is not None:
            positions = {mid: i for i, mid in enumerate(clusters.member_ids)}
            rows = [positions[mid] for mid in frame.index]
            names = [
                clusters.names[clusters.labels[i]] if clusters.active[i] else INACTIVE_CLUSTER
                for i in rows
            ]
            frame[CLUSTER_COVARIATE] = names
            for j in range(clusters.k):
                frame[f"p_{j}"] = clusters.probabilities[rows, j]
            n_clusters = clusters.k
        outcomes = milestone_outcomes(cohort, table, list(weeks))
        return cls(frame=frame, outcomes=outcomes, n_clusters=n_clusters)

    @property
    def weeks(self):
        return tuple(self.outcomes.columns)

    def levels(self, spec, index=None):
        """Treatment levels of spec.variable, as a Series over index (default: all members)."""
        frame = self.frame if index is None else self.frame.loc[index]
        values = frame[spec.variable].to_numpy(dtype=float)
        return pd.Series(
            binarize_treatment(values, spec.scheme, spec.threshold), index=frame.index, dtype=object
        )

    def complete_responders(self):
        return self.frame.index[self.frame[list(Treatment.SELF_REPORTED)].notna().all(axis=1)]

    def covariates(self, settings, self_reported=False, within_cluster=False):
        """(numeric, categorical) covariate names for a run."""
        numeric = list(NUMERIC_COVARIATES)
        categorical = list(CATEGORICAL_COVARIATES)
        if self_reported:
            categorical.remove(Treatment.EXPERIENCE_LEVEL)
        if self.n_clusters and not within_cluster:
            if settings.cluster_encoding == "probabilities":
                # Probabilities sum to 1, so the last column is implied
                numeric.extend(f"p_{j}" for j in range(self.n_clusters - 1))
            else:
                categorical.append(CLUSTER_COVARIATE)
        return tuple(numeric), tuple(categorical)


# ============================================================================
# PIPELINE
# ============================================================================
@dataclass(frozen=True, eq=False)
class PipelineRun:
    model: object
    scores: np.ndarray
    match: object
    att: dict


@dataclass(frozen=True)
class CausalEstimate:
    treatment: str
    level: str
    week: int
    cluster: str
    att: float
    naive: float
    n_treated: int
    n_matched: int
    band: tuple
    refute_estimate: float = np.nan
    refute_p: float = np.nan


@dataclass(frozen=True)
class Refutation:
    new_estimate: float
    p_value: float
    n_draws: int


class CausalPipeline:
    """
    Fit, match and estimate on one treated/control population.

    Args:
        covariates: Member covariates (rows aligned with treated and outcomes)
        treated: Boolean treatment flags
        outcomes: DataFrame with one outcome column per week
        numeric, categorical: Covariate names passed to the propensity encoder
        settings: EstimationSettings
    """

    def __init__(self, covariates, treated, outcomes, numeric, categorical,
                 settings=EstimationSettings()):
        self.covariates = covariates
        self.treated = np.asarray(treated, dtype=bool)
        self.outcomes = outcomes
        self.numeric = tuple(numeric)
        self.categorical = tuple(categorical)
        self.settings = settings

    @property
    def weeks(self):
        return tuple(self.outcomes.columns)

    def run(self, extra=None):
        model = fit_propensity(
            self.covariates, self.treated, self.numeric, self.categorical,
            extra=extra, ridge=self.settings.ridge,
        )
        scores = model.predict(self.covariates, extra)
        match = match_nearest(scores, self.treated, self.settings.caliper)
        att = {week: estimate_att(match, self.outcomes[week].to_numpy()) for week in self.weeks}
        return PipelineRun(model=model, scores=scores, match=match, att=att)

    @cached_property
    def baseline(self):
        return self.run()

    def band(self, week, n_bootstrap=None):
        """Bootstrap band of the baseline estimate for one week."""
        differences = pair_differences(self.baseline.match, self.outcomes[week].to_numpy())
        return bootstrap_band(
            differences, n_bootstrap or self.settings.n_bootstrap, self.settings.band_level,
            seed=[self.settings.seed, int(week)],
        )

    def naive(self, week):
        return naive_difference(self.treated, self.outcomes[week].to_numpy())

    def balance(self):
        model = self.baseline.model
        design = model.encoder.transform(self.covariates)
        return balance_table(design, model.encoder.columns, self.treated, self.baseline.match)

    def estimates(self, spec, cluster=""):
        refutations = {}
        if self.settings.refute_draws > 0:
            refutations = refute_random_common_cause(
                self, n_draws=self.settings.refute_draws, seed=self.settings.seed
            )
        results = []
        for week in self.weeks:
            refutation = refutations.get(week)
            results.append(
                CausalEstimate(
                    treatment=spec.variable,
                    level=spec.label,
                    week=int(week),
                    cluster=cluster,
                    att=self.baseline.att[week],
                    naive=self.naive(week),
                    n_treated=int(self.treated.sum()),
                    n_matched=len(self.baseline.match),
                    band=self.band(week),
                    refute_estimate=refutation.new_estimate if refutation else np.nan,
                    refute_p=refutation.p_value if refutation else np.nan,
                )
            )
            logger.info(
                "%s %s week %d%s: ATT %.4f (%d pairs)",
                spec.variable, spec.label, week, f" [{cluster}]" if cluster else "",
                results[-1].att, results[-1].n_matched,
            )
        return results


def refute_random_common_cause(pipeline, weeks=None, n_draws=20, seed=Defaults.SEED,
                               n_bootstrap=None):
    """
    Re-estimate with an added standard-normal covariate, n_draws times.

    p_value is the fraction of new estimates inside the baseline estimate's
    bootstrap band (bounds included).

    Returns:
        dict week -> Refutation
    """
    weeks = pipeline.weeks if weeks is None else tuple(weeks)
    if n_draws < 1:
        raise EstimationError("refutation needs at least one draw")
    n = len(pipeline.treated)
    draws = {week: [] for week in weeks}
    for child in np.random.SeedSequence(seed).spawn(n_draws):
        common_cause = np.random.default_rng(child).standard_normal(n)
        run = pipeline.run(extra=common_cause)
        for week in weeks:
            draws[week].append(run.att[week])
    result = {}
    for week in weeks:
        low, high = pipeline.band(week, n_bootstrap)
        values = np.array(draws[week])
        inside = (values >= low) & (values <= high)
        result[week] = Refutation(float(values.mean()), float(inside.mean()), n_draws)
        logger.debug("Refutation week %d: new estimate %.4f, p %.3f", week, values.mean(), inside.mean())
    return result


# ============================================================================
# ANALYSES
# ============================================================================
def contrast_pipeline(context, spec, settings, index=None, self_reported=False,
                       within_cluster=False, weeks=None):
    levels = context.levels(spec, index)
    keep = levels.isin([spec.treated_level, spec.control_level]).to_numpy()
    members = levels.index[keep]
    treated = (levels[keep] == spec.treated_level).to_numpy()
    numeric, categorical = context.covariates(settings, self_reported, within_cluster)
    outcomes = context.outcomes.loc[members]
    if weeks is not None:
        outcomes = outcomes.loc[:, list(weeks)]
    return CausalPipeline(
        context.frame.loc[members], treated, outcomes, numeric, categorical, settings
    )


def effect_timeline(context, spec, weeks=None, settings=EstimationSettings()):
    """One estimate per outcome week for a single contrast."""
    pipeline = contrast_pipeline(context, spec, settings, weeks=weeks)
    return pipeline.estimates(spec)


@dataclass
class ClusterEffects:
    estimates: list = field(default_factory=list)
    flagged: dict = field(default_factory=dict)


def effect_by_cluster(context, spec, weeks=None, settings=EstimationSettings(), clusters=None):
    """
    Re-run the contrast inside each cluster, without the cluster covariate.

    Treatment levels keep the cohort-wide cut points. Clusters where the
    pipeline cannot run are flagged with the reason and omitted.
    """
    if weeks is None:
        weeks = Defaults.CLUSTER_WEEKS
    if CLUSTER_COVARIATE not in context.frame:
        raise EstimationError("per-cluster effects need cluster labels")
    if clusters is None:
        present = set(context.frame[CLUSTER_COVARIATE]) - {INACTIVE_CLUSTER}
        clusters = sorted(present)
    levels = context.levels(spec)
    effects = ClusterEffects()
    for name in clusters:
        members = context.frame.index[context.frame[CLUSTER_COVARIATE] == name]
        if len(members) == 0:
            effects.flagged[name] = "empty cluster"
            logger.warning("Cluster %s flagged: empty", name)
            continue
        in_cluster = levels.loc[members]
        keep = in_cluster.isin([spec.treated_level, spec.control_level]).to_numpy()
        kept = members[keep]
        numeric, categorical = context.covariates(settings, within_cluster=True)
        pipeline = CausalPipeline(
            context.frame.loc[kept],
            (in_cluster[keep] == spec.treated_level).to_numpy(),
            context.outcomes.loc[kept, list(weeks)],
            numeric, categorical, settings,
        )
        try:
            effects.estimates.extend(pipeline.estimates(spec, cluster=name))
        except (EstimationError, SchemeError) as exc:
            effects.flagged[name] = str(exc)
            logger.warning("Cluster %s flagged: %s", name, exc)
    return effects


def self_reported_effects(context, weeks=None, settings=EstimationSettings()):
    """
    Threshold contrasts of every self-reported variable on complete responders.

    experience_level is dropped from the covariates of these runs.
    """
    responders = context.complete_responders()
    effects = ClusterEffects()
    for variable in Treatment.SELF_REPORTED:
        for threshold in range(Treatment.SELF_REPORTED_LEVELS[variable] - 1):
            spec = TreatmentSpec.threshold_at(variable, threshold)
            pipeline = contrast_pipeline(
                context, spec, settings, index=responders, self_reported=True, weeks=weeks
            )
            try:
                effects.estimates.extend(pipeline.estimates(spec))
            except (EstimationError, SchemeError) as exc:
                effects.flagged[f"{variable}{spec.label}"] = str(exc)
                logger.warning("%s %s flagged: %s", variable, spec.label, exc)
    return effects


def estimates_frame(estimates):
    rows = [
        (
            e.treatment, e.level, e.week, e.cluster, e.att, e.n_treated, e.n_matched,
            e.refute_estimate, e.refute_p, e.naive, e.band[0], e.band[1],
        )
        for e in estimates
    ]
    return pd.DataFrame(
        rows, columns=[*Columns.ESTIMATES, "naive_difference", "band_low", "band_high"]
    )


def estimates_from_frame(frame):
    """Read back a frame produced by estimates_frame."""
    frame = frame.astype({"cluster": object}).fillna({"cluster": ""})
    return [
        CausalEstimate(
            treatment=row.treatment,
            level=str(row.level),
            week=int(row.week),
            cluster=str(row.cluster),
            att=float(row.att),
            naive=float(row.naive_difference),
            n_treated=int(row.n_treated),
            n_matched=int(row.n_matched),
            band=(float(row.band_low), float(row.band_high)),
            refute_estimate=float(row.refute_estimate),
            refute_p=float(row.refute_p),
        )
        for row in frame.itertuples(index=False)
    ]
