"""
Seeded synthetic cohort generator with known ground truth.

Generation runs in stages, each with its own child seed:

1. Members: archetype, demographics, self-reported answers.
2. Interventions: counts drawn from a logistic-in-covariates model, then
   binarized to levels.
3. Survival: every member gets a streak-survival curve G(s) = P(streak >= s),
   bent by a frailty exponent driven by age and bmi and lifted by injected
   uplifts. The streak is drawn by inverting G with one uniform.
4. Attendance: weeks 1..S attended except isolated gap weeks, then two
   absent weeks and optionally one short return episode.
5. Visits: 2-3 visits per attended week on distinct days at the archetype's
   preferred hour.

With two visits per attended week and no gaps the critical count for week w
is 2w - 2, so the milestone at week w holds exactly when the streak reaches
w - 1 and P(milestone) = G(w - 1). Uplifts therefore act directly on
milestone probabilities.
"""
import logging
from dataclasses import asdict, dataclass, field, replace
from datetime import date, timedelta

import numpy as np
from scipy.special import expit

from .causal import binarize_treatment
from .cohort import CohortDataset, InterventionCounts, MemberProfile, VisitEvent
from .constants import Archetype, Calendar, Defaults, Level, Treatment
from .errors import DomainError, EstimationError, SchemeError, SpecError, TreatmentLookupError
from .vectorize import opening_hours

logger = logging.getLogger(__name__)

OUTCOME_WEEKS = tuple(range(Defaults.OUTCOME_WEEKS[0], Defaults.OUTCOME_WEEKS[1] + 1))

# Streak index s = week - 1 covered by uplifts
_UPLIFT_FIRST = OUTCOME_WEEKS[0] - 1
_UPLIFT_LAST = OUTCOME_WEEKS[-1] - 1

_AGE_MEAN, _AGE_SD = 35.0, 12.0
_BMI_MEAN, _BMI_SD = 25.0, 4.0
_OLDEST_AGE = 70
_FIRST_START = date(2023, 1, 2)
_START_SPAN_DAYS = 365
_MAX_BREAK_WEEKS = 10
_MAX_RETURN_WEEKS = 4

_STAGES = ("members", "interventions", "survival", "attendance", "returns", "visits")


# ============================================================================
# SPEC
# ============================================================================
@dataclass(frozen=True)
class TreatmentModel:
    """P(count > 0) = expit(intercept + age * z_age + bmi * z_bmi); count = 1 + Poisson(mean - 1)."""

    intercept: float
    age: float
    bmi: float
    mean_count: float


@dataclass(frozen=True)
class Uplift:
    """
    Additive milestone-probability effect for members at a treatment level.

    weekly overrides effect with one value per outcome week 6..17; archetype
    restricts the effect to one archetype.
    """

    treatment: str
    level: str
    effect: float = 0.0
    archetype: str | None = None
    weekly: tuple | None = None

    def effects(self):
        """Effect for each outcome week."""
        if self.weekly is not None:
            return np.asarray(self.weekly, dtype=float)
        return np.full(len(OUTCOME_WEEKS), float(self.effect))


def _default_hours():
    return {
        Archetype.MORNING: (8, 8),
        Archetype.NOON: (12, 11),
        Archetype.AFTERNOON: (15, 14),
        Archetype.EVENING: (18, 16),
        Archetype.NIGHT: (20, 18),
    }


def _default_age_bands():
    return {
        Archetype.MORNING: (0.0422, 0.14, 0.22, 0.3778, 0.22),
        Archetype.NOON: (0.05, 0.20, 0.27, 0.33, 0.15),
        Archetype.AFTERNOON: (0.16, 0.24, 0.22, 0.28, 0.10),
        Archetype.EVENING: (0.08, 0.22, 0.28, 0.33, 0.09),
        Archetype.NIGHT: (0.10, 0.30, 0.30, 0.25, 0.05),
    }


def _default_treatments():
    return {
        Treatment.GROUP_LESSONS: TreatmentModel(0.0, 0.3, -0.3, 6.0),
        Treatment.PT_SESSIONS: TreatmentModel(-0.4, 0.6, -0.4, 4.0),
        Treatment.INVITATION_CREDITS: TreatmentModel(-1.0, -0.3, 0.0, 2.0),
        Treatment.DISTINCT_CLUBS: TreatmentModel(-0.8, -0.2, 0.0, 2.0),
    }


@dataclass(frozen=True)
class GeneratorSpec:
    """
    Every knob of the synthetic cohort.

    hours maps archetype -> (weekday hour, weekend hour); hour_spread is the
    standard deviation of the entry-hour jitter per archetype; age_bands maps
    archetype -> P(age band) over Defaults.AGE_BANDS; frailty_gamma scales
    how strongly age and bmi bend the survival curve.
    """

    n_members: int = Defaults.N_MEMBERS
    archetype_weights: tuple = (0.15, 0.15, 0.2, 0.3, 0.2)
    hours: dict = field(default_factory=_default_hours)
    hour_spread: tuple = (0.4, 1.0, 1.2, 1.0, 0.4)
    age_bands: dict = field(default_factory=_default_age_bands)
    female_share: float = 0.5
    frailty_gamma: float = 0.15
    age_effect: float = 0.7
    bmi_effect: float = 0.7
    gap_prob: float = 0.05
    late_gap_prob: float = 0.2
    late_gap_weeks: int = 2
    return_share: float | None = 0.5
    three_visit_share: float = 0.25
    treatments: dict = field(default_factory=_default_treatments)
    distinct_lesson_share: float = 0.4
    uplifts: tuple = ()
    self_report_shares: dict = field(
        default_factory=lambda: {
            Treatment.EXPERIENCE_LEVEL: 0.402,
            Treatment.FORM_LEVEL: 0.336,
            Treatment.EST_VISIT_FREQUENCY: 0.41,
        }
    )
    clubs: tuple = ("club_center", "club_north", "club_south")
    categories: tuple = ("premium", "standard", "student")

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------------
    # Presets
    # ------------------------------------------------------------------
    @classmethod
    def calibrated(cls, **overrides):
        """Calibrated default: half the cohort drops before week 6, a fifth reaches week 17."""
        return cls(**overrides)

    @classmethod
    def low_noise(cls, **overrides):
        """Fixed archetype hours, no gaps, no return episodes."""
        settings = dict(hour_spread=(0.0,) * 5, gap_prob=0.0, late_gap_prob=0.0, return_share=None)
        return cls(**{**settings, **overrides})

    @classmethod
    def two_visit(cls, **overrides):
        """Exactly two visits per attended week and no gaps, so c_w = 2w - 2."""
        settings = dict(three_visit_share=0.0, gap_prob=0.0, late_gap_prob=0.0, return_share=None)
        return cls(**{**settings, **overrides})

    @classmethod
    def benchmark(cls, **overrides):
        """Two-visit regime with strong confounding and uplifts on pt_sessions."""
        uplifts = (
            Uplift(Treatment.PT_SESSIONS, Level.LOW, 0.05),
            Uplift(Treatment.PT_SESSIONS, Level.MODERATE, 0.1),
            Uplift(Treatment.PT_SESSIONS, Level.HIGH, 0.2),
        )
        settings = dict(frailty_gamma=1.0, uplifts=uplifts)
        return cls.two_visit(**{**settings, **overrides})

    PRESETS = ("calibrated", "low_noise", "two_visit", "benchmark")

    @classmethod
    def preset(cls, name, **overrides):
        if name not in cls.PRESETS:
            raise SpecError(f"unknown generator preset '{name}'")
        return getattr(cls, name)(**overrides)

    def with_members(self, n_members):
        return replace(self, n_members=n_members)

    # ------------------------------------------------------------------
    def validate(self):
        if self.n_members < 0:
            raise SpecError("n_members must be nonnegative")
        weights = np.asarray(self.archetype_weights, dtype=float)
        if weights.shape != (len(Archetype.ALL),) or (weights < 0).any():
            raise SpecError("archetype_weights needs one nonnegative weight per archetype")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise SpecError(f"archetype_weights sum to {weights.sum()}, not 1")
        if len(self.hour_spread) != len(Archetype.ALL) or min(self.hour_spread) < 0:
            raise SpecError("hour_spread needs one nonnegative value per archetype")
        for archetype in Archetype.ALL:
            if archetype not in self.hours:
                raise SpecError(f"no hours for archetype {archetype}")
            probs = np.asarray(self.age_bands.get(archetype, ()), dtype=float)
            if probs.shape != (len(Defaults.AGE_BANDS),) or abs(probs.sum() - 1.0) > 1e-9:
                raise SpecError(f"age band probabilities of {archetype} must sum to 1")
        for name in ("female_share", "gap_prob", "late_gap_prob", "three_visit_share",
                     "distinct_lesson_share"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SpecError(f"{name} must be within [0, 1]")
        if self.return_share is not None and not 0.0 < self.return_share <= 1.0:
            raise SpecError("return_share must be within (0, 1]")
        if self.frailty_gamma < 0:
            raise SpecError("frailty_gamma must be nonnegative")
        for uplift in self.uplifts:
            if uplift.treatment not in Treatment.INTERVENTIONS:
                raise SpecError(f"uplift on unknown treatment {uplift.treatment}")
            if uplift.level not in Level.POSITIVE:
                raise SpecError(f"uplift level must be one of {Level.POSITIVE}")
            if uplift.archetype is not None and uplift.archetype not in Archetype.ALL:
                raise SpecError(f"uplift on unknown archetype {uplift.archetype}")
            if uplift.weekly is not None and len(uplift.weekly) != len(OUTCOME_WEEKS):
                raise SpecError(f"weekly uplift needs {len(OUTCOME_WEEKS)} values")

    def to_dict(self):
        data = asdict(self)
        data["uplifts"] = [asdict(u) for u in self.uplifts]
        return data


# ============================================================================
# SURVIVAL CURVES
# ============================================================================
def base_survival_curve():
    """
    G(s) = P(streak >= s) for s = 0..53 before frailty.

    0.5 at s = 6, 0.2 at s = 17, 0.05 at s = 52 with geometric decay in
    between; G(53) = 0.
    """
    s = np.arange(Calendar.CONTRACT_WEEKS + 2, dtype=float)
    habit, sustained, last = Defaults.HABIT_WEEK, Defaults.SUSTAINED_WEEK, Calendar.CONTRACT_WEEKS
    curve = np.where(
        s <= habit,
        0.5 ** (s / habit),
        np.where(
            s <= sustained,
            0.5 * (0.2 / 0.5) ** ((s - habit) / (sustained - habit)),
            0.2 * (0.05 / 0.2) ** ((s - sustained) / (last - sustained)),
        ),
    )
    curve[-1] = 0.0
    return curve


def frailty(z_age, z_bmi, spec):
    """Per-member exponent theta; older members survive longer, heavier ones shorter."""
    eta = spec.age_effect * np.asarray(z_age) - spec.bmi_effect * np.asarray(z_bmi)
    return np.clip(np.exp(-spec.frailty_gamma * eta), 0.4, 2.5)


def apply_uplift(curves, uplift):
    """
    Add per-member uplifts (n x 12, weeks 6..17) to survival curves (n x 54).

    Indices below the uplifted range are raised to keep the curve
    non-increasing; indices above are capped by the last uplifted value.

    Raises:
        SpecError: if a curve leaves [0, 1] or stops being non-increasing
    """
    lifted = curves.copy()
    lifted[:, _UPLIFT_FIRST:_UPLIFT_LAST + 1] += uplift
    head = lifted[:, _UPLIFT_FIRST][:, None]
    tail = lifted[:, _UPLIFT_LAST][:, None]
    lifted[:, 1:_UPLIFT_FIRST] = np.maximum(curves[:, 1:_UPLIFT_FIRST], head)
    lifted[:, _UPLIFT_LAST + 1:] = np.minimum(curves[:, _UPLIFT_LAST + 1:], tail)
    lifted[:, 0] = 1.0
    if lifted.size and (lifted.min() < 0.0 or lifted.max() > 1.0):
        raise SpecError("uplift pushes a milestone probability outside [0, 1]")
    if lifted.size and (np.diff(lifted, axis=1) > 1e-12).any():
        raise SpecError("uplift makes a survival curve increase")
    return lifted


def draw_streaks(curves, uniforms):
    """S = #{s >= 1 : G(s) >= U}."""
    return (curves[:, 1:] >= uniforms[:, None]).sum(axis=1)


# ============================================================================
# GROUND TRUTH
# ============================================================================
@dataclass(frozen=True, eq=False)
class GroundTruth:
    """
    Realized generator state.

    p_untreated and p_assigned hold P(milestone) at weeks 6..17 without any
    uplift and under the member's actual treatments. uplifts maps every
    intervention to the (members x 12) effect it contributes.
    """

    spec: GeneratorSpec
    seed: int
    member_ids: tuple
    archetypes: np.ndarray
    levels: dict
    streaks: np.ndarray
    p_untreated: np.ndarray
    p_assigned: np.ndarray
    uplifts: dict

    def archetype_map(self):
        return {mid: Archetype.ALL[a] for mid, a in zip(self.member_ids, self.archetypes)}

    def to_json_dict(self):
        members = []
        for i, member_id in enumerate(self.member_ids):
            members.append(
                {
                    "member_id": member_id,
                    "archetype": Archetype.ALL[self.archetypes[i]],
                    "levels": {t: self.levels[t][i] for t in Treatment.INTERVENTIONS},
                    "streak_weeks": int(self.streaks[i]),
                    "p_untreated": self.p_untreated[i].tolist(),
                    "p_assigned": self.p_assigned[i].tolist(),
                }
            )
        return {
            "seed": self.seed,
            "outcome_weeks": list(OUTCOME_WEEKS),
            "spec": self.spec.to_dict(),
            "members": members,
        }


def ground_truth_att(truth, treatment, level, week):
    """
    Mean injected uplift over members at a treatment level.

    Raises:
        TreatmentLookupError: treatment not generated
        DomainError: week outside 6..17
        EstimationError: nobody at the level
    """
    if treatment not in truth.uplifts:
        raise TreatmentLookupError(f"treatment '{treatment}' is not part of the generator spec")
    if week not in OUTCOME_WEEKS:
        raise DomainError(f"week must be within {OUTCOME_WEEKS[0]}..{OUTCOME_WEEKS[-1]}")
    treated = truth.levels[treatment] == level
    if not treated.any():
        raise EstimationError(f"no member received {treatment} at level {level}")
    return float(truth.uplifts[treatment][treated, week - OUTCOME_WEEKS[0]].mean())


# ============================================================================
# STAGES
# ============================================================================
def _draw_members(rng, spec):
    n = spec.n_members
    archetypes = rng.choice(len(Archetype.ALL), size=n, p=np.asarray(spec.archetype_weights))
    band_probs = np.array([spec.age_bands[a] for a in Archetype.ALL])[archetypes]
    bands = (rng.random(n)[:, None] > np.cumsum(band_probs, axis=1)).sum(axis=1)
    bands = np.minimum(bands, len(Defaults.AGE_BANDS) - 1)
    lows = np.array([low for low, _ in Defaults.AGE_BANDS])[bands]
    highs = np.array([_OLDEST_AGE if high is None else high for _, high in Defaults.AGE_BANDS])[bands]
    ages = rng.integers(lows, highs + 1)
    female = rng.random(n) < spec.female_share
    bmi = np.round(np.clip(24.0 + 0.06 * (ages - 35) + rng.normal(0.0, 3.5, n), 16.0, 45.0), 1)
    starts = rng.integers(0, _START_SPAN_DAYS, n)
    clubs = rng.integers(0, len(spec.clubs), n)
    categories = rng.integers(0, len(spec.categories), n)

    # One uniform per member: answering a rarer question implies answering the commoner ones
    answered = rng.random(n)
    self_reported = {}
    for name in Treatment.SELF_REPORTED:
        values = rng.integers(0, Treatment.SELF_REPORTED_LEVELS[name], n)
        self_reported[name] = np.where(answered < spec.self_report_shares[name], values, -1)

    members = []
    for i in range(n):
        optional = {
            name: (int(values[i]) if values[i] >= 0 else None)
            for name, values in self_reported.items()
        }
        members.append(
            MemberProfile(
                member_id=f"M{i:06d}",
                age=int(ages[i]),
                gender="female" if female[i] else "male",
                bmi=float(bmi[i]),
                contract_start=_FIRST_START + timedelta(days=int(starts[i])),
                main_club=spec.clubs[clubs[i]],
                membership_category=spec.categories[categories[i]],
                **optional,
            )
        )
    return members, archetypes, ages, bmi


def _draw_interventions(rng, spec, z_age, z_bmi):
    n = len(z_age)
    counts = {}
    for name in (Treatment.GROUP_LESSONS, Treatment.PT_SESSIONS,
                 Treatment.INVITATION_CREDITS, Treatment.DISTINCT_CLUBS):
        model = spec.treatments[name]
        p_any = expit(model.intercept + model.age * z_age + model.bmi * z_bmi)
        any_ = rng.random(n) < p_any
        extra = rng.poisson(max(model.mean_count - 1.0, 0.0), n)
        counts[name] = np.where(any_, 1 + extra, 0)
    lessons = counts[Treatment.GROUP_LESSONS]
    distinct = 1 + rng.binomial(np.maximum(lessons - 1, 0), spec.distinct_lesson_share)
    counts[Treatment.DISTINCT_GROUP_LESSONS] = np.where(lessons > 0, distinct, 0)
    return counts


def _levels(values):
    try:
        return binarize_treatment(values)
    except SchemeError:
        return np.full(len(values), Level.NONE, dtype=object)


def _uplift_arrays(spec, archetypes, levels):
    n = len(archetypes)
    arrays = {name: np.zeros((n, len(OUTCOME_WEEKS))) for name in Treatment.INTERVENTIONS}
    for uplift in spec.uplifts:
        hit = levels[uplift.treatment] == uplift.level
        if uplift.archetype is not None:
            hit &= archetypes == Archetype.ALL.index(uplift.archetype)
        arrays[uplift.treatment][hit] += uplift.effects()[None, :]
    return arrays


def _draw_attendance(rng, spec, streaks):
    n, n_weeks = len(streaks), Calendar.CONTRACT_WEEKS
    weeks = np.arange(1, n_weeks + 1)
    attended = weeks[None, :] <= streaks[:, None]
    late = weeks[None, :] >= (streaks[:, None] - spec.late_gap_weeks)
    prob = np.where(late, spec.late_gap_prob, spec.gap_prob)
    candidate = (weeks[None, :] < streaks[:, None]) & (rng.random((n, n_weeks)) < prob)
    for w in range(1, n_weeks):
        candidate[:, w] &= ~candidate[:, w - 1]
    return attended & ~candidate, candidate


def _add_return_episodes(rng, spec, attended, gaps, streaks):
    if spec.return_share is None:
        return attended
    single_gaps = int(gaps[:, 1:].sum())
    wanted = int(round(single_gaps * (1.0 - spec.return_share) / spec.return_share))
    eligible = np.flatnonzero((streaks >= 1) & (streaks <= Calendar.CONTRACT_WEEKS - 3))
    if wanted > eligible.size:
        logger.warning(
            "Only %d members can take %d return episodes", eligible.size, wanted
        )
    chosen = np.sort(rng.choice(eligible, size=min(wanted, eligible.size), replace=False))
    attended = attended.copy()
    for i in chosen:
        longest = min(_MAX_BREAK_WEEKS, Calendar.CONTRACT_WEEKS - 1 - streaks[i])
        pause = int(rng.integers(2, longest + 1))
        length = int(rng.integers(1, _MAX_RETURN_WEEKS + 1))
        first = streaks[i] + pause + 1
        attended[i, first - 1:min(first - 1 + length, Calendar.CONTRACT_WEEKS)] = True
    return attended


def _draw_visits(rng, spec, members, archetypes, attended):
    rows, week_idx = np.nonzero(attended)
    n_weeks = rows.size
    per_week = 2 + (rng.random(n_weeks) < spec.three_visit_share)
    day_order = np.argsort(rng.random((n_weeks, Calendar.DAYS_PER_WEEK)), axis=1)
    take = np.arange(Calendar.DAYS_PER_WEEK)[None, :] < per_week[:, None]
    visit_rows = np.repeat(rows, per_week)
    visit_weeks = np.repeat(week_idx, per_week)
    day_offsets = visit_weeks * Calendar.DAYS_PER_WEEK + day_order[take]

    starts = np.array([p.contract_start.toordinal() for p in members], dtype=np.int64)
    ordinals = starts[visit_rows] + day_offsets
    weekdays = (ordinals - 1) % Calendar.DAYS_PER_WEEK
    weekend = np.isin(weekdays, Calendar.WEEKEND_DAYS)
    arch = archetypes[visit_rows]
    weekday_hour = np.array([spec.hours[a][0] for a in Archetype.ALL])[arch]
    weekend_hour = np.array([spec.hours[a][1] for a in Archetype.ALL])[arch]
    spread = np.asarray(spec.hour_spread, dtype=float)[arch]
    jitter = np.round(rng.normal(0.0, 1.0, visit_rows.size) * spread).astype(np.int64)
    entry = np.where(weekend, weekend_hour, weekday_hour) + jitter
    opening, closing = opening_hours(weekdays)
    entry = np.clip(entry, opening, closing - 1)

    return [
        VisitEvent(members[r].member_id, date.fromordinal(int(o)), int(h), int(h) + 1)
        for r, o, h in zip(visit_rows, ordinals, entry)
    ]


def generate_cohort(spec=None, seed=Defaults.SEED):
    """
    Generate a cohort and its ground truth.

    Returns:
        (CohortDataset, GroundTruth)

    Raises:
        SpecError: infeasible spec
    """
    spec = GeneratorSpec.calibrated() if spec is None else spec
    spec.validate()
    children = np.random.SeedSequence(seed).spawn(len(_STAGES))
    streams = {stage: np.random.default_rng(child) for stage, child in zip(_STAGES, children)}

    members, archetypes, ages, bmi = _draw_members(streams["members"], spec)
    z_age = (ages - _AGE_MEAN) / _AGE_SD
    z_bmi = (bmi - _BMI_MEAN) / _BMI_SD

    counts = _draw_interventions(streams["interventions"], spec, z_age, z_bmi)
    levels = {name: _levels(values) for name, values in counts.items()}

    theta = frailty(z_age, z_bmi, spec)
    untreated = base_survival_curve()[None, :] ** theta[:, None]
    uplifts = _uplift_arrays(spec, archetypes, levels)
    total = sum(uplifts.values())
    assigned = apply_uplift(untreated, total) if spec.uplifts else untreated
    # 1 - U[0, 1) lies in (0, 1], so G(53) = 0 is never reached
    streaks = draw_streaks(assigned, 1.0 - streams["survival"].random(spec.n_members))

    attended, gaps = _draw_attendance(streams["attendance"], spec, streaks)
    attended = _add_return_episodes(streams["returns"], spec, attended, gaps, streaks)
    visits = _draw_visits(streams["visits"], spec, members, archetypes, attended)

    interventions = {
        m.member_id: InterventionCounts(m.member_id, **{name: int(counts[name][i]) for name in counts})
        for i, m in enumerate(members)
    }
    cohort = CohortDataset(members=tuple(members), visits=tuple(visits), interventions=interventions)
    outcome_index = np.asarray(OUTCOME_WEEKS) - 1
    truth = GroundTruth(
        spec=spec,
        seed=seed,
        member_ids=cohort.member_ids,
        archetypes=archetypes,
        levels=levels,
        streaks=streaks,
        p_untreated=untreated[:, outcome_index],
        p_assigned=assigned[:, outcome_index],
        uplifts=uplifts,
    )
    logger.info(
        "Generated %d members, %d visits (seed %d)", len(members), len(visits), seed
    )
    return cohort, truth


def archetype_age_deviation(spec, archetype, band_index):
    """Expected deviation of an age band inside an archetype, implied by a generator spec's tables."""
    weights = np.asarray(spec.archetype_weights)
    table = np.array([spec.age_bands[a] for a in Archetype.ALL])
    marginal = weights @ table[:, band_index]
    return float(table[Archetype.ALL.index(archetype), band_index] / marginal - 1.0)
