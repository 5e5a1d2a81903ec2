"""
Main habitforge application.
Ties the analysis modules to artifact input and output.
Storage-independent - receives its source and sink through dependency injection.
"""
import logging
from functools import cached_property

import numpy as np
import pandas as pd

from . import figures
from .causal import (
    CLUSTER_COVARIATE,
    INACTIVE_CLUSTER,
    CausalContext,
    EstimationSettings,
    TreatmentSpec,
    contrast_pipeline,
    effect_by_cluster,
    estimates_frame,
    estimates_from_frame,
    four_level_cuts,
    self_reported_effects,
)
from .cohort import interventions_to_frame, members_to_frame, visits_to_frame
from .constants import Defaults, Files, Grouping, Level, Treatment
from .critical import critical_visit_table, fit_milestone_line, visit_count_split
from .demographics import age_band_partition, deviation, gender_partition, reports_frame
from .errors import EstimationError, SchemeError, ValidationError
from .nmf import ClusterModel, assign_clusters, fit_clusters, membership_prob_cdf, transition_matrix
from .sinks import write_manifest
from .survival import (
    attendance_matrix,
    gap_usage_stats,
    group_keys,
    intermediate_gap_cdf,
    records_to_frame,
    survival_cdf,
    survival_records,
    survival_shares,
    survival_summary,
)
from .synth import GeneratorSpec, generate_cohort
from .vectorize import build_matrix

logger = logging.getLogger(__name__)


class HabitForgeApp:
    """
    Runs one subcommand against a cohort source and an artifact sink.
    Storage-independent - receives source and sink through dependency injection.
    """

    SUBCOMMANDS = (
        "generate",
        "vectorize",
        "cluster",
        "survival",
        "critical",
        "deviations",
        "causal",
        "report",
    )

    def __init__(self, config, source, sink):
        """
        Initialize the application.

        Args:
            config: Resolved RunConfig
            source: CohortSource for inputs and earlier artifacts
            sink: ArtifactSink receiving every output
        """
        self.config = config
        self.source = source
        self.sink = sink

    def run(self, subcommand):
        """
        Execute a subcommand and write its manifest.

        Raises:
            ValidationError: unknown subcommand
            HabitForgeError: any analysis failure
        """
        if subcommand not in self.SUBCOMMANDS:
            raise ValidationError(f"unknown subcommand '{subcommand}'")
        logger.info("Running %s", subcommand)
        details = getattr(self, f"_run_{subcommand}")()
        write_manifest(self.sink, subcommand, self.config, details)
        return details

    # ========================================================================
    # SHARED INPUTS
    # ========================================================================
    @cached_property
    def cohort(self):
        return self.source.load_cohort()

    @cached_property
    def records(self):
        return survival_records(self.cohort, self.config.gap_tolerance)

    def _fit_windows(self):
        """Early model fit on config.window, late model assigned on config.late_window."""
        cfg = self.config
        early = fit_clusters(
            build_matrix(self.cohort, cfg.window, cfg.normalize),
            cfg.k, max_iters=cfg.max_iters, tol=cfg.tol, seed=cfg.seed, restarts=cfg.restarts,
        )
        late = self._late_model(early)
        return early, late

    def _late_model(self, early):
        cfg = self.config
        return assign_clusters(
            build_matrix(self.cohort, cfg.late_window, cfg.normalize),
            early, refit=cfg.refit, max_iters=cfg.max_iters, tol=cfg.tol, seed=cfg.seed,
            restarts=cfg.restarts,
        )

    def _stored_clusters(self):
        """Cluster model written by the cluster subcommand, or None."""
        if not self.source.has(Files.CLUSTER_MODEL):
            return None
        model = ClusterModel.from_json_dict(self.source.read_json(Files.CLUSTER_MODEL))
        if set(model.member_ids) != set(self.cohort.member_ids):
            raise ValidationError(
                f"{Files.CLUSTER_MODEL} was fit on a different cohort; rerun cluster"
            )
        return model

    def _required_clusters(self):
        model = self._stored_clusters()
        if model is None:
            raise ValidationError(f"{Files.CLUSTER_MODEL} not found; run cluster first")
        return model

    def _cluster_names(self, model):
        """member_id -> cluster name, inactive members included."""
        return {
            member_id: model.names[label] if active else INACTIVE_CLUSTER
            for member_id, label, active in zip(model.member_ids, model.labels, model.active)
        }

    # ========================================================================
    # GENERATE / VECTORIZE
    # ========================================================================
    def _run_generate(self):
        cfg = self.config
        spec = GeneratorSpec.preset(cfg.preset).with_members(cfg.n_members)
        cohort, truth = generate_cohort(spec, cfg.seed)
        self.sink.write_table(Files.MEMBERS, members_to_frame(cohort.members))
        self.sink.write_table(Files.VISITS, visits_to_frame(cohort.visits))
        self.sink.write_table(Files.INTERVENTIONS, interventions_to_frame(cohort.interventions))
        self.sink.write_json(Files.TRUTH, truth.to_json_dict())
        return {"preset": cfg.preset, "seed": cfg.seed, "n_visits": len(cohort.visits)}

    def _run_vectorize(self):
        cfg = self.config
        details = {}
        for window in sorted({cfg.window, cfg.late_window}):
            matrix = build_matrix(self.cohort, window, cfg.normalize)
            self.sink.write_table(Files.matrix(window), matrix.to_frame())
            details[f"zero_rows_w{window}"] = int(matrix.zero_rows.sum())
        return details

    # ========================================================================
    # CLUSTER
    # ========================================================================
    def _transition(self, early, late):
        """Transition counts over members active in both windows."""
        source, target = early.label_map(), late.label_map()
        common = source.keys() & target.keys()
        dropped = len(source) + len(target) - 2 * len(common)
        if dropped:
            logger.info("%d members active in only one window left out of transitions", dropped)
        return transition_matrix(
            {m: source[m] for m in common}, {m: target[m] for m in common}, early.k, early.names
        )

    def _membership_cdfs(self, model):
        return {
            j: membership_prob_cdf(model.probabilities[model.active], j) for j in range(model.k)
        }

    def _run_cluster(self):
        early, late = self._fit_windows()
        transition = self._transition(early, late)
        self.sink.write_table(Files.CLUSTERS, early.to_frame())
        self.sink.write_table(Files.CLUSTERS_LATE, late.to_frame())
        self.sink.write_json(Files.CLUSTER_MODEL, early.to_json_dict())
        self.sink.write_table(Files.TRANSITION, transition.to_frame())
        frames = [
            cdf.to_frame(window=model.window_weeks, cluster=model.names[j])
            for model in (early, late)
            for j, cdf in self._membership_cdfs(model).items()
        ]
        self.sink.write_table(Files.MEMBERSHIP_CDF, pd.concat(frames, ignore_index=True))
        logger.info("Transition diagonal share %.3f", transition.diagonal_share)
        return {
            "n_iter": early.n_iter,
            "final_error": early.final_error,
            "diagonal_share": transition.diagonal_share,
        }

    # ========================================================================
    # SURVIVAL
    # ========================================================================
    def _survival_curves(self, clusters=None):
        """Grouping name -> {group -> SurvivalCurve}; members outside every group are skipped."""
        groupings = [Grouping.ALL, Grouping.GENDER, Grouping.AGE_BAND]
        labels = None
        if clusters is not None:
            groupings.append(Grouping.CLUSTER)
            labels = self._cluster_names(clusters)
        curves = {}
        for group_by in groupings:
            keys = group_keys(self.cohort, group_by, labels, self.config.age_bands)
            records = [r for r in self.records if keys.get(r.member_id) is not None]
            curves[group_by] = survival_cdf(records, group_by, keys)
        return curves

    def _run_survival(self):
        cfg = self.config
        curves = self._survival_curves(self._stored_clusters())
        stats = gap_usage_stats(self.records, cfg.survival_bins)
        gaps = intermediate_gap_cdf(attendance_matrix(self.cohort))
        summary = survival_summary(self.records)

        self.sink.write_table(Files.SURVIVAL_RECORDS, records_to_frame(self.records))
        frames = [
            curve.cdf.to_frame(group_by=group_by, group=name)
            for group_by, grouped in curves.items()
            for name, curve in grouped.items()
        ]
        self.sink.write_table(Files.SURVIVAL_CDF, pd.concat(frames, ignore_index=True))
        self.sink.write_json(Files.SURVIVAL_SUMMARY, summary)
        self.sink.write_table(Files.SURVIVAL_SHARES, survival_shares(curves))
        self.sink.write_table(Files.GAPS_PER_WEEK, stats.gaps_per_week.reset_index())
        self.sink.write_table(Files.GAP_RATE_BY_WEEK, stats.rate_by_week)
        self.sink.write_table(Files.GAP_RATE_BY_WEEKS_TO_END, stats.rate_by_weeks_to_end)
        self.sink.write_table(Files.GAP_JOINT, stats.joint.reset_index())
        self.sink.write_table(Files.INTERMEDIATE_GAP_CDF, gaps.to_frame())
        return {"gap_tolerance": cfg.gap_tolerance, "intermediate_gap_cdf_1": float(gaps(1))}

    # ========================================================================
    # CRITICAL VISITS
    # ========================================================================
    def _critical(self, default_weeks=Defaults.CRITICAL_WEEKS):
        table = critical_visit_table(
            self.cohort, self.records, self.config.week_range(default_weeks)
        )
        fit = None
        if len(table) >= 2:
            fit = fit_milestone_line(table)
        else:
            logger.warning("Milestone fit skipped: %d table entries", len(table))
        return table, fit

    def _run_critical(self):
        table, fit = self._critical()
        self.sink.write_table(Files.CRITICAL_TABLE, table.to_frame())
        document = fit.to_json_dict() if fit is not None else {}
        document["flagged_weeks"] = list(table.flagged)
        self.sink.write_json(Files.MILESTONE_FIT, document)
        return {"flagged_weeks": list(table.flagged)}

    # ========================================================================
    # DEVIATIONS
    # ========================================================================
    def _deviation_reports(self, model):
        labels = model.label_map(active_only=True)
        partitions = (gender_partition(), age_band_partition(self.config.age_bands))
        return [
            deviation(self.cohort.members, labels, partition, model.names)
            for partition in partitions
        ]

    def _run_deviations(self):
        reports = self._deviation_reports(self._required_clusters())
        self.sink.write_table(Files.DEVIATIONS, reports_frame(reports))
        return {
            "undefined": {r.partition: int(r.frame["undefined"].sum()) for r in reports}
        }

    # ========================================================================
    # CAUSAL
    # ========================================================================
    def _settings(self):
        cfg = self.config
        return EstimationSettings(
            ridge=cfg.ridge,
            caliper=cfg.caliper,
            n_bootstrap=cfg.bootstrap,
            refute_draws=cfg.refute,
            seed=cfg.seed,
            cluster_encoding=cfg.cluster_encoding,
        )

    def _run_causal(self):
        cfg = self.config
        weeks = list(self.config.week_range(Defaults.OUTCOME_WEEKS))
        table = critical_visit_table(self.cohort, self.records, weeks)
        clusters = self._stored_clusters()
        if clusters is None:
            logger.warning("No %s: propensity models run without cluster labels",
                           Files.CLUSTER_MODEL)
        context = CausalContext.build(self.cohort, table, clusters, weeks)
        settings = self._settings()

        estimates, balances, flagged, cuts = [], [], {}, {}
        for treatment in cfg.treatments:
            try:
                cuts[treatment] = four_level_cuts(context.frame[treatment].to_numpy(dtype=float))
            except SchemeError as exc:
                flagged[treatment] = str(exc)
                logger.warning("%s skipped: %s", treatment, exc)
                continue
            for level in cfg.levels:
                spec = TreatmentSpec.four_level(treatment, level)
                try:
                    pipeline = contrast_pipeline(context, spec, settings, weeks=weeks)
                    estimates.extend(pipeline.estimates(spec))
                    balances.append(
                        pipeline.balance().assign(treatment=treatment, level=level)
                    )
                except EstimationError as exc:
                    flagged[f"{treatment}:{level}"] = str(exc)
                    logger.warning("%s %s flagged: %s", treatment, level, exc)
                    continue
                if cfg.by_cluster and CLUSTER_COVARIATE in context.frame:
                    cluster_weeks = [w for w in Defaults.CLUSTER_WEEKS if w in context.weeks]
                    if cluster_weeks:
                        effects = effect_by_cluster(context, spec, cluster_weeks, settings)
                        estimates.extend(effects.estimates)
                        for name, reason in effects.flagged.items():
                            flagged[f"{treatment}:{level}:{name}"] = reason
        if cfg.self_reported:
            effects = self_reported_effects(context, weeks, settings)
            estimates.extend(effects.estimates)
            flagged.update(effects.flagged)
        if not estimates:
            raise EstimationError("no contrast could be estimated")

        self.sink.write_table(Files.ESTIMATES, estimates_frame(estimates))
        if balances:
            self.sink.write_table(Files.BALANCE, pd.concat(balances, ignore_index=True))
        return {
            "seed": cfg.seed,
            "ridge": cfg.ridge,
            "cut_points": {t: list(c) for t, c in cuts.items()},
            "contrasts": [f"{t}:{lv}_vs_{Level.NONE}" for t in cuts for lv in cfg.levels],
            "outcome_thresholds": {str(w): c for w, c in table.thresholds().items()},
            "flagged": flagged,
        }

    # ========================================================================
    # REPORT
    # ========================================================================
    def _run_report(self):
        summary = {"n_members": len(self.cohort), "n_visits": len(self.cohort.visits)}

        early = self._stored_clusters()
        if early is None:
            early, late = self._fit_windows()
        else:
            late = self._late_model(early)
        transition = self._transition(early, late)
        self.sink.write_figure(Files.FIG_COMPONENTS, figures.component_heatmaps(early))
        self.sink.write_figure(
            Files.FIG_MEMBERSHIP_CDF, figures.membership_cdfs(early, self._membership_cdfs(early))
        )
        self.sink.write_figure(Files.FIG_TRANSITION, figures.transition_heatmap(transition))
        sizes = np.bincount(early.labels[early.active], minlength=early.k)
        summary["clusters"] = {
            "names": list(early.names),
            "sizes": sizes.tolist(),
            "inactive": int((~early.active).sum()),
            "final_error": early.final_error,
            "diagonal_share": transition.diagonal_share,
        }

        curves = self._survival_curves(early)
        for group_by, grouped in curves.items():
            self.sink.write_figure(
                Files.FIG_SURVIVAL.format(group_by=group_by),
                figures.survival_cdfs(grouped, title=f"survival by {group_by}"),
            )
        stats = gap_usage_stats(self.records, self.config.survival_bins)
        gaps = intermediate_gap_cdf(attendance_matrix(self.cohort))
        self.sink.write_figure(Files.FIG_GAP_USAGE, figures.gap_usage(stats))
        self.sink.write_figure(Files.FIG_INTERMEDIATE_GAPS, figures.intermediate_gap_plot(gaps))
        summary["survival"] = survival_summary(self.records)
        summary["survival"]["intermediate_gap_cdf_1"] = float(gaps(1))

        table, fit = self._critical()
        for week in (Defaults.HABIT_WEEK, Defaults.SUSTAINED_WEEK):
            estimate = table.get(week)
            if estimate is None:
                continue
            short, long = visit_count_split(self.cohort, self.records, week)
            self.sink.write_figure(
                Files.FIG_CRITICAL_SPLIT.format(week=week),
                figures.critical_split_plot(short, long, estimate),
            )
        self.sink.write_figure(Files.FIG_MILESTONE_FIT, figures.milestone_fit_plot(table, fit))
        summary["critical"] = {
            "thresholds": {str(w): c for w, c in table.thresholds().items()},
            "flagged_weeks": list(table.flagged),
            "milestone_fit": fit.to_json_dict() if fit is not None else None,
        }

        reports = self._deviation_reports(early)
        for report in reports:
            self.sink.write_figure(
                Files.FIG_DEVIATIONS.format(partition=report.partition),
                figures.deviation_heatmap(report),
            )

        summary["effects"] = self._report_effects()
        self.sink.write_json(Files.SUMMARY, summary)
        return {"figures": len([n for n in self.sink.outputs if n.endswith(".svg")])}

    def _report_effects(self):
        """Plot estimates written by the causal subcommand, if any."""
        if not self.source.has(Files.ESTIMATES):
            logger.info("No %s: effect figures skipped", Files.ESTIMATES)
            return []
        estimates = estimates_from_frame(self.source.read_table(Files.ESTIMATES))
        headline = []
        for treatment in Treatment.INTERVENTIONS:
            for level in Level.POSITIVE:
                rows = [e for e in estimates if e.treatment == treatment and e.level == level]
                if not rows:
                    continue
                name = {"treatment": treatment, "level": level}
                title = f"{treatment} {level} vs {Level.NONE}"
                self.sink.write_figure(
                    Files.FIG_EFFECT_TIMELINE.format(**name),
                    figures.effect_timeline_plot(rows, title),
                )
                if any(e.cluster for e in rows):
                    self.sink.write_figure(
                        Files.FIG_CLUSTER_EFFECTS.format(**name),
                        figures.cluster_effects_plot(rows, title),
                    )
                overall = [e for e in rows if not e.cluster]
                if overall:
                    best = max(overall, key=lambda e: e.att)
                    headline.append({**name, "week": best.week, "max_att": best.att})
        return headline
