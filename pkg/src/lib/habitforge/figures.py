"""
Report figures as matplotlib Figure objects.

Figures are built with the object-oriented API only (no pyplot state), so
they can be created in any thread and written by an ArtifactSink.
"""
import logging

import numpy as np
from matplotlib.figure import Figure

from .constants import Calendar, Hours

logger = logging.getLogger(__name__)

WIDTH = 8.0
PANEL_HEIGHT = 3.0
HEATMAP_CMAP = "viridis"
DIVERGING_CMAP = "RdBu_r"


def _figure(rows=1, cols=1, height=PANEL_HEIGHT, squeeze=False):
    figure = Figure(figsize=(WIDTH, height * rows), layout="constrained")
    axes = figure.subplots(rows, cols, squeeze=squeeze)
    return figure, axes


def _step(ax, cdf, label):
    if cdf.is_empty:
        return
    x = np.concatenate(([cdf.x[0]], cdf.x))
    y = np.concatenate(([0.0], cdf.p))
    ax.step(x, y, where="post", label=label)


# ============================================================================
# CLUSTERS
# ============================================================================
def component_heatmaps(model):
    """One day x hour heatmap per NMF component."""
    figure, axes = _figure(model.k, 1, height=2.0)
    hours = [Hours.FIRST_BIN_HOUR + i for i in range(Hours.N_BINS)]
    for j, ax in enumerate(axes[:, 0]):
        grid = model.H[j].reshape(Calendar.DAYS_PER_WEEK, Hours.N_BINS)
        image = ax.imshow(grid, aspect="auto", cmap=HEATMAP_CMAP)
        ax.set_title(f"{model.names[j]} (peak {int(model.peak_hours[j])}:00)")
        ax.set_yticks(range(Calendar.DAYS_PER_WEEK), Calendar.DAY_NAMES)
        ax.set_xticks(range(0, Hours.N_BINS, 3), hours[::3])
        figure.colorbar(image, ax=ax)
    return figure


def membership_cdfs(model, cdfs):
    """
    Args:
        model: ClusterModel
        cdfs: cluster index -> EmpiricalCDF of P(cluster)
    """
    figure, axes = _figure()
    ax = axes[0, 0]
    for j, cdf in sorted(cdfs.items()):
        _step(ax, cdf, model.names[j])
    ax.set_xlabel("membership probability")
    ax.set_ylabel("CDF")
    ax.set_xlim(0.0, 1.0)
    ax.legend(loc="upper left")
    return figure


def transition_heatmap(transition):
    figure, axes = _figure(height=5.0)
    ax = axes[0, 0]
    image = ax.imshow(transition.row_percentages, cmap=HEATMAP_CMAP, vmin=0.0, vmax=100.0)
    k = len(transition.names)
    ax.set_xticks(range(k), transition.names)
    ax.set_yticks(range(k), transition.names)
    ax.set_xlabel("late window")
    ax.set_ylabel("early window")
    for i in range(k):
        for j in range(k):
            ax.text(j, i, f"{transition.percentages[i, j]:.1f}", ha="center", va="center",
                    color="white", fontsize=8)
    figure.colorbar(image, ax=ax, label="row percent")
    return figure


def deviation_heatmap(report):
    """Clusters x groups deviation matrix; undefined cells stay blank."""
    pivot = report.pivot()
    figure, axes = _figure(height=4.0)
    ax = axes[0, 0]
    values = pivot.to_numpy(dtype=float)
    finite = values[np.isfinite(values)]
    bound = max(float(np.abs(finite).max()), 1e-9) if finite.size else 1.0
    image = ax.imshow(values, cmap=DIVERGING_CMAP, vmin=-bound, vmax=bound, aspect="auto")
    ax.set_xticks(range(len(pivot.columns)), list(pivot.columns))
    ax.set_yticks(range(len(pivot.index)), list(pivot.index))
    ax.set_title(f"deviation by {report.partition}")
    figure.colorbar(image, ax=ax)
    return figure


# ============================================================================
# SURVIVAL
# ============================================================================
def survival_cdfs(curves, title=""):
    """Streak CDFs of each group of one grouping."""
    figure, axes = _figure()
    ax = axes[0, 0]
    for name, curve in curves.items():
        _step(ax, curve.cdf, f"{name} (n={curve.n})")
    ax.set_xlabel("survival streak (weeks)")
    ax.set_ylabel("CDF")
    ax.set_xlim(0, Calendar.CONTRACT_WEEKS)
    ax.set_title(title)
    ax.legend(loc="lower right")
    return figure


def gap_usage(stats):
    """Gap rate by membership week and by distance to streak end, per bin."""
    figure, axes = _figure(2, 1)
    by_week, by_end = axes[0, 0], axes[1, 0]
    for name, rows in stats.rate_by_week.groupby("bin", sort=False):
        by_week.plot(rows["week"], rows["rate"], label=name)
    for name, rows in stats.rate_by_weeks_to_end.groupby("bin", sort=False):
        by_end.plot(rows["weeks_to_end"], rows["rate"], label=name)
    by_week.set_xlabel("membership week")
    by_end.set_xlabel("weeks to streak end")
    for ax in (by_week, by_end):
        ax.set_ylabel("gap rate")
        ax.legend(loc="upper right")
    return figure


def intermediate_gap_plot(cdf):
    figure, axes = _figure()
    ax = axes[0, 0]
    _step(ax, cdf, "all members")
    ax.set_xlabel("gap length between attended weeks (weeks)")
    ax.set_ylabel("CDF")
    return figure


# ============================================================================
# CRITICAL VISITS
# ============================================================================
def critical_split_plot(short_counts, long_counts, estimate):
    """Histogram and CDF panels of both survivor groups at one week."""
    figure, axes = _figure(1, 2)
    hist, cdf = axes[0, 0], axes[0, 1]
    top = int(max(np.max(short_counts, initial=0), np.max(long_counts, initial=0)))
    bins = np.arange(top + 2) - 0.5
    hist.hist(short_counts, bins=bins, alpha=0.6, density=True,
              label=f"streak <= {estimate.week}")
    hist.hist(long_counts, bins=bins, alpha=0.6, density=True,
              label=f"streak > {estimate.week}")
    hist.set_xlabel(f"visits in weeks 1..{estimate.week}")
    hist.legend(loc="upper right")
    support = np.arange(top + 1)
    for counts, label in ((short_counts, "short"), (long_counts, "long")):
        ordered = np.sort(counts)
        cdf.step(support, np.searchsorted(ordered, support, side="right") / max(len(ordered), 1),
                 where="post", label=label)
    cdf.axvline(estimate.critical_visits, color="black", linestyle="--",
                label=f"c = {estimate.critical_visits}")
    cdf.set_xlabel("visits")
    cdf.legend(loc="lower right")
    return figure


def milestone_fit_plot(table, fit):
    figure, axes = _figure()
    ax = axes[0, 0]
    weeks = np.array(table.weeks, dtype=float)
    ax.scatter(weeks, [e.critical_visits for e in table.entries], s=12, label="critical visits")
    if fit is not None:
        ax.plot(weeks, fit.predict(weeks), color="black",
                label=f"y = {fit.slope:.2f}x {fit.intercept:+.2f}")
    ax.set_xlabel("week")
    ax.set_ylabel("visits")
    ax.legend(loc="upper left")
    return figure


# ============================================================================
# CAUSAL
# ============================================================================
def effect_timeline_plot(estimates, title=""):
    """ATT with its bootstrap band, and the naive difference, by week."""
    figure, axes = _figure()
    ax = axes[0, 0]
    rows = [e for e in estimates if not e.cluster]
    if rows:
        weeks = np.array([e.week for e in rows])
        att = np.array([e.att for e in rows])
        low = np.array([e.band[0] for e in rows])
        high = np.array([e.band[1] for e in rows])
        ax.fill_between(weeks, low, high, alpha=0.3, label="bootstrap band")
        ax.plot(weeks, att, marker="o", label="ATT")
        ax.plot(weeks, [e.naive for e in rows], linestyle=":", label="naive difference")
    ax.axhline(0.0, color="grey", linewidth=0.8)
    ax.set_xlabel("outcome week")
    ax.set_ylabel("effect on milestone probability")
    ax.set_title(title)
    ax.legend(loc="upper right")
    return figure


def cluster_effects_plot(estimates, title=""):
    """Grouped bars: one group per cluster, one bar per outcome week."""
    figure, axes = _figure()
    ax = axes[0, 0]
    clusters = sorted({e.cluster for e in estimates if e.cluster})
    weeks = sorted({e.week for e in estimates if e.cluster})
    if clusters and weeks:
        width = 0.8 / len(weeks)
        lookup = {(e.cluster, e.week): e for e in estimates if e.cluster}
        for offset, week in enumerate(weeks):
            xs, ys, errors = [], [], []
            for i, cluster in enumerate(clusters):
                estimate = lookup.get((cluster, week))
                if estimate is None:
                    continue
                xs.append(i + offset * width)
                ys.append(estimate.att)
                errors.append([max(estimate.att - estimate.band[0], 0.0),
                               max(estimate.band[1] - estimate.att, 0.0)])
            ax.bar(xs, ys, width=width, yerr=np.array(errors).T if errors else None,
                   label=f"week {week}")
        ax.set_xticks([i + 0.4 - width / 2 for i in range(len(clusters))], clusters)
    ax.axhline(0.0, color="grey", linewidth=0.8)
    ax.set_ylabel("ATT")
    ax.set_title(title)
    ax.legend(loc="upper right")
    return figure
