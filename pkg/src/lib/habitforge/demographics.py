"""
Demographic over/under-representation inside clusters.

deviation(i, j) = P(D_i | C_j) / P(D_i) - 1 from empirical frequencies over
members with a cluster label.
"""
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd

from .cohort import Gender
from .constants import Columns, Defaults
from .errors import ValidationError
from .survival import age_band, band_label

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DemographicPartition:
    """Named partition of members into groups."""

    name: str
    groups: tuple
    assign: Callable

    def group_of(self, member):
        group = self.assign(member)
        if group not in self.groups:
            raise ValidationError(
                f"member {member.member_id} falls outside the '{self.name}' partition"
            )
        return group


def gender_partition():
    return DemographicPartition("gender", tuple(str(g) for g in Gender), lambda m: str(m.gender))


def age_band_partition(bands=Defaults.AGE_BANDS):
    groups = tuple(band_label(low, high) for low, high in bands)
    return DemographicPartition("age_band", groups, lambda m: age_band(m.age, bands))


@dataclass(frozen=True, eq=False)
class DeviationReport:
    """
    One row per (cluster, group) with p_conditional, p_marginal and deviation.

    Groups absent from the labeled population have no marginal mass; their
    rows are flagged undefined and carry NaN instead of a deviation. Empty
    clusters are flagged the same way.
    """

    partition: str
    frame: pd.DataFrame
    cluster_shares: pd.Series

    @property
    def undefined(self):
        return self.frame[self.frame["undefined"]]

    def value(self, cluster, group):
        row = self.frame[(self.frame["cluster"] == cluster) & (self.frame["group"] == group)]
        if row.empty:
            raise ValidationError(f"no deviation for cluster '{cluster}', group '{group}'")
        return float(row["deviation"].iloc[0])

    def pivot(self):
        """Deviation matrix, clusters as rows and groups as columns."""
        return self.frame.pivot(index="cluster", columns="group", values="deviation")

    def to_frame(self):
        return self.frame.loc[:, list(Columns.DEVIATIONS)]


def deviation(members, labels, partition, names=None):
    """
    Deviation of every demographic group within every cluster.

    Args:
        members: MemberProfile iterable
        labels: member_id -> cluster index; members without a label are skipped
        partition: DemographicPartition
        names: Optional cluster names indexed by label

    Raises:
        ValidationError: labels for unknown members, or a member outside the partition
    """
    profiles = {m.member_id: m for m in members}
    unknown = set(labels) - set(profiles)
    if unknown:
        raise ValidationError(f"labels reference {len(unknown)} unknown members")

    ids = sorted(labels)
    clusters = pd.Series([labels[mid] for mid in ids], dtype=np.int64)
    groups = pd.Series([partition.group_of(profiles[mid]) for mid in ids], dtype=object)
    if names is None:
        names = [str(j) for j in range(int(clusters.max()) + 1)] if len(ids) else []
    cluster_index = pd.Index(range(len(names)))

    table = pd.crosstab(clusters, groups).reindex(
        index=cluster_index, columns=list(partition.groups), fill_value=0
    )
    n = float(len(ids))
    cluster_sizes = table.sum(axis=1)
    marginal = table.sum(axis=0) / n if n else table.sum(axis=0) * 0.0

    rows = []
    for j in cluster_index:
        for group in partition.groups:
            size = cluster_sizes[j]
            p_cond = table.at[j, group] / size if size else np.nan
            p_marg = float(marginal[group])
            undefined = not (p_marg > 0 and size > 0)
            value = np.nan if undefined else p_cond / p_marg - 1.0
            rows.append((names[j], group, p_cond, p_marg, value, undefined))
    frame = pd.DataFrame(rows, columns=[*Columns.DEVIATIONS, "undefined"])
    shares = pd.Series(
        cluster_sizes.to_numpy() / n if n else np.zeros(len(names)),
        index=list(names),
        name="p_cluster",
    )
    if frame["undefined"].any():
        logger.warning(
            "%d undefined %s deviations", int(frame["undefined"].sum()), partition.name
        )
    return DeviationReport(partition=partition.name, frame=frame, cluster_shares=shares)


def reports_frame(reports):
    """Stack several reports; group names of different partitions do not collide."""
    return pd.concat([r.to_frame() for r in reports], ignore_index=True)
