"""
Origin-Destination Flows and Distance-Interval Ranking

Handles:
- Per-period-group O-D networks (node size = local purchases, edges = remote purchases)
- Relative amenity advantage per distance interval and its top-N lists
"""
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple
from amenity_space.config import PeriodGroups
from amenity_space.errors import InvalidInputError, MissingKeyError
from amenity_space.services.complexity import CountMatrix, rca
from amenity_space.services.panel_builder import INTERVALS, interval_of
import networkx as nx
import numpy as np
import pandas as pd
import logging

logger = logging.getLogger(__name__)

PERIOD_GROUPS = ["pre_covid", "covid", "recovery"]


@dataclass
class FlowNetwork:
    period_group: str
    nodes: pd.DataFrame
    edges: pd.DataFrame

    @property
    def total(self) -> float:
        return float(self.nodes["size"].sum() + self.edges["weight"].sum())

    def to_graph(self) -> nx.DiGraph:
        graph = nx.DiGraph(period_group=self.period_group)
        for row in self.nodes.itertuples(index=False):
            graph.add_node(int(row.cluster_id), size=float(row.size), type=str(row.type))
        for row in self.edges.itertuples(index=False):
            graph.add_edge(int(row.source), int(row.target), weight=float(row.weight),
                           target_type=str(row.target_type))
        return graph


def attach_distance(records: pd.DataFrame, distances: pd.DataFrame) -> pd.DataFrame:
    """Resident records with the distance between their residence and destination clusters."""
    resident = records[records["res_cluster"].notna()]
    resident = resident.assign(res_cluster=resident["res_cluster"].astype(np.int64))
    out = resident.merge(distances, on=["dest_cluster", "res_cluster"], how="left", validate="many_to_one")
    if out["distance_km"].isna().any():
        row = out[out["distance_km"].isna()].iloc[0]
        raise MissingKeyError(f"({row.dest_cluster}, {row.res_cluster})", "cluster pair")
    return out


def build_flow_network(
    records: pd.DataFrame,
    distances: pd.DataFrame,
    groups: PeriodGroups,
    period_group: str,
    types: Optional[Mapping[int, str]] = None,
    distance_split_km: float = 1.0
) -> FlowNetwork:
    """
    O-D network of one period group.

    Node size of cluster i sums purchases at i by residents of clusters
    within distance_split_km (i itself included). Edge j -> i sums
    purchases at i by residents of j farther than distance_split_km.
    Every cluster of the distance table is a node.
    """
    if period_group not in PERIOD_GROUPS:
        raise InvalidInputError(f"Unknown period group '{period_group}'")
    if not distance_split_km > 0:
        raise InvalidInputError(f"distance_split_km must be > 0, got {distance_split_km}")

    types = types or {}
    flows = attach_distance(records, distances)
    years = flows["period"].astype(str).str.slice(0, 4).astype(int)
    flows = flows[years.isin(groups.years(period_group)).to_numpy()]

    local = flows["distance_km"] <= distance_split_km
    sizes = flows[local].groupby("dest_cluster")["count"].sum()
    clusters = sorted(int(c) for c in distances["dest_cluster"].unique())
    nodes = pd.DataFrame({
        "cluster_id": clusters,
        "size": [float(sizes.get(c, 0)) for c in clusters],
        "type": [types.get(c, "") for c in clusters],
    })

    remote = (
        flows[~local].groupby(["res_cluster", "dest_cluster"], sort=True)["count"].sum()
        .rename("weight").reset_index()
        .rename(columns={"res_cluster": "source", "dest_cluster": "target"})
    )
    remote = remote[remote["weight"] > 0].reset_index(drop=True)
    remote["weight"] = remote["weight"].astype(float)
    remote["target_type"] = [types.get(int(t), "") for t in remote["target"]]

    logger.info(
        f"Flow network {period_group}: {len(nodes)} nodes, {len(remote)} remote edges, "
        f"{nodes['size'].sum():.0f} local purchases"
    )
    return FlowNetwork(period_group=period_group, nodes=nodes, edges=remote)


def build_flow_networks(
    records: pd.DataFrame,
    distances: pd.DataFrame,
    groups: PeriodGroups,
    types: Optional[Mapping[int, str]] = None,
    distance_split_km: float = 1.0
) -> Dict[str, FlowNetwork]:
    return {
        group: build_flow_network(records, distances, groups, group, types, distance_split_km)
        for group in PERIOD_GROUPS
    }


def distance_rank(
    records: pd.DataFrame,
    distances: pd.DataFrame,
    top_n: int = 10
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    X_dp = (x_dp / sum_p x_dp) / (sum_d x_dp / sum x) over distance intervals d.

    Returns:
        (matrix with one row per interval and one column per amenity,
         ranking table interval, rank, amenity, X_value: top_n per interval
         with a positive total, descending, ties by amenity code)
    """
    if top_n < 1:
        raise InvalidInputError(f"top_n must be >= 1, got {top_n}")
    flows = attach_distance(records, distances)
    if flows.empty or flows["count"].sum() <= 0:
        raise InvalidInputError("No positive purchase counts to rank")

    flows = flows.assign(interval=interval_of(flows["distance_km"].to_numpy()))
    amenities = sorted(flows["amenity_small"].astype(str).unique())
    counts = CountMatrix.from_frame(flows, "interval", "amenity_small", "count", rows=INTERVALS, cols=amenities)
    spec = rca(counts)
    matrix = pd.DataFrame(spec.rca_values, columns=amenities)
    matrix.insert(0, "interval", INTERVALS)

    totals = counts.values.sum(axis=1)
    parts = []
    for d, label in enumerate(INTERVALS):
        if totals[d] <= 0:
            continue
        ranked = pd.DataFrame({"amenity": amenities, "X_value": spec.rca_values[d]})
        ranked = ranked.sort_values(["X_value", "amenity"], ascending=[False, True], kind="mergesort").head(top_n)
        ranked.insert(0, "rank", np.arange(1, len(ranked) + 1))
        ranked.insert(0, "interval", label)
        parts.append(ranked)
    ranking = pd.concat(parts, ignore_index=True)
    return matrix, ranking


def interval_shares(records: pd.DataFrame, distances: pd.DataFrame) -> pd.Series:
    """Share of all purchases falling in each distance interval."""
    flows = attach_distance(records, distances)
    labels = interval_of(flows["distance_km"].to_numpy())
    totals = flows["count"].groupby(labels).sum().reindex(INTERVALS, fill_value=0)
    return totals / totals.sum()
