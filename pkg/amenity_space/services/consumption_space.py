"""
Consumption Space Export

Handles:
- Full weighted amenity edge list (phi descending)
- Backbone graph: maximum spanning forest plus every edge with phi >= threshold
- Top-k / bottom-k amenity pair table
"""
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple
from amenity_space.errors import InvalidInputError
from amenity_space.services.complexity import ProximityMatrix
import networkx as nx
import numpy as np
import pandas as pd
import logging

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NodeStat:
    total_count: float = 0.0
    category_large: str = ""


@dataclass
class ConsumptionSpace:
    edges: pd.DataFrame
    backbone: nx.Graph
    pair_table: pd.DataFrame


def edge_list(prox: ProximityMatrix) -> pd.DataFrame:
    """Every amenity pair, zero-phi pairs included, sorted by phi descending then labels."""
    return prox.pairs().reset_index(drop=True)


def backbone_graph(
    prox: ProximityMatrix,
    node_stats: Optional[Mapping[str, NodeStat]] = None,
    threshold: float = 0.4
) -> nx.Graph:
    """
    Maximum spanning forest of the phi graph plus all edges with phi >= threshold.

    Zero-phi pairs are not edges, so disconnected blocks stay disconnected.
    """
    if not 0 <= threshold <= 1:
        raise InvalidInputError(f"threshold must lie in [0, 1], got {threshold}")

    node_stats = node_stats or {}
    full = nx.Graph()
    for label in prox.labels:
        stat = node_stats.get(label, NodeStat())
        full.add_node(label, total_count=float(stat.total_count), category_large=stat.category_large)
    edges = edge_list(prox)
    for row in edges[edges["phi"] > 0].itertuples(index=False):
        full.add_edge(row.amenity_p, row.amenity_p_prime, weight=float(row.phi))

    backbone = nx.Graph()
    backbone.add_nodes_from(full.nodes(data=True))
    tree = nx.maximum_spanning_tree(full, weight="weight", algorithm="kruskal")
    for u, v, data in tree.edges(data=True):
        backbone.add_edge(u, v, weight=data["weight"], in_tree=1)
    for u, v, data in full.edges(data=True):
        if data["weight"] >= threshold and not backbone.has_edge(u, v):
            backbone.add_edge(u, v, weight=data["weight"], in_tree=0)

    logger.info(
        f"Consumption space backbone: {backbone.number_of_nodes()} amenities, "
        f"{tree.number_of_edges()} tree edges, {backbone.number_of_edges()} edges total"
    )
    return backbone


def pair_table(prox: ProximityMatrix, k: int = 10) -> pd.DataFrame:
    """
    Top-k and bottom-k amenity pairs side by side.

    Bottom pairs are sorted by phi ascending then labels.
    """
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    pairs = prox.pairs()
    top = pairs.head(k).reset_index(drop=True)
    bottom = pairs.sort_values(["phi", "amenity_p", "amenity_p_prime"], kind="mergesort").head(k)
    bottom = bottom.reset_index(drop=True)
    n = max(len(top), len(bottom))
    return pd.DataFrame({
        "rank": np.arange(1, n + 1),
        "top_amenity_p": top["amenity_p"].reindex(range(n)),
        "top_amenity_p_prime": top["amenity_p_prime"].reindex(range(n)),
        "top_phi": top["phi"].reindex(range(n)),
        "bottom_amenity_p": bottom["amenity_p"].reindex(range(n)),
        "bottom_amenity_p_prime": bottom["amenity_p_prime"].reindex(range(n)),
        "bottom_phi": bottom["phi"].reindex(range(n)),
    })


def node_stats_from(
    records: pd.DataFrame,
    categories: Mapping[str, str]
) -> Dict[str, NodeStat]:
    """Total purchase count per amenity over the given records, with its large category."""
    totals = records.groupby("amenity_small")["count"].sum()
    return {
        str(amenity): NodeStat(total_count=float(total), category_large=categories.get(str(amenity), ""))
        for amenity, total in totals.items()
    }


def consumption_space_export(
    prox: ProximityMatrix,
    node_stats: Optional[Mapping[str, NodeStat]] = None,
    threshold: float = 0.4,
    k: int = 10
) -> ConsumptionSpace:
    return ConsumptionSpace(
        edges=edge_list(prox),
        backbone=backbone_graph(prox, node_stats, threshold),
        pair_table=pair_table(prox, k)
    )


def block_bridges(graph: nx.Graph, blocks: Mapping[str, int]) -> Tuple[Tuple[str, str], ...]:
    """Edges whose endpoints sit in different blocks."""
    return tuple(sorted((u, v) for u, v in graph.edges() if blocks.get(u) != blocks.get(v)))
