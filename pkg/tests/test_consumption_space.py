from amenity_space.errors import InvalidInputError
from amenity_space.services.complexity import ProximityMatrix
from amenity_space.services.consumption_space import (
    NodeStat, backbone_graph, block_bridges, consumption_space_export, edge_list, pair_table
)
import networkx as nx
import numpy as np
import pytest


def _two_blocks() -> ProximityMatrix:
    phi = np.array([
        [1.0, 0.9, 0.3, 0.0, 0.0],
        [0.9, 1.0, 0.5, 0.0, 0.0],
        [0.3, 0.5, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.2],
        [0.0, 0.0, 0.0, 0.2, 1.0],
    ])
    return ProximityMatrix(values=phi, labels=("A01", "A02", "A03", "A04", "A05"))


def test_edge_list_keeps_every_pair_sorted_by_phi():
    edges = edge_list(_two_blocks())
    assert len(edges) == 10
    assert edges["phi"].tolist() == [0.9, 0.5, 0.3, 0.2] + [0.0] * 6
    assert (edges["amenity_p"].iloc[0], edges["amenity_p_prime"].iloc[0]) == ("A01", "A02")
    # ties broken by labels
    assert (edges["amenity_p"].iloc[4], edges["amenity_p_prime"].iloc[4]) == ("A01", "A04")
    assert (edges["amenity_p"].iloc[-1], edges["amenity_p_prime"].iloc[-1]) == ("A03", "A05")


def test_pair_table_top_rows_follow_the_edge_list():
    edges = edge_list(_two_blocks())
    table = pair_table(_two_blocks(), k=4)
    assert table["top_phi"].tolist() == edges["phi"].head(4).tolist()
    assert table["top_amenity_p"].tolist() == edges["amenity_p"].head(4).tolist()


def test_backbone_ignores_zero_phi_pairs_even_at_threshold_zero():
    graph = backbone_graph(_two_blocks(), threshold=0.0)
    assert graph.number_of_edges() == 4
    assert not graph.has_edge("A01", "A04")


def test_backbone_is_spanning_forest_plus_strong_edges():
    graph = backbone_graph(_two_blocks(), threshold=0.4)
    tree = {(u, v) for u, v, d in graph.edges(data=True) if d["in_tree"] == 1}
    extra = {(u, v) for u, v, d in graph.edges(data=True) if d["in_tree"] == 0}
    assert len(tree) == 3
    assert extra == set()
    assert not graph.has_edge("A01", "A03")
    assert nx.number_connected_components(graph) == 2

    dense = backbone_graph(_two_blocks(), threshold=0.25)
    assert dense.has_edge("A01", "A03")
    assert dense.edges["A01", "A03"]["in_tree"] == 0


def test_backbone_carries_node_attributes():
    stats = {"A01": NodeStat(total_count=12.0, category_large="L1")}
    graph = backbone_graph(_two_blocks(), stats)
    assert graph.nodes["A01"]["total_count"] == 12.0
    assert graph.nodes["A01"]["category_large"] == "L1"
    assert graph.nodes["A05"]["total_count"] == 0.0


def test_threshold_outside_unit_interval_is_rejected():
    with pytest.raises(InvalidInputError):
        backbone_graph(_two_blocks(), threshold=1.5)


def test_pair_table_lists_top_and_bottom_pairs():
    table = pair_table(_two_blocks(), k=2)
    assert table["top_phi"].tolist() == [0.9, 0.5]
    assert table["bottom_phi"].tolist() == [0.0, 0.0]
    assert table["rank"].tolist() == [1, 2]
    with pytest.raises(InvalidInputError):
        pair_table(_two_blocks(), k=0)


def test_no_bridges_between_disconnected_blocks():
    space = consumption_space_export(_two_blocks(), threshold=0.1, k=3)
    blocks = {"A01": 0, "A02": 0, "A03": 0, "A04": 1, "A05": 1}
    assert block_bridges(space.backbone, blocks) == ()
    assert len(space.pair_table) == 3
