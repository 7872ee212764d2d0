"""
Tests for interference-graph construction and edge pruning.
"""

import numpy as np
import pytest

from engine.errors import ConfigError
from engine.graph import (
    admitted_edges,
    batch_graphs,
    build_graph,
    edge_feature_dim,
    vertex_feature_dim,
)
from engine.netsim import sample_network
from engine.stochgeo import ThresholdSpec
from conftest import make_instance


def line_instance(t=4, spacing=10.0):
    """Pairs on a line, receivers 1 m above their transmitters."""
    tx = np.column_stack([np.arange(t) * spacing, np.zeros(t)])
    rx = tx + np.array([0.0, 1.0])
    rng = np.random.default_rng(0)
    channel = rng.standard_normal((t, t)) + 1j * rng.standard_normal((t, t))
    return make_instance(channel, tx=tx, rx=rx)


class TestPruningRules:
    """Which interferers each receiver keeps."""

    def test_distance_keeps_adjacent_pairs_only(self):
        g = build_graph(line_instance(), ThresholdSpec.for_distance(15))
        assert g.edge_set() == {(1, 0), (0, 1), (2, 1), (1, 2), (3, 2), (2, 3)}

    def test_distance_bound_holds(self, small_scenario):
        net = sample_network(small_scenario, 0)
        g = build_graph(net, ThresholdSpec.for_distance(12))
        assert np.all(net.distances[g.sources, g.targets] <= 12)
        admitted = {(u, v) for u in range(10) for v in range(10) if u != v and net.distances[u, v] <= 12}
        assert g.edge_set() == admitted

    def test_neighbour_tie_goes_to_lower_index(self):
        g = build_graph(line_instance(), ThresholdSpec.for_neighbours(1))
        assert g.in_neighbours(0) == [1]
        assert g.in_neighbours(1) == [0]
        assert g.in_neighbours(2) == [1]
        assert g.in_neighbours(3) == [2]

    def test_neighbour_edge_count(self, small_scenario):
        net = sample_network(small_scenario, 1)
        for n in (1, 2, 5):
            g = build_graph(net, ThresholdSpec.for_neighbours(n))
            assert g.num_edges == n * net.num_pairs
            assert np.all(g.in_degree() == n)

    def test_neighbour_keeps_closest(self, small_scenario):
        net = sample_network(small_scenario, 2)
        g = build_graph(net, ThresholdSpec.for_neighbours(3))
        for v in range(net.num_pairs):
            others = [u for u in range(net.num_pairs) if u != v]
            closest = sorted(others, key=lambda u: net.distances[u, v])[:3]
            assert sorted(g.in_neighbours(v)) == sorted(closest)

    def test_neighbour_count_clamped(self, tiny_scenario):
        net = sample_network(tiny_scenario, 0)
        g = build_graph(net, ThresholdSpec.for_neighbours(50))
        assert g.num_edges == 5 * 4

    def test_all_neighbours_equals_complete(self, small_scenario):
        net = sample_network(small_scenario, 3)
        a = build_graph(net, ThresholdSpec.for_neighbours(net.num_pairs - 1))
        b = build_graph(net, ThresholdSpec.complete())
        assert np.array_equal(a.edge_index, b.edge_index)
        assert np.array_equal(a.edge_features, b.edge_features)

    def test_larger_threshold_adds_edges(self, small_scenario):
        net = sample_network(small_scenario, 4)
        previous = set()
        for t in (2, 5, 10, 20, 60):
            edges = build_graph(net, ThresholdSpec.for_distance(t)).edge_set()
            assert previous <= edges
            previous = edges
        previous = set()
        for n in range(1, 10):
            edges = build_graph(net, ThresholdSpec.for_neighbours(n)).edge_set()
            assert previous <= edges
            previous = edges

    def test_no_self_loops(self, small_scenario):
        net = sample_network(small_scenario, 5)
        for spec in (ThresholdSpec.complete(), ThresholdSpec.for_distance(100), ThresholdSpec.for_neighbours(3)):
            assert not np.any(admitted_edges(net.distances, spec).diagonal())

    def test_tiny_distance_gives_empty_graph(self):
        g = build_graph(line_instance(), ThresholdSpec.for_distance(1))
        assert g.num_edges == 0
        assert g.edge_features.shape == (0, edge_feature_dim("reim"))


class TestFeatures:
    """Vertex and edge feature layout."""

    def test_vertex_features_independent_of_spec(self, small_scenario):
        net = sample_network(small_scenario, 6)
        full = build_graph(net, ThresholdSpec.complete())
        for spec in (ThresholdSpec.for_distance(3), ThresholdSpec.for_neighbours(1)):
            assert np.array_equal(build_graph(net, spec).vertex_features, full.vertex_features)

    def test_reim_layout(self):
        net = line_instance()
        g = build_graph(net, ThresholdSpec.complete(), "reim")
        assert g.vertex_features.shape == (4, vertex_feature_dim("reim"))
        assert np.allclose(g.vertex_features[:, 0], np.diag(net.channel).real)
        assert np.allclose(g.vertex_features[:, 1], np.diag(net.channel).imag)
        assert np.allclose(g.vertex_features[:, 2], 1.0)
        assert np.allclose(g.vertex_features[:, 3], 1.0)
        u, v = g.sources, g.targets
        assert np.allclose(g.edge_features[:, 0], net.channel[u, v].real)
        assert np.allclose(g.edge_features[:, 1], net.channel[u, v].imag)
        assert np.allclose(g.edge_features[:, 2], net.distances[u, v])

    def test_gain_layout(self):
        net = line_instance()
        g = build_graph(net, ThresholdSpec.complete(), "gain")
        assert g.vertex_features.shape == (4, vertex_feature_dim("gain"))
        assert g.edge_features.shape == (12, edge_feature_dim("gain"))
        assert np.allclose(g.vertex_features[:, 0], net.direct_gains)
        assert np.allclose(g.edge_features[:, 0], net.gains[g.sources, g.targets])

    def test_canonical_edge_order(self, small_scenario):
        g = build_graph(sample_network(small_scenario, 7), ThresholdSpec.for_neighbours(4))
        keys = list(zip(g.targets.tolist(), g.sources.tolist()))
        assert keys == sorted(keys)

    def test_unknown_encoding(self):
        with pytest.raises(ConfigError):
            build_graph(line_instance(), ThresholdSpec.complete(), "polar")


class TestBatching:
    """Disjoint union of graphs."""

    def test_offsets_and_tags(self, tiny_scenario):
        nets = [sample_network(tiny_scenario, i) for i in range(3)]
        graphs = [build_graph(n, ThresholdSpec.for_neighbours(2)) for n in nets]
        b = batch_graphs(graphs)
        assert b.num_vertices == 15
        assert b.num_edges == sum(g.num_edges for g in graphs)
        assert b.num_instances == 3
        assert np.array_equal(b.instance_of, np.repeat([0, 1, 2], 5))
        assert np.array_equal(b.edge_index[:, graphs[0].num_edges:2 * graphs[0].num_edges],
                              graphs[1].edge_index + 5)
        # no edge crosses instances
        assert np.all(b.instance_of[b.sources] == b.instance_of[b.targets])

    def test_empty_batch(self):
        with pytest.raises(ConfigError):
            batch_graphs([])

    def test_mixed_power_budgets(self):
        channel = np.eye(3, dtype=complex)
        a = build_graph(make_instance(channel, p_max=1.0), ThresholdSpec.complete())
        b = build_graph(make_instance(channel, p_max=2.0), ThresholdSpec.complete())
        with pytest.raises(ConfigError):
            batch_graphs([a, b])
        assert batch_graphs([b, b]).p_max == 2.0

    def test_mixed_encodings(self):
        net = line_instance()
        with pytest.raises(ConfigError):
            batch_graphs([build_graph(net, ThresholdSpec.complete(), "reim"),
                          build_graph(net, ThresholdSpec.complete(), "gain")])
