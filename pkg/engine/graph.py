"""
PruneGNN — Interference Graph
Turns a NetworkInstance into a directed interference graph and prunes its
edges with a distance or neighbour threshold.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from config.settings import GNN_CONFIG
from engine.errors import ConfigError
from engine.netsim import NetworkInstance
from engine.stochgeo import ThresholdKind, ThresholdSpec

ENCODINGS = ("reim", "gain")


def vertex_feature_dim(encoding: str) -> int:
    return 4 if _check_encoding(encoding) == "reim" else 3


def edge_feature_dim(encoding: str) -> int:
    return 3 if _check_encoding(encoding) == "reim" else 2


def _check_encoding(encoding: str) -> str:
    if encoding not in ENCODINGS:
        raise ConfigError(f"unknown channel encoding '{encoding}' (expected one of {ENCODINGS})")
    return encoding


@dataclass(eq=False)
class InterferenceGraph:
    """
    Vertex v is pair v. Edge u → v carries interferer u's channel and distance
    into receiver D(v). edge_index[0] is the source, edge_index[1] the target;
    edges are sorted by target, then source.
    """

    vertex_features: np.ndarray   # (V, fv)
    edge_index: np.ndarray        # (2, E) int
    edge_features: np.ndarray     # (E, fe)
    num_vertices: int
    p_max: float
    spec: ThresholdSpec
    encoding: str = "reim"
    instance_of: Optional[np.ndarray] = None   # (V,) instance id per vertex; set on batches
    num_instances: int = 1

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[1]

    @property
    def sources(self) -> np.ndarray:
        return self.edge_index[0]

    @property
    def targets(self) -> np.ndarray:
        return self.edge_index[1]

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.targets, minlength=self.num_vertices)

    def in_neighbours(self, v: int) -> list:
        return self.sources[self.targets == v].tolist()

    def edge_set(self) -> set:
        return set(zip(self.sources.tolist(), self.targets.tolist()))


def admitted_edges(distances: np.ndarray, spec: ThresholdSpec) -> np.ndarray:
    """
    Boolean mask A[u][v]: interferer u admitted at receiver D(v).
    distances[u][v] is d_{u,D(v)}; the diagonal is never admitted.
    """
    t = distances.shape[0]
    off_diag = ~np.eye(t, dtype=bool)
    if spec.kind == ThresholdKind.COMPLETE:
        return off_diag
    if spec.kind == ThresholdKind.DISTANCE:
        return (distances <= spec.distance) & off_diag

    n = min(spec.neighbour_count, t - 1)
    masked = distances.astype(float, copy=True)
    np.fill_diagonal(masked, np.inf)
    # stable sort down each column keeps the lower index on ties
    order = np.argsort(masked, axis=0, kind="stable")[:n]
    mask = np.zeros((t, t), dtype=bool)
    mask[order, np.arange(t)[None, :]] = True
    return mask


def _split(h: np.ndarray, encoding: str) -> list:
    if encoding == "reim":
        return [h.real, h.imag]
    return [h.real ** 2 + h.imag ** 2]


def build_graph(net: NetworkInstance, spec: ThresholdSpec, encoding: str = GNN_CONFIG["channel_encoding"]) -> InterferenceGraph:
    """Graph of `net` pruned by `spec`. Vertex features are the same for every spec."""
    _check_encoding(encoding)
    d0 = net.reference_distance
    direct_h = np.diag(net.channel)
    direct_d = np.diag(net.distances)
    vertex_features = np.column_stack(_split(direct_h, encoding) + [net.weights, direct_d / d0])

    mask = admitted_edges(net.distances, spec)
    # transpose so the nonzero scan runs target-major
    tgt, src = np.nonzero(mask.T)
    h = net.channel[src, tgt]
    edge_features = np.column_stack(_split(h, encoding) + [net.distances[src, tgt] / d0])
    if edge_features.size == 0:
        edge_features = np.zeros((0, edge_feature_dim(encoding)))

    return InterferenceGraph(
        vertex_features=vertex_features,
        edge_index=np.vstack([src, tgt]).astype(np.int64),
        edge_features=edge_features,
        num_vertices=net.num_pairs,
        p_max=net.p_max,
        spec=spec,
        encoding=encoding,
        instance_of=np.zeros(net.num_pairs, dtype=np.int64),
    )


def batch_graphs(graphs: list) -> InterferenceGraph:
    """Disjoint union; vertex ids are offset and tagged with their instance index."""
    if not graphs:
        raise ConfigError("cannot batch an empty list of graphs")
    encodings = {g.encoding for g in graphs}
    if len(encodings) != 1:
        raise ConfigError(f"mixed channel encodings in one batch: {sorted(encodings)}")
    p_max = {g.p_max for g in graphs}
    if len(p_max) != 1:
        raise ConfigError(f"mixed power budgets in one batch: {sorted(p_max)}")

    offsets = np.cumsum([0] + [g.num_vertices for g in graphs[:-1]])
    edge_index = np.hstack([g.edge_index + off for g, off in zip(graphs, offsets)])
    instance_of = np.concatenate([np.full(g.num_vertices, i, dtype=np.int64) for i, g in enumerate(graphs)])
    return InterferenceGraph(
        vertex_features=np.vstack([g.vertex_features for g in graphs]),
        edge_index=edge_index.astype(np.int64),
        edge_features=np.vstack([g.edge_features for g in graphs]),
        num_vertices=int(sum(g.num_vertices for g in graphs)),
        p_max=graphs[0].p_max,
        spec=graphs[0].spec,
        encoding=graphs[0].encoding,
        instance_of=instance_of,
        num_instances=len(graphs),
    )
