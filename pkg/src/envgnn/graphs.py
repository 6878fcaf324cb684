"""Molecular graph core: atoms, bonds, graphs and packed batches.

Hydrogens are implicit everywhere; nodes are heavy atoms only. Graphs are
undirected simple graphs with integer bond orders and are immutable after
construction. Message passing materializes both directions of each stored
edge, which callers obtain from ``GraphBatch.directed_edges``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ArgumentError, ShapeError

# Maximum bond-order sum per element, implicit hydrogens filling the rest.
# No formal charges, isotopes or aromatic forms are modelled.
VALENCE_TABLE: dict[str, int] = {
    "H": 1,
    "C": 4,
    "N": 3,
    "O": 2,
    "F": 1,
    "Cl": 1,
    "Br": 1,
    "I": 1,
    "S": 6,
    "P": 5,
    "B": 3,
}

# Fixed one-hot order for heavy-atom features. Hydrogen is implicit and
# never appears as a node.
ELEMENTS: tuple[str, ...] = ("B", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I")

# Degree feature divisor: the largest heavy-atom valence in the table (S).
DEGREE_NORM = 6.0

MOLECULAR_FEATURE_DIM = len(ELEMENTS) + 1


@dataclass(frozen=True)
class AtomNode:
    """A heavy atom: element symbol, feature vector, valence capacity."""

    element: str
    features: tuple[float, ...]
    valence_capacity: int

    def __post_init__(self):
        if self.element not in VALENCE_TABLE:
            raise ArgumentError(f"unsupported element {self.element!r}")
        if self.element == "H":
            raise ArgumentError("hydrogens are implicit and cannot be nodes")
        if self.valence_capacity != VALENCE_TABLE[self.element]:
            raise ArgumentError(
                f"valence capacity {self.valence_capacity} does not match table "
                f"entry {VALENCE_TABLE[self.element]} for {self.element!r}"
            )


@dataclass(frozen=True)
class BondEdge:
    """An undirected bond, canonicalized to u < v. Order is 1, 2 or 3."""

    u: int
    v: int
    order: int = 1

    def __post_init__(self):
        if self.u == self.v:
            raise ArgumentError(f"self-loop bond at node {self.u}")
        if self.u > self.v:
            u, v = self.u, self.v
            object.__setattr__(self, "u", v)
            object.__setattr__(self, "v", u)
        if self.order not in (1, 2, 3):
            raise ArgumentError(f"bond order must be 1, 2 or 3, got {self.order}")


@dataclass(frozen=True)
class MolecularGraph:
    """Immutable labeled graph over AtomNodes.

    ``meta`` is a string-to-string map carrying provenance (generator mode,
    motif ids, source files); treat it as read-only.
    """

    nodes: tuple[AtomNode, ...]
    edges: tuple[BondEdge, ...]
    label: int | None = None
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.nodes)
        seen: set[tuple[int, int]] = set()
        dims = {len(node.features) for node in self.nodes}
        if len(dims) > 1:
            raise ShapeError("all node feature vectors must share one length")
        for e in self.edges:
            if not (0 <= e.u < n and 0 <= e.v < n):
                raise ArgumentError(f"bond ({e.u}, {e.v}) references a missing node")
            if (e.u, e.v) in seen:
                raise ArgumentError(f"duplicate bond ({e.u}, {e.v})")
            seen.add((e.u, e.v))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def feature_matrix(self) -> np.ndarray:
        """[n_nodes, feature_dim] float64, read-only."""
        if not self.nodes:
            return np.zeros((0, 0))
        out = np.array([node.features for node in self.nodes], dtype=np.float64)
        out.flags.writeable = False
        return out

    @cached_property
    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(src, dst, order) int64/int64/float64 arrays, canonical u < v."""
        src = np.array([e.u for e in self.edges], dtype=np.int64)
        dst = np.array([e.v for e in self.edges], dtype=np.int64)
        order = np.array([e.order for e in self.edges], dtype=np.float64)
        for a in (src, dst, order):
            a.flags.writeable = False
        return src, dst, order

    @classmethod
    def from_elements(
        cls,
        elements: Sequence[str],
        bonds: Iterable[tuple[int, int] | tuple[int, int, int]],
        label: int | None = None,
        meta: Mapping[str, str] | None = None,
    ) -> "MolecularGraph":
        """Build a molecular graph, deriving features from elements and degrees.

        Features are one-hot element plus bond-order degree sum / 6.
        """
        edges = tuple(BondEdge(*b) if len(b) == 3 else BondEdge(b[0], b[1], 1) for b in bonds)
        degree = [0] * len(elements)
        for e in edges:
            if not (0 <= e.u < len(elements) and 0 <= e.v < len(elements)):
                raise ArgumentError(f"bond ({e.u}, {e.v}) references a missing node")
            degree[e.u] += e.order
            degree[e.v] += e.order
        nodes = []
        for sym, deg in zip(elements, degree):
            if sym not in ELEMENTS:
                raise ArgumentError(f"unsupported heavy element {sym!r}")
            onehot = [0.0] * len(ELEMENTS)
            onehot[ELEMENTS.index(sym)] = 1.0
            nodes.append(AtomNode(sym, tuple(onehot + [deg / DEGREE_NORM]), VALENCE_TABLE[sym]))
        return cls(tuple(nodes), edges, label, dict(meta or {}))

    @classmethod
    def from_features(
        cls,
        features: Sequence[Sequence[float]],
        bonds: Iterable[tuple[int, int] | tuple[int, int, int]],
        label: int | None = None,
        meta: Mapping[str, str] | None = None,
    ) -> "MolecularGraph":
        """Build a synthetic (non-chemical) graph with explicit feature rows.

        Nodes are recorded as carbons so downstream code has a capacity to
        consult, but no valence semantics are implied.
        """
        edges = tuple(BondEdge(*b) if len(b) == 3 else BondEdge(b[0], b[1], 1) for b in bonds)
        nodes = tuple(
            AtomNode("C", tuple(float(x) for x in row), VALENCE_TABLE["C"]) for row in features
        )
        return cls(nodes, edges, label, dict(meta or {}))


def graphs_equal(a: MolecularGraph, b: MolecularGraph) -> bool:
    """Structural equality: nodes, edges, label and meta all match."""
    return (
        a.nodes == b.nodes
        and sorted(a.edges, key=lambda e: (e.u, e.v)) == sorted(b.edges, key=lambda e: (e.u, e.v))
        and a.label == b.label
        and dict(a.meta) == dict(b.meta)
    )


def build_adjacency(graph: MolecularGraph) -> np.ndarray:
    """Dense symmetric [n, n] adjacency with bond orders as entries."""
    n = graph.n_nodes
    adj = np.zeros((n, n))
    for e in graph.edges:
        adj[e.u, e.v] = e.order
        adj[e.v, e.u] = e.order
    return adj


def node_degree_sum(graph: MolecularGraph, i: int) -> int:
    """Sum of bond orders incident to node ``i``."""
    if not (0 <= i < graph.n_nodes):
        raise ArgumentError(f"node index {i} out of range for graph of {graph.n_nodes}")
    return sum(e.order for e in graph.edges if i in (e.u, e.v))


@dataclass(frozen=True)
class GraphBatch:
    """A packed disjoint union of graphs with global node indices.

    ``node_offsets`` has length n_graphs + 1; graph g owns global nodes
    [node_offsets[g], node_offsets[g+1]). Edge arrays keep the canonical
    u < v orientation, one entry per stored (undirected) bond.
    """

    graphs: tuple[MolecularGraph, ...]
    node_offsets: np.ndarray
    features: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_order: np.ndarray
    node_graph_ids: np.ndarray

    @property
    def n_graphs(self) -> int:
        return len(self.graphs)

    @property
    def n_nodes(self) -> int:
        return int(self.node_offsets[-1])

    @property
    def n_edges(self) -> int:
        return int(self.edge_src.shape[0])

    @cached_property
    def directed_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Both directions of every bond: (src, dst), each length 2*n_edges."""
        src = np.concatenate([self.edge_src, self.edge_dst])
        dst = np.concatenate([self.edge_dst, self.edge_src])
        for a in (src, dst):
            a.flags.writeable = False
        return src, dst

    @cached_property
    def labels(self) -> np.ndarray:
        """int64 label vector; raises if any member graph is unlabeled."""
        out = []
        for g, graph in enumerate(self.graphs):
            if graph.label is None:
                raise ArgumentError(f"graph {g} in batch has no label")
            out.append(graph.label)
        return np.array(out, dtype=np.int64)

    def unbatch(self) -> list[MolecularGraph]:
        """Reconstruct member graphs from the packed arrays."""
        out = []
        for g, graph in enumerate(self.graphs):
            lo, hi = int(self.node_offsets[g]), int(self.node_offsets[g + 1])
            mask = (self.edge_src >= lo) & (self.edge_src < hi)
            bonds = [
                (int(u - lo), int(v - lo), int(o))
                for u, v, o in zip(
                    self.edge_src[mask], self.edge_dst[mask], self.edge_order[mask]
                )
            ]
            out.append(MolecularGraph(graph.nodes, tuple(BondEdge(*b) for b in bonds), graph.label, dict(graph.meta)))
        return out


def batch_graphs(graphs: Sequence[MolecularGraph]) -> GraphBatch:
    """Pack graphs into one disjoint union with prefix node offsets."""
    if not graphs:
        raise ArgumentError("cannot batch an empty graph sequence")
    dims = {g.feature_matrix.shape[1] for g in graphs if g.n_nodes}
    if len(dims) > 1:
        raise ShapeError(f"inconsistent feature dims across batch: {sorted(dims)}")
    offsets = np.zeros(len(graphs) + 1, dtype=np.int64)
    for i, g in enumerate(graphs):
        offsets[i + 1] = offsets[i] + g.n_nodes
    feat_dim = dims.pop() if dims else 0
    features = np.zeros((int(offsets[-1]), feat_dim))
    src_parts, dst_parts, order_parts, gid_parts = [], [], [], []
    for i, g in enumerate(graphs):
        lo = int(offsets[i])
        if g.n_nodes:
            features[lo : lo + g.n_nodes] = g.feature_matrix
        src, dst, order = g.edge_arrays
        src_parts.append(src + lo)
        dst_parts.append(dst + lo)
        order_parts.append(order)
        gid_parts.append(np.full(g.n_nodes, i, dtype=np.int64))
    batch = GraphBatch(
        graphs=tuple(graphs),
        node_offsets=offsets,
        features=features,
        edge_src=np.concatenate(src_parts) if src_parts else np.zeros(0, dtype=np.int64),
        edge_dst=np.concatenate(dst_parts) if dst_parts else np.zeros(0, dtype=np.int64),
        edge_order=np.concatenate(order_parts) if order_parts else np.zeros(0),
        node_graph_ids=np.concatenate(gid_parts) if gid_parts else np.zeros(0, dtype=np.int64),
    )
    for a in (batch.node_offsets, batch.features, batch.edge_src, batch.edge_dst, batch.edge_order, batch.node_graph_ids):
        a.flags.writeable = False
    return batch
