"""Graph core: construction invariants, adjacency, degree sums, batching."""

import numpy as np
import pytest

from envgnn.errors import ArgumentError, ShapeError
from envgnn.graphs import (
    ELEMENTS,
    MOLECULAR_FEATURE_DIM,
    AtomNode,
    BondEdge,
    GraphBatch,
    MolecularGraph,
    VALENCE_TABLE,
    batch_graphs,
    build_adjacency,
    graphs_equal,
    node_degree_sum,
)


def ethanol() -> MolecularGraph:
    # C-C-O with implicit hydrogens.
    return MolecularGraph.from_elements(["C", "C", "O"], [(0, 1), (1, 2)], label=0)


def acetic() -> MolecularGraph:
    # CC(=O)O
    return MolecularGraph.from_elements(["C", "C", "O", "O"], [(0, 1), (1, 2, 2), (1, 3)], label=1)


def test_bond_canonicalizes_and_validates():
    e = BondEdge(3, 1, 2)
    assert (e.u, e.v, e.order) == (1, 3, 2)
    with pytest.raises(ArgumentError):
        BondEdge(2, 2)
    with pytest.raises(ArgumentError):
        BondEdge(0, 1, 4)


def test_atom_capacity_must_match_table():
    with pytest.raises(ArgumentError):
        AtomNode("C", (1.0,), 3)
    with pytest.raises(ArgumentError):
        AtomNode("Xx", (1.0,), 1)
    with pytest.raises(ArgumentError):
        AtomNode("H", (1.0,), 1)


def test_duplicate_and_dangling_bonds_rejected():
    with pytest.raises(ArgumentError):
        MolecularGraph.from_elements(["C", "C"], [(0, 1), (1, 0)])
    with pytest.raises(ArgumentError):
        MolecularGraph.from_elements(["C", "C"], [(0, 2)])


def test_molecular_features_are_onehot_plus_degree():
    g = acetic()
    assert g.feature_matrix.shape == (4, MOLECULAR_FEATURE_DIM)
    c_idx = ELEMENTS.index("C")
    o_idx = ELEMENTS.index("O")
    assert g.feature_matrix[0, c_idx] == 1.0
    assert g.feature_matrix[2, o_idx] == 1.0
    # Central carbon: single + double + single bond = degree sum 4.
    assert g.feature_matrix[1, -1] == pytest.approx(4.0 / 6.0)
    assert g.feature_matrix[2, -1] == pytest.approx(2.0 / 6.0)


def test_adjacency_oracle():
    g = acetic()
    adj = build_adjacency(g)
    expect = np.zeros((4, 4))
    for u, v, o in [(0, 1, 1), (1, 2, 2), (1, 3, 1)]:
        expect[u, v] = expect[v, u] = o
    assert np.array_equal(adj, expect)
    assert np.array_equal(adj, adj.T)


def test_degree_sum_matches_adjacency_row():
    g = acetic()
    adj = build_adjacency(g)
    for i in range(g.n_nodes):
        assert node_degree_sum(g, i) == adj[i].sum()
    with pytest.raises(ArgumentError):
        node_degree_sum(g, 9)


def test_batch_offsets_and_packing():
    a, b = ethanol(), acetic()
    batch = batch_graphs([a, b])
    assert batch.n_graphs == 2
    assert batch.n_nodes == 7
    assert list(batch.node_offsets) == [0, 3, 7]
    assert batch.n_edges == a.n_edges + b.n_edges
    # Second graph's edges are shifted by the first graph's node count.
    assert set(zip(batch.edge_src.tolist(), batch.edge_dst.tolist())) == {
        (0, 1),
        (1, 2),
        (3, 4),
        (4, 5),
        (4, 6),
    }
    assert list(batch.node_graph_ids) == [0, 0, 0, 1, 1, 1, 1]
    assert np.array_equal(batch.features[:3], a.feature_matrix)
    assert np.array_equal(batch.features[3:], b.feature_matrix)
    assert list(batch.labels) == [0, 1]


def test_directed_edges_materialize_both_directions():
    batch = batch_graphs([ethanol()])
    src, dst = batch.directed_edges
    assert sorted(zip(src.tolist(), dst.tolist())) == [(0, 1), (1, 0), (1, 2), (2, 1)]


def test_unbatch_round_trip():
    graphs = [ethanol(), acetic(), MolecularGraph.from_elements(["N"], [], label=2)]
    rebuilt = batch_graphs(graphs).unbatch()
    assert len(rebuilt) == 3
    for orig, back in zip(graphs, rebuilt):
        assert graphs_equal(orig, back)


def test_batch_rejects_empty_and_mixed_dims():
    with pytest.raises(ArgumentError):
        batch_graphs([])
    synth = MolecularGraph.from_features([[1.0, 0.5]], [], label=0)
    with pytest.raises(ShapeError):
        batch_graphs([ethanol(), synth])


def test_unlabeled_batch_labels_raise():
    g = MolecularGraph.from_elements(["C"], [])
    with pytest.raises(ArgumentError):
        batch_graphs([g]).labels


def test_valence_table_values():
    assert VALENCE_TABLE == {
        "H": 1, "C": 4, "N": 3, "O": 2, "F": 1, "Cl": 1,
        "Br": 1, "I": 1, "S": 6, "P": 5, "B": 3,
    }
