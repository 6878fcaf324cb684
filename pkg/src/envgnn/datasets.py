"""Dataset construction: synthetic motif benchmarks, TU-format molecular
ingestion, out-of-distribution splits and line-delimited persistence.

The synthetic generator composes one base scaffold (tree, ladder or wheel)
with one of three 5-node motifs (cycle, house, crane) joined by a single
bridging edge. The motif alone determines the label; the base type agrees
with the motif class with probability ``b``, planting a spurious shortcut
that a balanced set (b = 1/3) removes. Node features are a constant 1 plus
the degree scaled by 1/10.

TU-format directories follow the public layout: ``<name>_A.txt`` holds
1-based directed edge pairs, ``<name>_graph_indicator.txt`` maps nodes to
graphs, ``<name>_graph_labels.txt`` one label per graph, with optional
``<name>_node_labels.txt`` and ``<name>_edge_labels.txt``. Node labels are
one-hot encoded as features and interpreted as elements for chemistry.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ArgumentError, DataFormatError, ShapeError
from .graphs import VALENCE_TABLE, AtomNode, BondEdge, MolecularGraph

MOTIF_NAMES = ("cycle", "house", "crane")
BASE_NAMES = ("tree", "ladder", "wheel")

# Each motif spans exactly 5 nodes; edges are canonical u < v local pairs.
MOTIF_EDGES: dict[str, tuple[tuple[int, int], ...]] = {
    "cycle": ((0, 1), (1, 2), (2, 3), (3, 4), (0, 4)),
    "house": ((0, 1), (1, 2), (2, 3), (0, 3), (2, 4), (3, 4)),
    "crane": ((0, 1), (1, 2), (0, 2), (2, 3), (3, 4)),
}
MOTIF_SIZE = 5

SYNTHETIC_FEATURE_DIM = 2
_SYNTHETIC_DEGREE_NORM = 10.0

# Node-label-to-element convention of the MUTAG release; unknown labels
# fall back to carbon so valence bookkeeping stays defined.
TU_ELEMENTS = ("C", "N", "O", "F", "I", "Cl", "Br")


@dataclass(frozen=True)
class MotifSpec:
    """Knobs of the synthetic generator.

    ``b`` is the spurious-correlation degree: the probability that a
    graph's base type index equals its motif class index. b = 1/3 makes
    base and motif independent.
    """

    b: float
    base_size_min: int = 8
    base_size_max: int = 15

    def __post_init__(self):
        if not (1.0 / 3.0 - 1e-9 <= self.b <= 1.0 + 1e-9):
            raise ArgumentError(f"spurious degree b must lie in [1/3, 1], got {self.b}")
        if self.base_size_min < 4:
            raise ArgumentError("base_size_min must be at least 4")
        if self.base_size_max < self.base_size_min:
            raise ArgumentError("base_size_max must be >= base_size_min")


def _tree_edges(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Random recursive tree: node i attaches to a uniform earlier node."""
    return [(int(rng.integers(i)), i) for i in range(1, n)]


def _ladder_edges(n: int) -> tuple[int, list[tuple[int, int]]]:
    """2 x k ladder; an odd request rounds down to the nearest even size."""
    k = n // 2
    edges = [(2 * i, 2 * i + 1) for i in range(k)]
    edges += [(2 * i, 2 * i + 2) for i in range(k - 1)]
    edges += [(2 * i + 1, 2 * i + 3) for i in range(k - 1)]
    return 2 * k, edges


def _wheel_edges(n: int) -> list[tuple[int, int]]:
    """Hub node 0 joined to every rim node; rim nodes 1..n-1 form a cycle."""
    rim = n - 1
    edges = [(0, i) for i in range(1, n)]
    edges += [(i, i + 1) for i in range(1, rim)]
    edges.append((1, rim))
    return edges


def _base_graph(kind: str, size: int, rng: np.random.Generator) -> tuple[int, list[tuple[int, int]]]:
    if kind == "tree":
        return size, _tree_edges(size, rng)
    if kind == "ladder":
        return _ladder_edges(size)
    if kind == "wheel":
        return size, _wheel_edges(size)
    raise ArgumentError(f"unknown base kind {kind!r}")


def generate_spurious_motif(
    n: int, spec: MotifSpec, rng: np.random.Generator
) -> list[MolecularGraph]:
    """``n`` labeled graphs, each one base plus one motif and one bridge.

    The motif class is sampled uniformly and equals the label. With
    probability ``spec.b`` the base type index matches the motif class,
    otherwise it is uniform over the two remaining base types. Meta
    records base_id, motif_id and motif_start (the first motif node).
    """
    if n < 1:
        raise ArgumentError("need at least one graph")
    out: list[MolecularGraph] = []
    for _ in range(n):
        motif_class = int(rng.integers(len(MOTIF_NAMES)))
        if rng.random() < spec.b:
            base_class = motif_class
        else:
            others = [c for c in range(len(BASE_NAMES)) if c != motif_class]
            base_class = others[int(rng.integers(2))]
        size = int(rng.integers(spec.base_size_min, spec.base_size_max + 1))
        n_base, edges = _base_graph(BASE_NAMES[base_class], size, rng)
        motif_name = MOTIF_NAMES[motif_class]
        edges = list(edges)
        edges += [(u + n_base, v + n_base) for u, v in MOTIF_EDGES[motif_name]]
        edges.append((int(rng.integers(n_base)), n_base + int(rng.integers(MOTIF_SIZE))))
        n_nodes = n_base + MOTIF_SIZE
        degree = [0] * n_nodes
        for u, v in edges:
            degree[u] += 1
            degree[v] += 1
        features = [[1.0, deg / _SYNTHETIC_DEGREE_NORM] for deg in degree]
        out.append(
            MolecularGraph.from_features(
                features,
                edges,
                label=motif_class,
                meta={
                    "base_id": BASE_NAMES[base_class],
                    "motif_id": motif_name,
                    "motif_start": str(n_base),
                },
            )
        )
    return out


def balanced_test_set(
    n: int, rng: np.random.Generator, base_size_min: int = 8, base_size_max: int = 15
) -> list[MolecularGraph]:
    """Generated graphs with b = 1/3: base type independent of the label."""
    spec = MotifSpec(b=1.0 / 3.0, base_size_min=base_size_min, base_size_max=base_size_max)
    return generate_spurious_motif(n, spec, rng)


def motif_edge_set(graph: MolecularGraph) -> frozenset[tuple[int, int]]:
    """Canonical (u, v) pairs of the planted motif, read from meta.

    The single bridge edge has exactly one endpoint below motif_start, so
    membership is simply both endpoints at or beyond it.
    """
    if "motif_start" not in graph.meta:
        raise ArgumentError("graph carries no motif_start meta entry")
    start = int(graph.meta["motif_start"])
    return frozenset((e.u, e.v) for e in graph.edges if e.u >= start and e.v >= start)


def spurious_motif_valid(graph: MolecularGraph) -> bool:
    """True when the planted motif is intact and its class equals the label."""
    name = graph.meta.get("motif_id")
    if name not in MOTIF_EDGES or graph.label != MOTIF_NAMES.index(name):
        return False
    start = int(graph.meta["motif_start"])
    expected = frozenset((u + start, v + start) for u, v in MOTIF_EDGES[name])
    return motif_edge_set(graph) == expected


def motif_recall(graph: MolecularGraph, edge_scores: np.ndarray) -> float:
    """Fraction of planted motif bonds among the top-``m`` bonds ranked by
    descending score, where ``m`` is the motif bond count.

    ``edge_scores`` aligns with ``graph.edges``; stable ordering breaks ties.
    """
    motif = motif_edge_set(graph)
    scores = np.asarray(edge_scores, dtype=np.float64)
    if scores.shape != (len(graph.edges),):
        raise ShapeError(
            f"expected {len(graph.edges)} edge scores, got shape {scores.shape}"
        )
    m = len(motif)
    if m == 0:
        raise ArgumentError("graph has an empty motif edge set")
    order = np.argsort(-scores, kind="stable")[:m]
    hits = sum(
        1 for i in order if (graph.edges[i].u, graph.edges[i].v) in motif
    )
    return hits / m


def random_ranking_recall(graph: MolecularGraph) -> float:
    """Expected motif recall of a uniformly random bond ranking.

    Picking m of E bonds at random overlaps the m motif bonds in m^2 / E
    expected positions, so the expected recall is m / E.
    """
    m = len(motif_edge_set(graph))
    if m == 0:
        raise ArgumentError("graph has an empty motif edge set")
    return m / len(graph.edges)


# ------------------------------------------------------------- TU format


def _tu_path(directory: str, name: str, suffix: str) -> str:
    return os.path.join(directory, f"{name}_{suffix}.txt")


def _read_int_lines(path: str) -> list[int]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                out.append(int(line))
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: expected an integer, got {line!r}") from exc
    return out


def _detect_tu_name(directory: str) -> str:
    candidates = sorted(
        f[: -len("_A.txt")] for f in os.listdir(directory) if f.endswith("_A.txt")
    )
    if not candidates:
        raise FileNotFoundError(f"no <name>_A.txt edge file in {directory!r}")
    if len(candidates) > 1:
        raise DataFormatError(f"multiple TU datasets in {directory!r}: {candidates}")
    return candidates[0]


def load_tu_dataset(directory: str) -> list[MolecularGraph]:
    """Read one TU-format dataset from ``directory``.

    Graph labels are remapped to 0..C-1 in ascending value order. Node
    labels, when present, become one-hot feature vectors and elements via
    the MUTAG convention; without them every node is a carbon with a
    constant-plus-degree feature. Duplicate directed edge lines collapse
    to one undirected bond, the first line fixing the bond order.
    """
    name = _detect_tu_name(directory)
    a_path = _tu_path(directory, name, "A")
    indicator = _read_int_lines(_tu_path(directory, name, "graph_indicator"))
    raw_labels = _read_int_lines(_tu_path(directory, name, "graph_labels"))
    if not indicator:
        raise DataFormatError(f"{directory!r}: empty graph indicator")
    n_graphs = max(indicator)
    if sorted(set(indicator)) != list(range(1, n_graphs + 1)):
        raise DataFormatError(f"{directory!r}: graph indicator ids are not contiguous from 1")
    if len(raw_labels) != n_graphs:
        raise DataFormatError(
            f"{directory!r}: {len(raw_labels)} graph labels for {n_graphs} graphs"
        )

    node_labels: list[int] | None = None
    nl_path = _tu_path(directory, name, "node_labels")
    if os.path.exists(nl_path):
        node_labels = _read_int_lines(nl_path)
        if len(node_labels) != len(indicator):
            raise DataFormatError(
                f"{nl_path}: {len(node_labels)} node labels for {len(indicator)} nodes"
            )

    edge_labels: list[int] | None = None
    el_path = _tu_path(directory, name, "edge_labels")
    if os.path.exists(el_path):
        edge_labels = _read_int_lines(el_path)

    # Global node id -> (graph index, local index), assigned in file order.
    graph_of = [g - 1 for g in indicator]
    local_of: list[int] = []
    counts = [0] * n_graphs
    for g in graph_of:
        local_of.append(counts[g])
        counts[g] += 1

    bonds: list[dict[tuple[int, int], int]] = [dict() for _ in range(n_graphs)]
    n_edge_lines = 0
    with open(a_path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise DataFormatError(f"{a_path}:{lineno}: expected 'u, v', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise DataFormatError(f"{a_path}:{lineno}: non-integer endpoint in {line!r}") from exc
            if not (1 <= u <= len(indicator) and 1 <= v <= len(indicator)):
                raise DataFormatError(f"{a_path}:{lineno}: node index out of range in {line!r}")
            if u == v:
                raise DataFormatError(f"{a_path}:{lineno}: self-loop on node {u}")
            if graph_of[u - 1] != graph_of[v - 1]:
                raise DataFormatError(f"{a_path}:{lineno}: edge ({u}, {v}) crosses graphs")
            order = 1
            if edge_labels is not None:
                if n_edge_lines >= len(edge_labels):
                    raise DataFormatError(f"{el_path}: fewer edge labels than edge lines")
                value = edge_labels[n_edge_lines]
                order = value if value in (1, 2, 3) else 1
            n_edge_lines += 1
            g = graph_of[u - 1]
            key = (min(local_of[u - 1], local_of[v - 1]), max(local_of[u - 1], local_of[v - 1]))
            bonds[g].setdefault(key, order)

    label_map = {value: i for i, value in enumerate(sorted(set(raw_labels)))}

    feature_dim = 0
    label_index: dict[int, int] = {}
    if node_labels is not None:
        label_index = {value: i for i, value in enumerate(sorted(set(node_labels)))}
        feature_dim = len(label_index)

    graphs: list[MolecularGraph] = []
    node_cursor = 0
    for g in range(n_graphs):
        n_nodes = counts[g]
        edge_list = sorted(bonds[g].items())
        if node_labels is not None:
            nodes = []
            for i in range(n_nodes):
                raw_value = node_labels[node_cursor + i]
                element = TU_ELEMENTS[raw_value] if 0 <= raw_value < len(TU_ELEMENTS) else "C"
                onehot = [0.0] * feature_dim
                onehot[label_index[raw_value]] = 1.0
                nodes.append(AtomNode(element, tuple(onehot), VALENCE_TABLE[element]))
        else:
            degree = [0] * n_nodes
            for (u, v), _ in edge_list:
                degree[u] += 1
                degree[v] += 1
            nodes = [
                AtomNode("C", (1.0, degree[i] / _SYNTHETIC_DEGREE_NORM), VALENCE_TABLE["C"])
                for i in range(n_nodes)
            ]
        edges = tuple(BondEdge(u, v, order) for (u, v), order in edge_list)
        graphs.append(
            MolecularGraph(
                tuple(nodes),
                edges,
                label=label_map[raw_labels[g]],
                meta={"dataset": name, "tu_index": str(g + 1)},
            )
        )
        node_cursor += n_nodes
    return graphs


def save_tu_dataset(graphs: Sequence[MolecularGraph], directory: str, name: str) -> None:
    """Write ``graphs`` as a TU-format directory.

    Every bond is emitted as both directed lines with its order repeated in
    the edge-label file; elements map to MUTAG node-label codes (unsupported
    elements fall back to carbon's code).
    """
    if not graphs:
        raise ArgumentError("cannot write an empty dataset")
    for i, g in enumerate(graphs):
        if g.label is None:
            raise ArgumentError(f"graph {i} has no label; TU format requires one")
    os.makedirs(directory, exist_ok=True)
    element_code = {sym: i for i, sym in enumerate(TU_ELEMENTS)}
    a_lines: list[str] = []
    indicator_lines: list[str] = []
    node_label_lines: list[str] = []
    edge_label_lines: list[str] = []
    offset = 0
    for gid, g in enumerate(graphs, start=1):
        for node in g.nodes:
            indicator_lines.append(str(gid))
            node_label_lines.append(str(element_code.get(node.element, element_code["C"])))
        for e in g.edges:
            u, v = e.u + offset + 1, e.v + offset + 1
            a_lines.append(f"{u}, {v}")
            a_lines.append(f"{v}, {u}")
            edge_label_lines.extend([str(e.order), str(e.order)])
        offset += g.n_nodes
    files = {
        "A": a_lines,
        "graph_indicator": indicator_lines,
        "graph_labels": [str(g.label) for g in graphs],
        "node_labels": node_label_lines,
        "edge_labels": edge_label_lines,
    }
    for suffix, lines in files.items():
        with open(_tu_path(directory, name, suffix), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


# ------------------------------------------------------------------ splits

SPLIT_CRITERIA = ("size", "motif-balance", "random")


@dataclass(frozen=True)
class SplitSpec:
    """Split criterion plus train/val/test fractions summing to 1."""

    criterion: str = "random"
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1

    def __post_init__(self):
        if self.criterion not in SPLIT_CRITERIA:
            raise ArgumentError(
                f"split criterion must be one of {SPLIT_CRITERIA}, got {self.criterion!r}"
            )
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise ArgumentError(f"fractions must be nonnegative and sum to 1, got {fracs}")


def _split_counts(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_train = int(n * spec.train_frac)
    n_val = int(n * spec.val_frac)
    return n_train, n_val, n - n_train - n_val


def ood_split(
    dataset: Sequence[MolecularGraph], spec: SplitSpec, rng: np.random.Generator
) -> tuple[list[MolecularGraph], list[MolecularGraph], list[MolecularGraph]]:
    """Partition ``dataset`` into disjoint, exhaustive train/val/test lists.

    criterion='size' stably sorts by node count and sends the smallest
    graphs to train and the largest to test (a size distribution shift);
    'random' permutes uniformly; 'motif-balance' stratifies by label so
    every part keeps the label mix.
    """
    if not dataset:
        raise ArgumentError("cannot split an empty dataset")
    n = len(dataset)
    if spec.criterion == "size":
        order = sorted(range(n), key=lambda i: dataset[i].n_nodes)
    elif spec.criterion == "random":
        order = [int(i) for i in rng.permutation(n)]
    else:
        if any(g.label is None for g in dataset):
            raise ArgumentError("motif-balance split needs labeled graphs")
        train_idx: list[int] = []
        val_idx: list[int] = []
        test_idx: list[int] = []
        by_label: dict[int, list[int]] = {}
        for i, g in enumerate(dataset):
            by_label.setdefault(int(g.label), []).append(i)
        for label in sorted(by_label):
            members = by_label[label]
            perm = [members[int(i)] for i in rng.permutation(len(members))]
            k_train, k_val, _ = _split_counts(len(perm), spec)
            train_idx += perm[:k_train]
            val_idx += perm[k_train : k_train + k_val]
            test_idx += perm[k_train + k_val :]
        parts = tuple(sorted(part) for part in (train_idx, val_idx, test_idx))
        if any(not part for part in parts):
            raise ArgumentError("degenerate split: one part is empty")
        return tuple([dataset[i] for i in part] for part in parts)  # type: ignore[return-value]
    n_train, n_val, _ = _split_counts(n, spec)
    train = [dataset[i] for i in order[:n_train]]
    val = [dataset[i] for i in order[n_train : n_train + n_val]]
    test = [dataset[i] for i in order[n_train + n_val :]]
    if not (train and val and test):
        raise ArgumentError("degenerate split: one part is empty")
    return train, val, test


# ------------------------------------------------------------ records file


def graph_to_record(graph: MolecularGraph) -> dict:
    """The JSON-serializable form used by the records file."""
    return {
        "elements": [node.element for node in graph.nodes],
        "features": [list(node.features) for node in graph.nodes],
        "edges": [[e.u, e.v, e.order] for e in graph.edges],
        "label": graph.label,
        "meta": dict(graph.meta),
    }


def record_to_graph(record: Mapping) -> MolecularGraph:
    missing = {"elements", "features", "edges", "label", "meta"} - set(record)
    if missing:
        raise DataFormatError(f"record is missing fields {sorted(missing)}")
    elements = record["elements"]
    features = record["features"]
    if len(elements) != len(features):
        raise DataFormatError(
            f"record has {len(elements)} elements but {len(features)} feature rows"
        )
    nodes = tuple(
        AtomNode(el, tuple(float(x) for x in row), VALENCE_TABLE.get(el, 0))
        for el, row in zip(elements, features)
    )
    edges = tuple(BondEdge(int(u), int(v), int(o)) for u, v, o in record["edges"])
    label = record["label"]
    meta = {str(k): str(v) for k, v in record["meta"].items()}
    return MolecularGraph(nodes, edges, None if label is None else int(label), meta)


def save_records(graphs: Sequence[MolecularGraph], path: str) -> None:
    """One graph per line as compact JSON with sorted keys (byte stable)."""
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_record(g), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def load_records(path: str) -> list[MolecularGraph]:
    graphs: list[MolecularGraph] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                graphs.append(record_to_graph(record))
            except (DataFormatError, ArgumentError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad record: {exc}") from exc
    return graphs
