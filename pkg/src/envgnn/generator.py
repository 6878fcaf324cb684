"""Knowledge-guided environment growth over a fragment library.

A library separates fragments into invariant cores (role I, labeled: the
functional groups that decide the property) and environment fragments
(role N, unlabeled scaffolds). Growth attaches environment fragments to a
labeled base graph with single bonds at valence-feasible sites, so every
generated graph is chemically valid and keeps its base's label. The random
mode attaches at uniformly random nodes with no valence checks; it exists
as a control and is expected to produce violations.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .chem import free_valence, parse_smiles_subset, valences_valid
from .errors import ArgumentError, ChemistryError, DataFormatError, EnvgnnError
from .graphs import MolecularGraph
from .logging_util import get_logger

log = get_logger(__name__)

ROLE_INVARIANT = "I"
ROLE_ENVIRONMENT = "N"


@dataclass(frozen=True)
class Fragment:
    """A library entry: parsed graph plus its attachment sites."""

    role: str
    smiles: str
    graph: MolecularGraph
    attach_indices: tuple[int, ...]
    label: int | None


@dataclass(frozen=True)
class FragmentLibrary:
    invariants: tuple[Fragment, ...]
    environments: tuple[Fragment, ...]

    def __post_init__(self):
        for frag in self.invariants + self.environments:
            if frag.role not in (ROLE_INVARIANT, ROLE_ENVIRONMENT):
                raise ArgumentError(f"unknown fragment role {frag.role!r}")
            if not frag.attach_indices:
                raise ArgumentError(f"fragment {frag.smiles!r} has no attachment sites")
            for idx in frag.attach_indices:
                if not 0 <= idx < frag.graph.n_nodes:
                    raise ArgumentError(
                        f"fragment {frag.smiles!r} attachment index {idx} out of range"
                    )
                if free_valence(frag.graph, idx) < 1:
                    raise ArgumentError(
                        f"fragment {frag.smiles!r} attachment node {idx} has no spare valence"
                    )
        for frag in self.invariants:
            if frag.label is None:
                raise ArgumentError(f"invariant fragment {frag.smiles!r} needs a label")
        for frag in self.environments:
            if frag.label is not None:
                raise ArgumentError(f"environment fragment {frag.smiles!r} must be unlabeled")


def parse_library_lines(lines: Iterable[str], source: str = "<library>") -> FragmentLibrary:
    """Parse tab-separated library rows: role, smiles, attach indices, label."""
    invariants: list[Fragment] = []
    environments: list[Fragment] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataFormatError(f"{source}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        role, smiles, attach_field, label_field = (p.strip() for p in parts)
        try:
            graph = parse_smiles_subset(smiles)
            attach = tuple(int(tok) for tok in attach_field.split(",") if tok.strip())
            label = None if label_field == "-" else int(label_field)
            frag = Fragment(role, smiles, graph, attach, label)
        except (EnvgnnError, ValueError) as exc:
            raise DataFormatError(f"{source}:{lineno}: {exc}") from exc
        if role == ROLE_INVARIANT:
            invariants.append(frag)
        elif role == ROLE_ENVIRONMENT:
            environments.append(frag)
        else:
            raise DataFormatError(f"{source}:{lineno}: role must be I or N, got {role!r}")
    return FragmentLibrary(tuple(invariants), tuple(environments))


def load_library(path: str) -> FragmentLibrary:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_library_lines(fh, source=path)


def starter_library() -> FragmentLibrary:
    """The packaged starter set: five labeled cores, seven environments."""
    text = resources.files("envgnn.data").joinpath("fragments.tsv").read_text(encoding="utf-8")
    return parse_library_lines(text.splitlines(), source="fragments.tsv")


def rank_environments(library: FragmentLibrary) -> tuple[Fragment, ...]:
    """Environment fragments ordered by atom count; ties keep library order."""
    return tuple(sorted(library.environments, key=lambda f: f.graph.n_nodes))


def attach(
    base: MolecularGraph,
    fragment: Fragment,
    base_node: int,
    frag_node: int,
    check_valence: bool = True,
) -> MolecularGraph:
    """Disjoint union of base and fragment joined by one new single bond.

    The result keeps the base's label; features are recomputed so degree
    entries stay fresh. With ``check_valence`` off, over-valent results are
    produced silently (the random-growth control path).
    """
    if not 0 <= base_node < base.n_nodes:
        raise ArgumentError(f"base node {base_node} out of range")
    if not 0 <= frag_node < fragment.graph.n_nodes:
        raise ArgumentError(f"fragment node {frag_node} out of range")
    if check_valence:
        if free_valence(base, base_node) < 1:
            raise ChemistryError(
                f"base node {base_node} ({base.nodes[base_node].element}) has no spare valence",
                node=base_node,
            )
        if free_valence(fragment.graph, frag_node) < 1:
            raise ChemistryError(
                f"fragment node {frag_node} has no spare valence", node=frag_node
            )
    offset = base.n_nodes
    elements = [n.element for n in base.nodes] + [n.element for n in fragment.graph.nodes]
    bonds = [(e.u, e.v, e.order) for e in base.edges]
    bonds += [(e.u + offset, e.v + offset, e.order) for e in fragment.graph.edges]
    bonds.append((base_node, frag_node + offset, 1))
    return MolecularGraph.from_elements(elements, bonds, label=base.label, meta=dict(base.meta))


def grow(
    base: MolecularGraph,
    library: FragmentLibrary,
    k: int,
    rng: np.random.Generator,
) -> list[MolecularGraph]:
    """Generate up to ``k`` graphs, step t attaching the t-th ranked
    environment fragment (wrapping) to the base at a uniformly random
    valence-feasible site pair. Steps with no feasible pair are skipped
    with a warning.
    """
    if k <= 0:
        raise ArgumentError("growth count k must be positive")
    ranked = rank_environments(library)
    if not ranked:
        raise ArgumentError("library has no environment fragments")
    out: list[MolecularGraph] = []
    for t in range(1, k + 1):
        frag = ranked[(t - 1) % len(ranked)]
        base_sites = [i for i in range(base.n_nodes) if free_valence(base, i) >= 1]
        frag_sites = [i for i in frag.attach_indices if free_valence(frag.graph, i) >= 1]
        pairs = [(b, f) for b in base_sites for f in frag_sites]
        if not pairs:
            log.warning(
                "growth step %d skipped: no valence-feasible attachment between "
                "base (%d atoms) and fragment %s",
                t,
                base.n_nodes,
                frag.smiles,
            )
            continue
        b, f = pairs[int(rng.integers(len(pairs)))]
        grown = attach(base, frag, b, f, check_valence=True)
        meta = dict(grown.meta)
        meta.update({"generated": "knowledge", "growth_step": str(t), "fragment": frag.smiles})
        out.append(MolecularGraph(grown.nodes, grown.edges, grown.label, meta))
    return out


def _random_attach(
    base: MolecularGraph, library: FragmentLibrary, rng: np.random.Generator
) -> MolecularGraph:
    frag = library.environments[int(rng.integers(len(library.environments)))]
    b = int(rng.integers(base.n_nodes))
    f = int(rng.integers(frag.graph.n_nodes))
    grown = attach(base, frag, b, f, check_valence=False)
    meta = dict(grown.meta)
    meta.update({"generated": "random", "fragment": frag.smiles})
    return MolecularGraph(grown.nodes, grown.edges, grown.label, meta)


def generate_augmented_dataset(
    dataset: Sequence[MolecularGraph],
    library: FragmentLibrary,
    per_graph: int,
    mode: str,
    rng: np.random.Generator,
) -> list[MolecularGraph]:
    """Originals plus up to ``per_graph`` grown graphs per input.

    mode='knowledge' uses ranked valence-checked growth; mode='random'
    attaches uniform fragments at uniform nodes with no checks;
    mode='off' returns the input unchanged.
    """
    if mode == "off":
        return list(dataset)
    if mode not in ("knowledge", "random"):
        raise ArgumentError(f"unknown generator mode {mode!r}")
    if per_graph < 0:
        raise ArgumentError("per_graph must be nonnegative")
    out = list(dataset)
    for graph in dataset:
        if mode == "knowledge":
            out.extend(grow(graph, library, per_graph, rng) if per_graph else [])
        else:
            out.extend(_random_attach(graph, library, rng) for _ in range(per_graph))
    return out


def knowledge_validity_rate(graphs: Sequence[MolecularGraph]) -> float:
    """Fraction of graphs passing full valence validation."""
    if not graphs:
        raise ArgumentError("no graphs to validate")
    return sum(valences_valid(g) for g in graphs) / len(graphs)
