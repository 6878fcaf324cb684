"""SMILES-subset parsing and valence accounting.

The accepted grammar is a small organic subset: bare element symbols
C N O S P F B Cl Br I, bond symbols ``=`` and ``#`` (single bonds are
implicit), single-digit ring closures, and parenthesized branches. No
aromatics, charges, isotopes or stereo descriptors. Hydrogens are implicit:
an atom's free valence is its table capacity minus the sum of explicit bond
orders. Parse errors carry the byte offset into the input.
"""

from __future__ import annotations

import numpy as np

from .errors import ChemistryError, SmilesParseError
from .graphs import MolecularGraph, node_degree_sum

# Two-character symbols must be tried before their one-character prefixes.
_SYMBOLS = ("Cl", "Br", "C", "N", "O", "S", "P", "F", "B", "I")
_BOND_ORDERS = {"=": 2, "#": 3}


def parse_smiles_subset(text: str, label: int | None = None) -> MolecularGraph:
    """Parse a SMILES-subset string into a valence-checked molecular graph."""
    if not text:
        raise SmilesParseError("empty input", 0)
    elements: list[str] = []
    bonds: list[tuple[int, int, int]] = []
    bond_set: set[tuple[int, int]] = set()
    prev: int | None = None
    pending_order: int | None = None
    pending_offset = 0
    stack: list[int | None] = []
    rings: dict[str, tuple[int, int]] = {}

    def add_bond(u: int, v: int, order: int, offset: int) -> None:
        if u == v:
            raise SmilesParseError("ring closure bonds an atom to itself", offset)
        key = (min(u, v), max(u, v))
        if key in bond_set:
            raise SmilesParseError(f"duplicate bond between atoms {key[0]} and {key[1]}", offset)
        bond_set.add(key)
        bonds.append((u, v, order))

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        sym = next((s for s in _SYMBOLS if text.startswith(s, i)), None)
        if sym is not None:
            idx = len(elements)
            elements.append(sym)
            if prev is not None:
                add_bond(prev, idx, pending_order or 1, i)
            elif pending_order is not None:
                raise SmilesParseError("bond symbol without a preceding atom", pending_offset)
            pending_order = None
            prev = idx
            i += len(sym)
            continue
        if ch in _BOND_ORDERS:
            if pending_order is not None:
                raise SmilesParseError("two bond symbols in a row", i)
            pending_order = _BOND_ORDERS[ch]
            pending_offset = i
            i += 1
            continue
        if ch.isdigit():
            if prev is None or pending_order is not None:
                raise SmilesParseError("ring digit must directly follow an atom", i)
            if ch in rings:
                open_atom, _ = rings.pop(ch)
                add_bond(open_atom, prev, 1, i)
            else:
                rings[ch] = (prev, i)
            i += 1
            continue
        if ch == "(":
            if prev is None:
                raise SmilesParseError("branch before any atom", i)
            if pending_order is not None:
                raise SmilesParseError("bond symbol before a branch", pending_offset)
            stack.append(prev)
            i += 1
            continue
        if ch == ")":
            if not stack:
                raise SmilesParseError("unmatched closing parenthesis", i)
            if pending_order is not None:
                raise SmilesParseError("dangling bond symbol at branch close", pending_offset)
            prev = stack.pop()
            i += 1
            continue
        raise SmilesParseError(f"unexpected character {ch!r}", i)

    if pending_order is not None:
        raise SmilesParseError("dangling bond symbol at end of input", pending_offset)
    if stack:
        raise SmilesParseError("unclosed branch", n)
    if rings:
        digit, (_, offset) = next(iter(rings.items()))
        raise SmilesParseError(f"unmatched ring digit {digit}", offset)

    graph = MolecularGraph.from_elements(elements, bonds, label=label)
    validate_valences(graph)
    return graph


def free_valence(graph: MolecularGraph, i: int) -> int:
    """Capacity minus explicit bond-order sum for node ``i``."""
    return graph.nodes[i].valence_capacity - node_degree_sum(graph, i)


def valence_check(graph: MolecularGraph, i: int, added_order: int) -> bool:
    """Would adding a bond of ``added_order`` at node ``i`` stay within valence?"""
    return added_order <= free_valence(graph, i)


def validate_valences(graph: MolecularGraph) -> None:
    """Raise ChemistryError naming the first node over its capacity."""
    for i, node in enumerate(graph.nodes):
        total = node_degree_sum(graph, i)
        if total > node.valence_capacity:
            raise ChemistryError(
                f"node {i} ({node.element}) carries bond-order sum {total} "
                f"over capacity {node.valence_capacity}",
                node=i,
            )


def valences_valid(graph: MolecularGraph) -> bool:
    try:
        validate_valences(graph)
    except ChemistryError:
        return False
    return True


def implicit_hydrogens(graph: MolecularGraph) -> np.ndarray:
    """Per-node implicit hydrogen counts (free valences)."""
    return np.array([free_valence(graph, i) for i in range(graph.n_nodes)], dtype=np.int64)
