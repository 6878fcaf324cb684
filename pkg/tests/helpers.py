"""Shared test oracles, kept deliberately independent of the package's
numerics: brute-force loops and central finite differences only."""

from __future__ import annotations

import numpy as np


def matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def fd_gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def fd_check(f, x: np.ndarray, analytic: np.ndarray, step: float = 1e-5, tol: float = 1e-4) -> float:
    """Largest relative error between analytic and FD gradients.

    Relative error uses max(1, |fd|, |analytic|) in the denominator so
    near-zero gradients are compared absolutely.
    """
    fd = fd_gradient(f, np.array(x, dtype=np.float64), step)
    denom = np.maximum(1.0, np.maximum(np.abs(fd), np.abs(analytic)))
    err = float(np.max(np.abs(fd - analytic) / denom)) if fd.size else 0.0
    assert err <= tol, f"finite-difference mismatch: {err:.3e} > {tol}"
    return err


def _alkane_backbones(count: int) -> list[str]:
    """Deterministic list of alkane skeleton strings, linear then branched
    then ringed, each ending in an atom with free valence for a suffix."""
    out: list[str] = []
    k = 1
    while len(out) < count:
        out.append("C" * k)
        if k >= 3:
            out.append("C" * (k - 3) + "C(C)C")
        if k >= 4:
            out.append("C" * (k - 4) + "CC(C)(C)")
        if k >= 5:
            out.append("C1CCCC1" + "C" * (k - 5))
        k += 1
    return out[:count]


def make_molecular_tu_fixture(directory: str, n: int = 188) -> list:
    """Write a TU-format molecular classification dataset to ``directory``.

    Class 1 molecules carry a carboxyl-like carbon (two oxygen neighbors,
    one double-bonded) or a chlorine; class 0 molecules carry at most one
    heteroatom per carbon. The split is balanced and every molecule passes
    valence checks. Returns the graphs as written.
    """
    from envgnn.chem import parse_smiles_subset
    from envgnn.datasets import save_tu_dataset

    half = n // 2
    suffixes1 = ("C(=O)O", "Cl", "C(=O)OC")
    suffixes0 = ("O", "N", "OC")
    backbones = _alkane_backbones((half + len(suffixes1) - 1) // len(suffixes1))
    graphs = []
    for i in range(half):
        smiles = backbones[i // len(suffixes1)] + suffixes1[i % len(suffixes1)]
        graphs.append(parse_smiles_subset(smiles, label=1))
    for i in range(n - half):
        smiles = backbones[i // len(suffixes0)] + suffixes0[i % len(suffixes0)]
        graphs.append(parse_smiles_subset(smiles, label=0))
    save_tu_dataset(graphs, directory, "FIXTURE")
    return graphs


def auc_oracle(scores: np.ndarray, labels: np.ndarray) -> float:
    """Pairwise-counting ROC-AUC with ties scoring one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    assert pos.size and neg.size
    total = 0.0
    for s_pos in pos:
        for s_neg in neg:
            if s_pos > s_neg:
                total += 1.0
            elif s_pos == s_neg:
                total += 0.5
    return total / (pos.size * neg.size)
