"""Scatter kernels underlying message aggregation and graph readout.

These are the hot inner loops of the backbone: every GNN layer gathers node
rows per directed edge and scatter-adds them back onto destination nodes, and
every readout scatter-adds node rows onto graph slots. numpy's ``np.add.at``
handles duplicate indices correctly but is slow, so when numba is available
the kernels are compiled with ``@njit``. Set ``ENVGNN_NO_NUMBA=1`` to force
the pure-numpy path (used by the benchmark and as a safety hatch).

Both implementations are exported so ``benchmarks/bench_kernels.py`` can time
them against each other in one process.
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_ENV_FLAG = "ENVGNN_NO_NUMBA"


def _numba_disabled() -> bool:
    return os.environ.get(NUMBA_ENV_FLAG, "").strip() not in ("", "0")


HAS_NUMBA = False
if not _numba_disabled():
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover - depends on the environment
        HAS_NUMBA = False


def scatter_add_rows_numpy(values: np.ndarray, index: np.ndarray, size: int) -> np.ndarray:
    """Sum rows of ``values`` into ``out[index[i]]``; duplicates accumulate."""
    out = np.zeros((size, values.shape[1]), dtype=values.dtype)
    np.add.at(out, index, values)
    return out


if HAS_NUMBA:

    @njit(cache=True)
    def _scatter_add_rows_jit(values, index, out):  # pragma: no cover - compiled
        for i in range(index.shape[0]):
            row = index[i]
            for j in range(values.shape[1]):
                out[row, j] += values[i, j]

    def scatter_add_rows_numba(values: np.ndarray, index: np.ndarray, size: int) -> np.ndarray:
        out = np.zeros((size, values.shape[1]), dtype=values.dtype)
        _scatter_add_rows_jit(values, index, out)
        return out

else:
    scatter_add_rows_numba = None


def scatter_add_rows(values: np.ndarray, index: np.ndarray, size: int) -> np.ndarray:
    """Dispatch to the numba kernel when available, else the numpy fallback.

    ``values`` is [m, d] float64, ``index`` is [m] int64 with entries in
    [0, size). Serial accumulation keeps results bitwise deterministic.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    index = np.ascontiguousarray(index, dtype=np.int64)
    if values.ndim != 2 or index.ndim != 1 or values.shape[0] != index.shape[0]:
        raise ValueError("scatter_add_rows expects values [m, d] and index [m]")
    if index.size and (index.min() < 0 or index.max() >= size):
        raise IndexError("scatter index out of range")
    if HAS_NUMBA:
        return scatter_add_rows_numba(values, index, size)
    return scatter_add_rows_numpy(values, index, size)
