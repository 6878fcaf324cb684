"""Message-passing encoders over packed graph batches.

Two backbones share one interface. GIN layers compute
``MLP((1 + eps) * h_v + sum_u w_uv * h_u)`` with a two-linear-layer MLP;
GCN layers aggregate with symmetric degree normalization over the weighted
adjacency plus unit self loops. Optional per-edge weights in [0, 1] scale
messages before aggregation, which is how masked adjacencies are realized;
gradients flow through the weights. A ReLU sits between stacked layers but
not after the last one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, ShapeError
from .graphs import GraphBatch

BACKBONES = ("gin", "gcn")
READOUTS = ("mean", "sum")


@dataclass(frozen=True)
class GnnConfig:
    kind: str = "gin"
    layers: int = 3
    hidden_dim: int = 64
    gin_epsilon: float = 0.0
    readout: str = "mean"

    def __post_init__(self):
        if self.kind not in BACKBONES:
            raise ArgumentError(f"backbone kind must be one of {BACKBONES}, got {self.kind!r}")
        if self.readout not in READOUTS:
            raise ArgumentError(f"readout must be one of {READOUTS}, got {self.readout!r}")
        if self.layers < 1:
            raise ArgumentError("need at least one layer")
        if self.hidden_dim < 1:
            raise ArgumentError("hidden_dim must be positive")


def build_gnn_params(store: ad.ParameterStore, prefix: str, in_dim: int, config: GnnConfig) -> None:
    """Register encoder weights under ``prefix`` in the store."""
    if in_dim < 1:
        raise ArgumentError("feature dimension must be positive")
    d = config.hidden_dim
    for layer in range(config.layers):
        fan_in = in_dim if layer == 0 else d
        if config.kind == "gin":
            store.glorot(f"{prefix}.layer{layer}.w1", fan_in, d)
            store.zeros(f"{prefix}.layer{layer}.b1", (d,))
            store.glorot(f"{prefix}.layer{layer}.w2", d, d)
            store.zeros(f"{prefix}.layer{layer}.b2", (d,))
        else:
            store.glorot(f"{prefix}.layer{layer}.w", fan_in, d)
            store.zeros(f"{prefix}.layer{layer}.b", (d,))


def _directed_weights(batch: GraphBatch, edge_weights: ad.Tensor | None) -> ad.Tensor | None:
    """Duplicate per-bond weights onto both directions as an [2E, 1] column."""
    if edge_weights is None:
        return None
    if edge_weights.ndim != 1 or edge_weights.shape[0] != batch.n_edges:
        raise ShapeError(
            f"edge_weights must be one scalar per stored bond "
            f"({batch.n_edges}), got shape {edge_weights.shape}"
        )
    both = ad.concat([edge_weights, edge_weights], axis=0)
    return ad.reshape(both, (2 * batch.n_edges, 1))


def _gin_aggregate(
    h: ad.Tensor, batch: GraphBatch, w_col: ad.Tensor | None, eps: float
) -> ad.Tensor:
    src, dst = batch.directed_edges
    msgs = ad.gather_rows(h, src)
    if w_col is not None:
        msgs = ad.elementwise_mul(msgs, w_col)
    agg = ad.scatter_add(msgs, dst, batch.n_nodes)
    return ad.add(ad.scale(h, 1.0 + eps), agg)


def _gcn_aggregate(h: ad.Tensor, batch: GraphBatch, w_col: ad.Tensor | None) -> ad.Tensor:
    src, dst = batch.directed_edges
    if w_col is None:
        w_col = ad.Tensor(np.ones((2 * batch.n_edges, 1)))
    # Weighted degree with a unit self loop keeps the normalization defined
    # even when all incident weights are zero.
    deg = ad.shift(ad.scatter_add(w_col, dst, batch.n_nodes), 1.0)
    inv_sqrt = ad.power(deg, -0.5)
    coef = ad.elementwise_mul(
        w_col, ad.elementwise_mul(ad.gather_rows(inv_sqrt, src), ad.gather_rows(inv_sqrt, dst))
    )
    msgs = ad.elementwise_mul(ad.gather_rows(h, src), coef)
    agg = ad.scatter_add(msgs, dst, batch.n_nodes)
    self_term = ad.elementwise_mul(h, ad.elementwise_mul(inv_sqrt, inv_sqrt))
    return ad.add(agg, self_term)


def encode_nodes(
    features: ad.Tensor,
    batch: GraphBatch,
    store: ad.ParameterStore,
    prefix: str,
    config: GnnConfig,
    edge_weights: ad.Tensor | None = None,
) -> ad.Tensor:
    """Run the stacked encoder, returning per-node states [n_nodes, hidden]."""
    if features.ndim != 2 or features.shape[0] != batch.n_nodes:
        raise ShapeError(
            f"features must be [{batch.n_nodes}, f], got {features.shape}"
        )
    w_col = _directed_weights(batch, edge_weights)
    h = features
    for layer in range(config.layers):
        if config.kind == "gin":
            agg = _gin_aggregate(h, batch, w_col, config.gin_epsilon)
            pre = ad.add(ad.matmul(agg, store[f"{prefix}.layer{layer}.w1"]), store[f"{prefix}.layer{layer}.b1"])
            h = ad.add(ad.matmul(ad.relu(pre), store[f"{prefix}.layer{layer}.w2"]), store[f"{prefix}.layer{layer}.b2"])
        else:
            agg = _gcn_aggregate(h, batch, w_col)
            h = ad.add(ad.matmul(agg, store[f"{prefix}.layer{layer}.w"]), store[f"{prefix}.layer{layer}.b"])
        if layer + 1 < config.layers:
            h = ad.relu(h)
    return h


def readout(node_states: ad.Tensor, batch: GraphBatch, config: GnnConfig) -> ad.Tensor:
    """Per-graph pooling to [n_graphs, hidden]; empty graphs give zeros."""
    if node_states.ndim != 2 or node_states.shape[0] != batch.n_nodes:
        raise ShapeError(f"node_states must be [{batch.n_nodes}, d], got {node_states.shape}")
    sums = ad.scatter_add(node_states, batch.node_graph_ids, batch.n_graphs)
    if config.readout == "sum":
        return sums
    counts = np.diff(batch.node_offsets).astype(np.float64)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    return ad.elementwise_mul(sums, ad.Tensor(inv.reshape(-1, 1)))
