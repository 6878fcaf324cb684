"""Stochastic edge masking that splits a graph into environment and
invariant halves.

An extractor MLP scores every stored bond from the concatenated endpoint
states of a dedicated encoder, giving an environment probability p_uv in
[0.01, 0.99] (clamped for bounded KL terms). Training samples a relaxed
Bernoulli mask alpha from p; evaluation uses alpha = p exactly. The
environment branch encodes the graph under alpha, the invariant branch
under 1 - alpha, both through one shared predictor encoder.

The training objective for the environment branch rewards masks whose
environment half cannot predict the label while the mask distribution moves
away from a learnable Bernoulli prior: loss = -CE(env logits, y) -
beta * KL(p || prior). Both terms enter negated, so minimizing the loss
maximizes them; the probability clamp keeps the KL term bounded for any
fixed prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .backbone import GnnConfig, build_gnn_params, encode_nodes, readout
from .errors import ArgumentError, ShapeError
from .graphs import GraphBatch

P_CLAMP_LO = 0.01
P_CLAMP_HI = 0.99
# Label-probability floor for the environment cross entropy; caps the
# squash term at -log(floor) per graph so the objective stays bounded.
ENV_PROB_FLOOR = 1e-4


@dataclass(frozen=True)
class MaskConfig:
    """Extractor and objective knobs.

    ``tau`` is the starting relaxation temperature; the trainer multiplies
    it by ``tau_anneal`` each epoch, never below ``tau_floor``. The prior
    is stored as a logit so it stays a free parameter inside (0, 1).
    """

    beta: float = 1.0
    tau: float = 1.0
    tau_anneal: float = 0.97
    tau_floor: float = 0.3
    prior_init: float = 0.5

    def __post_init__(self):
        if self.tau <= 0 or self.tau_floor <= 0:
            raise ArgumentError("temperatures must be positive")
        if not 0.0 < self.tau_anneal <= 1.0:
            raise ArgumentError("tau_anneal must lie in (0, 1]")
        if not 0.0 < self.prior_init < 1.0:
            raise ArgumentError("prior_init must lie strictly inside (0, 1)")


def build_mask_params(
    store: ad.ParameterStore, feature_dim: int, n_classes: int, gnn: GnnConfig, config: MaskConfig
) -> None:
    """Register extractor encoder, edge scorer, env head and prior logit."""
    d = gnn.hidden_dim
    build_gnn_params(store, "extractor", feature_dim, gnn)
    store.glorot("mask.w1", 2 * d, d)
    store.zeros("mask.b1", (d,))
    store.glorot("mask.w2", d, 1)
    store.zeros("mask.b2", (1,))
    store.glorot("envhead.w", d, n_classes)
    store.zeros("envhead.b", (n_classes,))
    prior = float(config.prior_init)
    store.scalar("mask.prior_logit", float(np.log(prior) - np.log1p(-prior)))


def edge_probabilities(
    node_states: ad.Tensor, batch: GraphBatch, store: ad.ParameterStore
) -> ad.Tensor:
    """Environment probability per stored bond, canonical u < v order.

    Returns a [n_edges] tensor clamped to [0.01, 0.99].
    """
    if node_states.ndim != 2 or node_states.shape[0] != batch.n_nodes:
        raise ShapeError(f"node_states must be [{batch.n_nodes}, d], got {node_states.shape}")
    if batch.n_edges == 0:
        raise ArgumentError("batch has no edges to score")
    h_u = ad.gather_rows(node_states, batch.edge_src)
    h_v = ad.gather_rows(node_states, batch.edge_dst)
    pair = ad.concat([h_u, h_v], axis=1)
    hidden = ad.relu(ad.add(ad.matmul(pair, store["mask.w1"]), store["mask.b1"]))
    score = ad.add(ad.matmul(hidden, store["mask.w2"]), store["mask.b2"])
    p = ad.clamp(ad.sigmoid(score), P_CLAMP_LO, P_CLAMP_HI)
    return ad.reshape(p, (batch.n_edges,))


def sample_mask(
    p: ad.Tensor,
    tau: float,
    rng: np.random.Generator | None,
    training: bool,
    *,
    uniforms: np.ndarray | None = None,
) -> ad.Tensor:
    """Relaxed Bernoulli mask during training; alpha = p at evaluation."""
    if not training:
        return p
    return ad.binary_concrete_sample(p, tau, rng, uniforms=uniforms)


def _expand_mask(alpha: ad.Tensor, batch: GraphBatch) -> ad.Tensor:
    if alpha.ndim != 1 or alpha.shape[0] != batch.n_edges:
        raise ShapeError(f"mask must be [{batch.n_edges}], got {alpha.shape}")
    return alpha


def environment_embed(
    features: ad.Tensor,
    batch: GraphBatch,
    alpha: ad.Tensor,
    store: ad.ParameterStore,
    gnn: GnnConfig,
) -> tuple[ad.Tensor, ad.Tensor]:
    """Encode under the environment mask; returns (Z_e, env logits)."""
    alpha = _expand_mask(alpha, batch)
    h = encode_nodes(features, batch, store, "encoder", gnn, edge_weights=alpha)
    z_e = readout(h, batch, gnn)
    # The reversal makes the env head a competent label probe (it minimizes
    # its own CE) while the encoder and mask above it receive the opposite
    # gradient, pushing label-informative edges out of the environment mask.
    return z_e, env_head(ad.grad_reverse(z_e), store)


def invariant_embed(
    features: ad.Tensor,
    batch: GraphBatch,
    alpha: ad.Tensor,
    store: ad.ParameterStore,
    gnn: GnnConfig,
) -> ad.Tensor:
    """Encode under the complementary mask 1 - alpha; returns Z_c."""
    alpha = _expand_mask(alpha, batch)
    complement = ad.shift(ad.neg(alpha), 1.0)
    h = encode_nodes(features, batch, store, "encoder", gnn, edge_weights=complement)
    return readout(h, batch, gnn)


def env_head(z: ad.Tensor, store: ad.ParameterStore) -> ad.Tensor:
    """Linear class logits for the environment objective."""
    return ad.add(ad.matmul(z, store["envhead.w"]), store["envhead.b"])


def prior_probability(store: ad.ParameterStore) -> ad.Tensor:
    return ad.sigmoid(store["mask.prior_logit"])


def environment_objective(
    env_logits: ad.Tensor,
    labels: np.ndarray,
    p: ad.Tensor,
    store: ad.ParameterStore,
    beta: float,
) -> tuple[ad.Tensor, dict[str, float]]:
    """Environment-branch loss and its decomposition.

    loss = CE(env_logits, labels) - beta * KL(p || prior); the parts dict
    records the two signed components, which sum exactly to the loss value.

    The env logits come through a gradient reversal on Z_e, so minimizing
    this loss trains the env head as a competent label probe while the
    mask and encoder receive the negated CE gradient and learn to remove
    label information from the environment branch.  The reversed upstream
    pressure maximizes the CE, which is unbounded above, so the CE
    saturates at the ENV_PROB_FLOOR label probability the same way the
    p clamp bounds the KL term.
    """
    env_ce = ad.cross_entropy(env_logits, labels, prob_floor=ENV_PROB_FLOOR)
    kl = ad.kl_bernoulli(p, prior_probability(store))
    loss = ad.sub(env_ce, ad.scale(kl, beta))
    parts = {"env_term": env_ce.item(), "kl_term": -beta * kl.item()}
    return loss, parts
