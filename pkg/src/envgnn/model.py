"""Full-model assembly over packed graph batches.

The full model runs four stages: a dedicated extractor encoder scores
every bond into an environment probability, a relaxed Bernoulli mask is
drawn from those probabilities, one shared predictor encoder embeds the
graph twice (under the mask and under its complement), and the fusion
stage mixes the two graph-level representations into the main logits.
The baseline variant is the bare predictor encoder with the prediction
head, trained on cross entropy alone; it serves as the control model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .backbone import GnnConfig, build_gnn_params, encode_nodes, readout
from .errors import ConfigError
from .graphs import GraphBatch
from .interaction import (
    InteractionConfig,
    build_interaction_params,
    interaction_forward,
)
from .masking import (
    MaskConfig,
    build_mask_params,
    edge_probabilities,
    environment_embed,
    invariant_embed,
    sample_mask,
)

MODEL_KINDS = ("full", "baseline")


@dataclass(frozen=True)
class ForwardResult:
    """Everything one full-model pass produces."""

    main_logits: ad.Tensor
    env_logits: ad.Tensor
    p: ad.Tensor
    alpha: ad.Tensor
    z_e: ad.Tensor
    z_c: ad.Tensor
    z_ce: ad.Tensor


def build_model_params(
    store: ad.ParameterStore,
    model: str,
    feature_dim: int,
    n_classes: int,
    gnn: GnnConfig,
    mask: MaskConfig,
    interaction: InteractionConfig,
) -> None:
    """Register every trainable tensor for the chosen model kind.

    Registration order is fixed (extractor, mask scorer, predictor
    encoder, fusion, head) because it defines the checkpoint layout.
    """
    if model not in MODEL_KINDS:
        raise ConfigError(f"model must be one of {MODEL_KINDS}, got {model!r}")
    if interaction.dim != gnn.hidden_dim:
        raise ConfigError(
            f"interaction dim {interaction.dim} must equal encoder hidden_dim "
            f"{gnn.hidden_dim}"
        )
    if model == "full":
        build_mask_params(store, feature_dim, n_classes, gnn, mask)
        build_gnn_params(store, "encoder", feature_dim, gnn)
        build_interaction_params(store, n_classes, interaction)
    else:
        build_gnn_params(store, "encoder", feature_dim, gnn)
        d = gnn.hidden_dim
        store.glorot("head.w1", d, d)
        store.zeros("head.b1", (d,))
        store.glorot("head.w2", d, n_classes)
        store.zeros("head.b2", (n_classes,))


def forward_full(
    features: ad.Tensor,
    batch: GraphBatch,
    store: ad.ParameterStore,
    gnn: GnnConfig,
    interaction: InteractionConfig,
    *,
    training: bool,
    tau: float,
    mask_rng: np.random.Generator | None = None,
    noise_rng: np.random.Generator | None = None,
    mask_uniforms: np.ndarray | None = None,
    noise: tuple[np.ndarray, np.ndarray] | None = None,
) -> ForwardResult:
    """One pass of the full model.

    ``mask_uniforms`` and ``noise`` pin the stochastic draws for gradient
    checking; otherwise the two rngs supply them in training mode.
    """
    h_ext = encode_nodes(features, batch, store, "extractor", gnn)
    p = edge_probabilities(h_ext, batch, store)
    alpha = sample_mask(p, tau, mask_rng, training, uniforms=mask_uniforms)
    z_e, env_logits = environment_embed(features, batch, alpha, store, gnn)
    z_c = invariant_embed(features, batch, alpha, store, gnn)
    main_logits, z_ce = interaction_forward(
        z_e, z_c, store, interaction, noise_rng, training, noise=noise
    )
    return ForwardResult(main_logits, env_logits, p, alpha, z_e, z_c, z_ce)


def forward_baseline(
    features: ad.Tensor, batch: GraphBatch, store: ad.ParameterStore, gnn: GnnConfig
) -> ad.Tensor:
    """Plain encoder plus prediction head; returns main logits."""
    h = encode_nodes(features, batch, store, "encoder", gnn)
    z = readout(h, batch, gnn)
    hidden = ad.relu(ad.add(ad.matmul(z, store["head.w1"]), store["head.b1"]))
    return ad.add(ad.matmul(hidden, store["head.w2"]), store["head.b2"])
