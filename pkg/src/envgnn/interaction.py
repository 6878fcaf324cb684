"""Cross attention and gated fusion between the environment and invariant
graph representations.

Each graph-level vector of width d is viewed as ``heads`` tokens of width
d / heads, so attention between two single vectors is a heads-by-heads map
rather than a degenerate 1x1 one. Queries come from the environment side,
keys and values from the invariant side, and both attended outputs read the
same invariant value tokens. Training adds independent Gaussian noise to
both attended outputs; evaluation is noiseless.

The gated bridge then fuses sequentially: a tanh gate computed from the
attended environment representation mixes the two sides, the updated
environment vector feeding the invariant update, and the prediction
representation is the gated invariant result. Ablation flags skip the
attention stage (outputs pass through) or the bridge (prediction uses the
attended invariant vector directly).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, ShapeError


@dataclass(frozen=True)
class InteractionConfig:
    dim: int = 64
    heads: int = 4
    noise_std: float = 1.0
    interaction_enabled: bool = True
    bridge_enabled: bool = True

    def __post_init__(self):
        if self.dim < 1 or self.heads < 1:
            raise ArgumentError("dim and heads must be positive")
        if self.dim % self.heads != 0:
            raise ArgumentError(f"heads ({self.heads}) must divide dim ({self.dim})")
        if self.noise_std < 0:
            raise ArgumentError("noise_std must be nonnegative")


def build_interaction_params(
    store: ad.ParameterStore, n_classes: int, config: InteractionConfig
) -> None:
    """Register projection, gate and prediction-head weights.

    Skips the stages that the ablation flags disable, so every registered
    parameter receives gradients.
    """
    d = config.dim
    if config.interaction_enabled:
        store.glorot("inter.wq", d, d)
        store.glorot("inter.wk", d, d)
        store.glorot("inter.wv", d, d)
    if config.bridge_enabled:
        store.glorot("inter.gate", d, d)
    store.glorot("head.w1", d, d)
    store.zeros("head.b1", (d,))
    store.glorot("head.w2", d, n_classes)
    store.zeros("head.b2", (n_classes,))


def qkv_project(
    z_e: ad.Tensor, z_c: ad.Tensor, store: ad.ParameterStore
) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """Queries from the environment side, keys/values from the invariant."""
    if z_e.shape != z_c.shape or z_e.ndim != 2:
        raise ShapeError(f"expected matching [b, d] inputs, got {z_e.shape} and {z_c.shape}")
    return (
        ad.matmul(z_e, store["inter.wq"]),
        ad.matmul(z_c, store["inter.wk"]),
        ad.matmul(z_c, store["inter.wv"]),
    )


def _tokens(x: ad.Tensor, heads: int) -> ad.Tensor:
    b, d = x.shape
    return ad.reshape(x, (b, heads, d // heads))


def cross_attention(
    q: ad.Tensor,
    k: ad.Tensor,
    v: ad.Tensor,
    config: InteractionConfig,
    rng: np.random.Generator | None = None,
    training: bool = False,
    *,
    noise: tuple[np.ndarray, np.ndarray] | None = None,
    return_maps: bool = False,
):
    """Chunked-token cross attention; returns the attended (env, inv) pair.

    Both outputs attend over the same value tokens v. ``noise`` supplies
    fixed standard-normal draws for gradient checking; ``return_maps``
    additionally yields the two [b, heads, heads] attention maps.
    """
    b, d = q.shape
    h = config.heads
    dh = d // h
    qt, kt, vt = _tokens(q, h), _tokens(k, h), _tokens(v, h)
    scale = 1.0 / np.sqrt(dh)
    att_e = ad.softmax_rows(ad.scale(ad.bmm(qt, ad.transpose(kt)), scale))
    out_e = ad.reshape(ad.bmm(att_e, vt), (b, d))
    att_c = ad.softmax_rows(ad.scale(ad.bmm(kt, ad.transpose(qt)), scale))
    out_c = ad.reshape(ad.bmm(att_c, vt), (b, d))
    if training and config.noise_std > 0:
        if noise is not None:
            eps_e, eps_c = noise
        else:
            if rng is None:
                raise ArgumentError("training-mode cross_attention needs an rng or fixed noise")
            eps_e = rng.standard_normal((b, d))
            eps_c = rng.standard_normal((b, d))
        out_e = ad.add(out_e, ad.gaussian_sample((b, d), config.noise_std, noise=eps_e))
        out_c = ad.add(out_c, ad.gaussian_sample((b, d), config.noise_std, noise=eps_c))
    if return_maps:
        return out_e, out_c, (att_e, att_c)
    return out_e, out_c


def gated_bridge(
    z_e: ad.Tensor, z_c: ad.Tensor, store: ad.ParameterStore
) -> tuple[ad.Tensor, ad.Tensor]:
    """Sequential gated fusion; returns (Z_ce, gate).

    The invariant update uses the already-updated environment vector, so
    with a zero gate matrix the fused output is exactly zero.
    """
    gate = ad.tanh(ad.matmul(z_e, ad.transpose(store["inter.gate"])))
    z_e2 = ad.add(z_e, ad.elementwise_mul(z_c, gate))
    z_c2 = ad.add(z_c, ad.elementwise_mul(z_e2, gate))
    z_ce = ad.elementwise_mul(z_c2, gate)
    return z_ce, gate


def predict(z: ad.Tensor, store: ad.ParameterStore) -> ad.Tensor:
    """Two-layer prediction head mapping the fused representation to logits."""
    hidden = ad.relu(ad.add(ad.matmul(z, store["head.w1"]), store["head.b1"]))
    return ad.add(ad.matmul(hidden, store["head.w2"]), store["head.b2"])


def interaction_forward(
    z_e: ad.Tensor,
    z_c: ad.Tensor,
    store: ad.ParameterStore,
    config: InteractionConfig,
    rng: np.random.Generator | None = None,
    training: bool = False,
    *,
    noise: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[ad.Tensor, ad.Tensor]:
    """Full fusion stage; returns (logits, Z_ce).

    interaction_enabled=False passes both representations through
    unchanged; bridge_enabled=False predicts from the attended invariant
    representation.
    """
    if config.interaction_enabled:
        q, k, v = qkv_project(z_e, z_c, store)
        z_e1, z_c1 = cross_attention(q, k, v, config, rng, training, noise=noise)
    else:
        z_e1, z_c1 = z_e, z_c
    if config.bridge_enabled:
        z_ce, _ = gated_bridge(z_e1, z_c1, store)
    else:
        z_ce = z_c1
    return predict(z_ce, store), z_ce
