"""Cross attention, gated bridge and prediction head."""

import numpy as np
import pytest

from envgnn import autodiff as ad
from envgnn.errors import ArgumentError
from envgnn.interaction import (
    InteractionConfig,
    build_interaction_params,
    cross_attention,
    gated_bridge,
    interaction_forward,
    predict,
    qkv_project,
)

from helpers import fd_check


def make(seed=0, dim=8, heads=4, n_classes=3, **kw):
    config = InteractionConfig(dim=dim, heads=heads, **kw)
    store = ad.ParameterStore(seed=seed)
    build_interaction_params(store, n_classes, config)
    return config, store


def numpy_attention_oracle(q, k, v, heads):
    """Independent chunked-token attention in plain numpy."""
    b, d = q.shape
    dh = d // heads
    out_e = np.zeros_like(q)
    out_c = np.zeros_like(q)
    for i in range(b):
        qt = q[i].reshape(heads, dh)
        kt = k[i].reshape(heads, dh)
        vt = v[i].reshape(heads, dh)
        se = qt @ kt.T / np.sqrt(dh)
        ae = np.exp(se - se.max(axis=1, keepdims=True))
        ae /= ae.sum(axis=1, keepdims=True)
        sc = kt @ qt.T / np.sqrt(dh)
        ac = np.exp(sc - sc.max(axis=1, keepdims=True))
        ac /= ac.sum(axis=1, keepdims=True)
        out_e[i] = (ae @ vt).reshape(d)
        out_c[i] = (ac @ vt).reshape(d)
    return out_e, out_c


def test_attention_matches_numpy_oracle():
    config, store = make(seed=1)
    rng = np.random.default_rng(2)
    z_e = ad.Tensor(rng.standard_normal((3, 8)))
    z_c = ad.Tensor(rng.standard_normal((3, 8)))
    q, k, v = qkv_project(z_e, z_c, store)
    out_e, out_c = cross_attention(q, k, v, config)
    oe, oc = numpy_attention_oracle(q.data, k.data, v.data, config.heads)
    assert np.allclose(out_e.data, oe, atol=1e-12)
    assert np.allclose(out_c.data, oc, atol=1e-12)


def test_single_head_attention_passes_values_through():
    config, store = make(seed=3, dim=6, heads=1)
    rng = np.random.default_rng(4)
    z_e = ad.Tensor(rng.standard_normal((2, 6)))
    z_c = ad.Tensor(rng.standard_normal((2, 6)))
    q, k, v = qkv_project(z_e, z_c, store)
    out_e, out_c, (att_e, att_c) = cross_attention(q, k, v, config, return_maps=True)
    assert np.allclose(att_e.data, 1.0)
    assert np.allclose(att_c.data, 1.0)
    assert np.allclose(out_e.data, v.data, atol=1e-12)
    assert np.allclose(out_c.data, v.data, atol=1e-12)


def test_score_transpose_and_symmetric_map_identities():
    config, store = make(seed=5)
    rng = np.random.default_rng(6)
    # The raw score matrices are mutual transposes for any inputs.
    z_e = ad.Tensor(rng.standard_normal((2, 8)))
    z_c = ad.Tensor(rng.standard_normal((2, 8)))
    q, k, v = qkv_project(z_e, z_c, store)
    dh = 8 // config.heads
    for i in range(2):
        qt = q.data[i].reshape(config.heads, dh)
        kt = k.data[i].reshape(config.heads, dh)
        assert np.allclose(qt @ kt.T, (kt @ qt.T).T, atol=1e-12)
    # With shared Q/K projections and equal inputs the scores are symmetric,
    # so the two row-softmaxed maps coincide.
    store.load_state({**store.snapshot(), "inter.wk": store["inter.wq"].data.copy()})
    z = ad.Tensor(rng.standard_normal((2, 8)))
    q, k, v = qkv_project(z, z, store)
    _, _, (att_e, att_c) = cross_attention(q, k, v, config, return_maps=True)
    assert np.allclose(att_e.data, att_c.data, atol=1e-12)


def test_training_noise_perturbs_and_eval_is_clean():
    config, store = make(seed=7, noise_std=0.5)
    rng = np.random.default_rng(8)
    z_e = ad.Tensor(rng.standard_normal((2, 8)))
    z_c = ad.Tensor(rng.standard_normal((2, 8)))
    q, k, v = qkv_project(z_e, z_c, store)
    clean_e, clean_c = cross_attention(q, k, v, config)
    noisy_e, noisy_c = cross_attention(q, k, v, config, rng=np.random.default_rng(9), training=True)
    assert not np.allclose(clean_e.data, noisy_e.data)
    assert not np.allclose(clean_c.data, noisy_c.data)
    again_e, _ = cross_attention(q, k, v, config, rng=np.random.default_rng(9), training=True)
    assert np.array_equal(noisy_e.data, again_e.data)
    zero_cfg, store0 = make(seed=7, noise_std=0.0)
    e0, _ = cross_attention(q, k, v, zero_cfg, rng=np.random.default_rng(0), training=True)
    e1, _ = cross_attention(q, k, v, zero_cfg)
    assert np.array_equal(e0.data, e1.data)


def test_gated_bridge_sequential_semantics():
    _, store = make(seed=10, dim=4, heads=2)
    rng = np.random.default_rng(11)
    z_e = ad.Tensor(rng.standard_normal((3, 4)))
    z_c = ad.Tensor(rng.standard_normal((3, 4)))
    z_ce, gate = gated_bridge(z_e, z_c, store)
    g = np.tanh(z_e.data @ store["inter.gate"].data.T)
    z_e2 = z_e.data + z_c.data * g
    z_c2 = z_c.data + z_e2 * g
    assert np.allclose(gate.data, g, atol=1e-12)
    assert np.allclose(z_ce.data, z_c2 * g, atol=1e-12)


def test_zero_gate_matrix_collapses_output():
    config, store = make(seed=12, dim=6, heads=2)
    store["inter.gate"].data = np.zeros_like(store["inter.gate"].data)
    rng = np.random.default_rng(13)
    z_e = ad.Tensor(rng.standard_normal((4, 6)))
    z_c = ad.Tensor(rng.standard_normal((4, 6)))
    logits, z_ce = interaction_forward(z_e, z_c, store, config)
    assert np.all(z_ce.data == 0.0)
    # Head biases are zero at init, so logits equal the output bias row.
    assert np.allclose(logits.data, np.tile(store["head.b2"].data, (4, 1)), atol=1e-15)


def test_prediction_head_on_zero_weights_is_uniform():
    config, store = make(seed=14, dim=4, heads=2, n_classes=3)
    store.load_state({k: np.zeros_like(v) for k, v in store.snapshot().items()})
    logits = predict(ad.Tensor(np.random.default_rng(0).standard_normal((2, 4))), store)
    assert np.all(logits.data == 0.0)
    import envgnn.autodiff as adp

    soft = adp.softmax_rows(logits)
    assert np.allclose(soft.data, 1.0 / 3.0)


def test_ablation_flags_change_logits_and_reduce_correctly():
    rng = np.random.default_rng(15)
    z_e = ad.Tensor(rng.standard_normal((3, 8)))
    z_c = ad.Tensor(rng.standard_normal((3, 8)))
    full_cfg, store = make(seed=16)
    logits_full, _ = interaction_forward(z_e, z_c, store, full_cfg)
    no_inter = InteractionConfig(dim=8, heads=4, interaction_enabled=False)
    logits_ni, _ = interaction_forward(z_e, z_c, store, no_inter)
    no_bridge = InteractionConfig(dim=8, heads=4, bridge_enabled=False)
    logits_nb, _ = interaction_forward(z_e, z_c, store, no_bridge)
    neither = InteractionConfig(dim=8, heads=4, interaction_enabled=False, bridge_enabled=False)
    logits_none, z_ce_none = interaction_forward(z_e, z_c, store, neither)
    assert np.max(np.abs(logits_full.data - logits_ni.data)) > 1e-6
    assert np.max(np.abs(logits_full.data - logits_nb.data)) > 1e-6
    # With both stages skipped the head sees the raw invariant representation.
    assert np.array_equal(z_ce_none.data, z_c.data)
    assert np.allclose(logits_none.data, predict(z_c, store).data, atol=1e-15)


def test_gradients_through_full_block():
    config, store = make(seed=17, dim=4, heads=2, n_classes=2)
    rng = np.random.default_rng(18)
    z_e0 = rng.standard_normal((2, 4))
    z_c0 = rng.standard_normal((2, 4))
    labels = np.array([0, 1])
    noise = (rng.standard_normal((2, 4)), rng.standard_normal((2, 4)))

    def loss_fn():
        z_e = ad.Tensor(z_e0, requires_grad=True)
        z_c = ad.Tensor(z_c0, requires_grad=True)
        logits, _ = interaction_forward(
            z_e, z_c, store, config, training=True, noise=noise
        )
        return z_e, z_c, ad.cross_entropy(logits, labels)

    z_e, z_c, loss = loss_fn()
    ad.backward(loss)
    fd_check(lambda arr: _with_input(loss_fn, z_e0, z_c0, store, config, labels, noise, "e", arr), z_e0, z_e.grad)
    for name, p in store.items():
        assert p.grad is not None, name
        base = p.data.copy()

        def f(arr, p=p, base=base):
            p.data = arr.reshape(base.shape)
            out = loss_fn()[2].item()
            p.data = base
            return out

        fd_check(f, base, p.grad)


def _with_input(loss_fn, z_e0, z_c0, store, config, labels, noise, which, arr):
    z_e = ad.Tensor(arr if which == "e" else z_e0)
    z_c = ad.Tensor(z_c0 if which == "e" else arr)
    logits, _ = interaction_forward(z_e, z_c, store, config, training=True, noise=noise)
    return ad.cross_entropy(logits, labels).item()


def test_config_validation():
    with pytest.raises(ArgumentError):
        InteractionConfig(dim=8, heads=3)
    with pytest.raises(ArgumentError):
        InteractionConfig(dim=0)
    with pytest.raises(ArgumentError):
        InteractionConfig(noise_std=-1.0)
    with pytest.raises(ArgumentError):
        config, store = make(seed=0, noise_std=1.0)
        z = ad.Tensor(np.ones((2, 8)))
        q, k, v = qkv_project(z, z, store)
        cross_attention(q, k, v, config, training=True)
