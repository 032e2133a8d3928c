import numpy as np
import pytest

from ctxpress import autodiff as ad
from ctxpress.errors import CapacityError, ConfigurationError
from ctxpress.model import (
    KVCache,
    ModelConfig,
    forward,
    gradients,
    init_params,
)

from conftest import randomize_adapters, tiny_model_config


@pytest.fixture()
def setup():
    config = tiny_model_config(vocab_size=50, max_positions=64)
    params = init_params(config, seed=1)
    rng = np.random.default_rng(0)
    ids = rng.integers(0, 50, size=20)
    return config, params, ids


def incremental_logits(params, config, ids, start=0):
    cache = KVCache(config.n_layers)
    logits = []
    for offset, tok in enumerate(ids):
        out = forward(
            params, config, np.asarray([tok]),
            start_pos=start + offset, prefix_kv=cache.prefix_tensors(),
        )
        cache.extend(out.kv, [start + offset])
        logits.append(out.logits.data[0])
    return np.stack(logits)


def test_cache_equivalence(setup):
    config, params, ids = setup
    full = forward(params, config, ids).logits.data
    inc = incremental_logits(params, config, ids)
    assert np.abs(full - inc).max() < 1e-5


def test_cache_equivalence_many_lengths(setup):
    config, params, _ = setup
    rng = np.random.default_rng(42)
    for length in (1, 2, 7, 33, 64):
        ids = rng.integers(0, 50, size=length)
        full = forward(params, config, ids).logits.data
        inc = incremental_logits(params, config, ids)
        assert np.abs(full - inc).max() < 1e-5


def test_adapter_zero_init_identity(setup):
    config, params, ids = setup
    base = forward(params, config, ids).logits.data
    with_adapters = forward(params, config, ids, use_adapters=True).logits.data
    assert np.array_equal(base, with_adapters)


def test_adapter_identity_per_layer(setup):
    config, params, ids = setup
    rng = np.random.default_rng(3)
    base = forward(params, config, ids).logits.data
    # random A factors change nothing while every B stays zero
    for i in range(config.n_layers):
        for p in ("q", "v"):
            a = params.tensor("adapters", f"l{i}.{p}.a")
            a.data = rng.normal(0, 0.2, size=a.data.shape)
    assert np.array_equal(base, forward(params, config, ids, use_adapters=True).logits.data)
    # a single non-zero B breaks it, for each layer independently
    for i in range(config.n_layers):
        b = params.tensor("adapters", f"l{i}.q.b")
        saved = b.data.copy()
        b.data = rng.normal(0, 0.2, size=b.data.shape)
        adapted = forward(params, config, ids, use_adapters=True).logits.data
        assert not np.array_equal(base, adapted)
        b.data = saved


def test_causality(setup):
    config, params, ids = setup
    out = forward(params, config, ids).logits.data
    mutated = ids.copy()
    mutated[10] = (mutated[10] + 1) % 50
    out2 = forward(params, config, mutated).logits.data
    assert np.array_equal(out[:10], out2[:10])
    assert not np.allclose(out[10:], out2[10:])


def test_forward_deterministic(setup):
    config, params, ids = setup
    a = forward(params, config, ids).logits.data
    b = forward(params, config, ids).logits.data
    assert np.array_equal(a, b)


def test_position_overflow(setup):
    config, params, _ = setup
    with pytest.raises(CapacityError):
        forward(params, config, np.zeros(65, dtype=np.int64))
    with pytest.raises(CapacityError):
        forward(params, config, np.zeros(10, dtype=np.int64), start_pos=60)


def test_gradient_finite_difference(setup):
    config, params, ids = setup
    params.set_trainable(("base", "adapters"))
    randomize_adapters(params, seed=4)

    def loss():
        out = forward(params, config, ids, use_adapters=True)
        return ad.cross_entropy_mean(out.logits, np.roll(ids, -1))

    grads = gradients(params, loss())
    rng = np.random.default_rng(5)
    checks = [("base", "tok_emb"), ("base", "l0.wq"), ("base", "l1.w2"),
              ("adapters", "l0.q.a"), ("adapters", "l1.v.b")]
    for group, name in checks:
        t = params.tensor(group, name)
        flat = t.data.reshape(-1)
        i = int(rng.integers(0, flat.size))
        eps = 1e-4
        orig = flat[i]
        flat[i] = orig + eps
        lp = float(loss().data)
        flat[i] = orig - eps
        lm = float(loss().data)
        flat[i] = orig
        fd = (lp - lm) / (2 * eps)
        an = grads[f"{group}.{name}"].reshape(-1)[i]
        assert abs(fd - an) < 1e-3 * max(1.0, abs(fd)), f"{group}.{name}: {fd} vs {an}"


def test_adapter_grads_zero_when_disabled(setup):
    config, params, ids = setup
    params.set_trainable(("base", "adapters"))
    out = forward(params, config, ids, use_adapters=False)
    loss = ad.cross_entropy_mean(out.logits, np.roll(ids, -1))
    grads = gradients(params, loss)
    for name, g in grads.items():
        if name.startswith("adapters."):
            assert np.all(g == 0)


def test_frozen_base_gets_no_gradient_entries(setup):
    config, params, ids = setup
    params.set_trainable(("adapters",))
    randomize_adapters(params, seed=6)
    out = forward(params, config, ids, use_adapters=True)
    grads = gradients(params, ad.cross_entropy_mean(out.logits, np.roll(ids, -1)))
    assert all(name.startswith("adapters.") for name in grads)
    assert not any(name.startswith("base.") for name in grads)
    base_before = params.group_hash("base")
    assert params.group_hash("base") == base_before


def test_kv_cache_position_monotonicity(setup):
    config, params, ids = setup
    cache = KVCache(config.n_layers)
    out = forward(params, config, ids[:5])
    cache.extend(out.kv, np.arange(5))
    with pytest.raises(CapacityError):
        cache.extend(out.kv, np.arange(5))  # repeated positions


def test_model_config_validation():
    with pytest.raises(ConfigurationError):
        ModelConfig(vocab_size=10, d_model=15, n_heads=2)
    with pytest.raises(ConfigurationError):
        ModelConfig(vocab_size=10, dtype="f16")
