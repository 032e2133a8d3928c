"""Shared fixtures: tiny vocab/model/bundle builders used across the suite."""

import numpy as np
import pytest

from ctxpress.controller import AllocationPolicy
from ctxpress.data import generate_example, generate_split, preset, vocab_for_config
from ctxpress.model import ModelConfig, init_params
from ctxpress.pipeline import ModelBundle


def tiny_model_config(vocab_size, *, dtype="f64", n_layers=2, d_model=16, n_heads=2,
                      d_ff=32, max_positions=640, k_max=8):
    return ModelConfig(
        vocab_size=vocab_size, n_layers=n_layers, n_heads=n_heads, d_model=d_model,
        d_ff=d_ff, max_positions=max_positions, adapter_rank=4, n_probe_layers=2,
        probe_hidden=16, k_max=k_max, dtype=dtype,
    )


def randomize_adapters(params, seed=5, scale=0.05):
    rng = np.random.default_rng(seed)
    for _, t in params.named("adapters"):
        t.data = rng.normal(0, scale, size=t.data.shape).astype(t.data.dtype)


@pytest.fixture(scope="session")
def sent_config():
    return preset("sentence", n_chunks=4, seed=11)


@pytest.fixture(scope="session")
def sent_vocab(sent_config):
    return vocab_for_config(sent_config, k_max=8)


@pytest.fixture(scope="session")
def sent_examples(sent_config):
    return generate_split(sent_config, 12)


@pytest.fixture()
def tiny_bundle(sent_vocab):
    """Random-weight f64 bundle with non-zero adapters, generic test carrier."""
    config = tiny_model_config(len(sent_vocab))
    params = init_params(config, seed=7)
    randomize_adapters(params)
    params.set_trainable(("adapters", "ct", "probe"))
    return ModelBundle(config=config, params=params, vocab=sent_vocab, stage="pretrain")


@pytest.fixture(scope="session")
def policy():
    return AllocationPolicy(r=10.0, k_max=8, k_min=1)
