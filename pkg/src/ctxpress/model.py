"""Tiny decoder-only causal transformer on the autodiff engine.

One parameter set carries four named groups:

* ``base``     — embeddings, attention/MLP blocks, output head (the frozen
                 backbone once the first training stage is done)
* ``adapters`` — rank-rho additive deltas on the query/value projections,
                 zero at initialization (B factors start at zero)
* ``ct``       — learned embeddings for the compression-token slots
* ``probe``    — attention-pooling length estimator (see controller.py)

``forward`` accepts an optional per-layer key/value prefix, which is how both
incremental decoding and compressed-memory injection work: new positions
attend causally over ``prefix + self``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CapacityError, ConfigurationError
from .runs import rng_for

DTYPES = {"f32": np.float32, "f64": np.float64}
NEG_INF = -1e9

GROUPS = ("base", "adapters", "ct", "probe")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    max_positions: int = 640
    adapter_rank: int = 8
    n_probe_layers: int = 2
    probe_hidden: int = 64
    k_max: int = 8
    dtype: str = "f32"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError(
                f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}"
            )
        if self.dtype not in DTYPES:
            raise ConfigurationError(f"dtype must be one of {sorted(DTYPES)}")
        for name in ("vocab_size", "n_layers", "n_heads", "d_ff", "max_positions",
                     "adapter_rank", "n_probe_layers", "probe_hidden", "k_max"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]


class ParamSet:
    """Named parameter groups with a trainable mask."""

    def __init__(self, groups: dict, trainable=()):
        self.groups = groups
        self.trainable = frozenset(trainable)
        self.set_trainable(self.trainable)

    def set_trainable(self, group_names) -> None:
        unknown = set(group_names) - set(GROUPS)
        if unknown:
            raise ConfigurationError(f"unknown parameter groups: {sorted(unknown)}")
        self.trainable = frozenset(group_names)
        for gname, tensors in self.groups.items():
            flag = gname in self.trainable
            for t in tensors.values():
                t.requires_grad = flag

    def named(self, group: str):
        for name, t in self.groups[group].items():
            yield f"{group}.{name}", t

    def all_named(self):
        for group in GROUPS:
            yield from self.named(group)

    def trainable_named(self):
        for group in sorted(self.trainable):
            yield from self.named(group)

    def tensor(self, group: str, name: str) -> Tensor:
        return self.groups[group][name]

    def group_hash(self, group: str) -> str:
        h = hashlib.sha256()
        for name, t in self.named(group):
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()


def init_params(config: ModelConfig, seed: int, trainable=("base",)) -> ParamSet:
    rng = rng_for(seed, "init")
    dt = config.np_dtype
    d, ff, rank = config.d_model, config.d_ff, config.adapter_rank

    def normal(*shape, std=0.02):
        return Tensor(rng.normal(0.0, std, size=shape).astype(dt))

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dt))

    def ones(*shape):
        return Tensor(np.ones(shape, dtype=dt))

    base = {
        "tok_emb": normal(config.vocab_size, d),
        "pos_emb": normal(config.max_positions, d),
    }
    adapters = {}
    for i in range(config.n_layers):
        base[f"l{i}.ln1.g"] = ones(d)
        base[f"l{i}.ln1.b"] = zeros(d)
        base[f"l{i}.wq"] = normal(d, d)
        base[f"l{i}.wk"] = normal(d, d)
        base[f"l{i}.wv"] = normal(d, d)
        base[f"l{i}.wo"] = normal(d, d)
        base[f"l{i}.ln2.g"] = ones(d)
        base[f"l{i}.ln2.b"] = zeros(d)
        base[f"l{i}.w1"] = normal(d, ff)
        base[f"l{i}.b1"] = zeros(ff)
        base[f"l{i}.w2"] = normal(ff, d)
        base[f"l{i}.b2"] = zeros(d)
        adapters[f"l{i}.q.a"] = normal(d, rank, std=1.0 / np.sqrt(d))
        adapters[f"l{i}.q.b"] = zeros(rank, d)
        adapters[f"l{i}.v.a"] = normal(d, rank, std=1.0 / np.sqrt(d))
        adapters[f"l{i}.v.b"] = zeros(rank, d)
    base["lnf.g"] = ones(d)
    base["lnf.b"] = zeros(d)
    base["head"] = normal(d, config.vocab_size)

    ct = {"ct": normal(config.k_max, d)}

    probe = {"q0": normal(1, d)}
    for j in range(config.n_probe_layers):
        probe[f"p{j}.wq"] = normal(d, d, std=1.0 / np.sqrt(d))
        probe[f"p{j}.wk"] = normal(d, d, std=1.0 / np.sqrt(d))
        probe[f"p{j}.wv"] = normal(d, d, std=1.0 / np.sqrt(d))
    probe["mlp.w1"] = normal(d, config.probe_hidden, std=1.0 / np.sqrt(d))
    probe["mlp.b1"] = zeros(config.probe_hidden)
    probe["mlp.w2"] = normal(config.probe_hidden, 1, std=1.0 / np.sqrt(config.probe_hidden))
    probe["mlp.b2"] = zeros(1)

    return ParamSet(
        {"base": base, "adapters": adapters, "ct": ct, "probe": probe}, trainable=trainable
    )


@dataclass
class ForwardOut:
    logits: Tensor          # (T, vocab)
    hidden: Tensor          # (T, d_model) final-layer states
    kv: list                # per layer: (K, V) tensors of shape (H, T, head_dim)


def _causal_mask(t: int, prefix: int, dtype) -> Tensor:
    mask = np.zeros((t, prefix + t), dtype=dtype)
    future = np.triu(np.ones((t, t), dtype=bool), k=1)
    mask[:, prefix:][future] = NEG_INF
    return Tensor(mask)


def _heads(x: Tensor, n_heads: int, head_dim: int) -> Tensor:
    t = x.shape[0]
    return x.reshape((t, n_heads, head_dim)).swapaxes(0, 1)


def _merge_heads(x: Tensor, d_model: int) -> Tensor:
    t = x.shape[1]
    return x.swapaxes(0, 1).reshape((t, d_model))


def _project(x: Tensor, w: Tensor, adapter_pair=None) -> Tensor:
    out = x @ w
    if adapter_pair is not None:
        a, b = adapter_pair
        out = out + (x @ a) @ b
    return out


def forward_embedded(
    params: ParamSet,
    config: ModelConfig,
    x: Tensor,
    *,
    prefix_kv=None,
    use_adapters: bool = False,
) -> ForwardOut:
    """Run the transformer stack on already-embedded inputs of shape (T, d)."""
    t = x.shape[0]
    prefix_len = prefix_kv[0][0].shape[1] if prefix_kv else 0
    mask = _causal_mask(t, prefix_len, config.np_dtype)
    scale = 1.0 / np.sqrt(config.head_dim)
    new_kv = []

    for i in range(config.n_layers):
        g = lambda name: params.tensor("base", f"l{i}.{name}")
        h = ad.layer_norm(x, g("ln1.g"), g("ln1.b"))
        q_ad = (params.tensor("adapters", f"l{i}.q.a"), params.tensor("adapters", f"l{i}.q.b")) if use_adapters else None
        v_ad = (params.tensor("adapters", f"l{i}.v.a"), params.tensor("adapters", f"l{i}.v.b")) if use_adapters else None
        q = _heads(_project(h, g("wq"), q_ad), config.n_heads, config.head_dim)
        k = _heads(h @ g("wk"), config.n_heads, config.head_dim)
        v = _heads(_project(h, g("wv"), v_ad), config.n_heads, config.head_dim)
        new_kv.append((k, v))
        if prefix_kv:
            pk, pv = prefix_kv[i]
            k_all = ad.concat([pk, k], axis=1)
            v_all = ad.concat([pv, v], axis=1)
        else:
            k_all, v_all = k, v
        scores = ad.mul(q @ k_all.swapaxes(-1, -2), scale) + mask
        ctx = ad.softmax(scores, axis=-1) @ v_all
        x = x + _merge_heads(ctx, config.d_model) @ g("wo")
        h2 = ad.layer_norm(x, g("ln2.g"), g("ln2.b"))
        x = x + ad.gelu(h2 @ g("w1") + g("b1")) @ g("w2") + g("b2")

    hidden = ad.layer_norm(x, params.tensor("base", "lnf.g"), params.tensor("base", "lnf.b"))
    logits = hidden @ params.tensor("base", "head")
    return ForwardOut(logits=logits, hidden=hidden, kv=new_kv)


def embed_ids(params: ParamSet, config: ModelConfig, ids, start_pos: int = 0) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ConfigurationError("ids must be a non-empty 1-d sequence")
    end = start_pos + ids.size
    if start_pos < 0 or end > config.max_positions:
        raise CapacityError(
            f"positions [{start_pos}, {end}) exceed max_positions={config.max_positions}"
        )
    tok = ad.embedding(params.tensor("base", "tok_emb"), ids)
    pos = params.tensor("base", "pos_emb")[start_pos:end]
    return tok + pos


def forward(
    params: ParamSet,
    config: ModelConfig,
    ids,
    *,
    start_pos: int = 0,
    prefix_kv=None,
    use_adapters: bool = False,
) -> ForwardOut:
    """Causal forward over token ids starting at ``start_pos``."""
    x = embed_ids(params, config, ids, start_pos=start_pos)
    return forward_embedded(params, config, x, prefix_kv=prefix_kv, use_adapters=use_adapters)


class KVCache:
    """Per-layer key/value history for incremental decoding (numpy, no graph)."""

    def __init__(self, n_layers: int):
        self.layers = [None] * n_layers
        self.positions = np.zeros(0, dtype=np.int64)

    @property
    def size(self) -> int:
        return int(self.positions.size)

    @property
    def next_position(self) -> int:
        return int(self.positions[-1]) + 1 if self.size else 0

    def extend(self, kv, positions) -> None:
        positions = np.asarray(positions, dtype=np.int64)
        if self.size and positions.size and positions[0] <= self.positions[-1]:
            raise CapacityError("cache positions must be strictly increasing")
        for i, (k, v) in enumerate(kv):
            k = k.data if isinstance(k, Tensor) else k
            v = v.data if isinstance(v, Tensor) else v
            if self.layers[i] is None:
                self.layers[i] = (k.copy(), v.copy())
            else:
                pk, pv = self.layers[i]
                self.layers[i] = (np.concatenate([pk, k], axis=1), np.concatenate([pv, v], axis=1))
        self.positions = np.concatenate([self.positions, positions])

    def prefix_tensors(self):
        if self.size == 0:
            return None
        return [(Tensor(k), Tensor(v)) for k, v in self.layers]


def gradients(params: ParamSet, loss: Tensor) -> dict:
    """Backprop ``loss`` and return gradients for every trainable parameter.

    Trainable parameters untouched by the loss report zero gradients; frozen
    groups are absent from the result.
    """
    zero_grads(params)
    loss.backward()
    out = {}
    for name, t in params.trainable_named():
        out[name] = t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
    return out


def zero_grads(params: ParamSet) -> None:
    for _, t in params.all_named():
        t.grad = None
