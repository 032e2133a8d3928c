"""Selective encoder: build the tagged encoder input and export compressed memory.

The encoder input layout is::

    [query tokens] [SEP] [<PA> chunk </PA> ...] [CT_1 .. CT_k]

The per-layer key/value vectors at the k compression positions become the
memory handed to the decoder. Compression-token positions are embedded from
the dedicated learned table (the ``ct`` parameter group), not from the base
token embeddings, and the first k of the k_max slots are used in order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import SynthExample
from .errors import CapacityError, ContractError
from .model import ModelConfig, ParamSet, embed_ids, forward_embedded
from .vocab import Vocab, encode_text


@dataclass
class EncoderInput:
    ids: np.ndarray          # full input including CT placeholder ids
    n_query: int             # query token count (positions [0, n_query))
    ct_start: int            # first compression position
    k: int
    content_tokens: int      # chunk content tokens only (no tags, no query)

    @property
    def query_span(self) -> tuple:
        return (0, self.n_query)

    @property
    def context_span(self) -> tuple:
        return (self.n_query + 1, self.ct_start)

    @property
    def compression_span(self) -> tuple:
        return (self.ct_start, self.ct_start + self.k)


@dataclass
class CompressedMemory:
    k: int
    kv: list                     # per layer: (K, V) tensors of shape (H, k, head_dim)
    predicted_l_rel: float       # filled by the allocation controller
    source_total_tokens: int     # chunk content tokens, for compression-ratio accounting

    def detached(self) -> "CompressedMemory":
        kv = [(Tensor(k.data), Tensor(v.data)) for k, v in self.kv]
        return CompressedMemory(self.k, kv, self.predicted_l_rel, self.source_total_tokens)


def build_encoder_prefix(vocab: Vocab, example: SynthExample) -> EncoderInput:
    """Encoder input without the compression slots (k=0 placeholder)."""
    query_ids = encode_text(vocab, example.query)
    context_ids = encode_text(vocab, example.tagged_context())
    ids = query_ids + [vocab.sep_id] + context_ids
    return EncoderInput(
        ids=np.asarray(ids, dtype=np.int64),
        n_query=len(query_ids),
        ct_start=len(ids),
        k=0,
        content_tokens=example.context_tokens,
    )


def build_encoder_input(vocab: Vocab, example: SynthExample, k: int) -> EncoderInput:
    if not 1 <= k <= vocab.k_max:
        raise ContractError(f"k={k} outside [1, k_max={vocab.k_max}]")
    prefix = build_encoder_prefix(vocab, example)
    ids = np.concatenate([prefix.ids, np.asarray(vocab.ct_ids[:k], dtype=np.int64)])
    return EncoderInput(
        ids=ids,
        n_query=prefix.n_query,
        ct_start=prefix.ct_start,
        k=k,
        content_tokens=prefix.content_tokens,
    )


def _ct_embeddings(params: ParamSet, config: ModelConfig, start: int, k: int) -> Tensor:
    if start + k > config.max_positions:
        raise CapacityError(
            f"compression span [{start}, {start + k}) exceeds max_positions={config.max_positions}"
        )
    ct_rows = params.tensor("ct", "ct")[:k]
    pos = params.tensor("base", "pos_emb")[start : start + k]
    return ct_rows + pos


def _embed_encoder(params: ParamSet, config: ModelConfig, enc: EncoderInput) -> Tensor:
    """Token+position embeddings with CT positions routed to the ct table."""
    if enc.k == 0:
        return embed_ids(params, config, enc.ids)
    prefix = embed_ids(params, config, enc.ids[: enc.ct_start])
    return ad.concat([prefix, _ct_embeddings(params, config, enc.ct_start, enc.k)], axis=0)


def compress(params: ParamSet, config: ModelConfig, enc: EncoderInput):
    """Run the encoder (adapters on) and export the compression positions' KV.

    Returns ``(CompressedMemory, H_input)`` where ``H_input`` is the
    final-layer hidden states over the non-compression span, the probe's
    input.
    """
    if enc.k < 1:
        raise ContractError("encoder input was built without compression slots")
    x = _embed_encoder(params, config, enc)
    out = forward_embedded(params, config, x, use_adapters=True)
    lo, hi = enc.compression_span
    kv = [(k[:, lo:hi, :], v[:, lo:hi, :]) for k, v in out.kv]
    memory = CompressedMemory(
        k=enc.k, kv=kv, predicted_l_rel=0.0, source_total_tokens=enc.content_tokens
    )
    h_input = out.hidden[:lo]
    return memory, h_input


def encode_prefix(params: ParamSet, config: ModelConfig, enc_prefix: EncoderInput):
    """Phase one of inference-order compression: read query+context only."""
    x = _embed_encoder(params, config, enc_prefix)
    return forward_embedded(params, config, x, use_adapters=True)


def extend_with_slots(params: ParamSet, config: ModelConfig, prefix_out, ct_start: int, k: int):
    """Phase two: continue the same pass with k compression slots, reusing KV."""
    if k < 1:
        raise ContractError(f"k={k} must be >= 1")
    out = forward_embedded(
        params,
        config,
        _ct_embeddings(params, config, ct_start, k),
        prefix_kv=prefix_out.kv,
        use_adapters=True,
    )
    return out.kv


def compress_two_phase(params: ParamSet, config: ModelConfig, enc_prefix: EncoderInput, k: int):
    """Inference-order compression with a fixed k.

    Produces the same memory as :func:`compress` on the equivalent single
    input: the compression slots only ever attend backwards, so splitting the
    pass cannot change their keys/values.
    """
    phase1 = encode_prefix(params, config, enc_prefix)
    kv = extend_with_slots(params, config, phase1, enc_prefix.ct_start, k)
    memory = CompressedMemory(
        k=k, kv=kv, predicted_l_rel=0.0, source_total_tokens=enc_prefix.content_tokens
    )
    return memory, phase1.hidden
