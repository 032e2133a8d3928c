"""Decoder-side computation: losses over injected memory, greedy decoding.

The decoder consumes :class:`~ctxpress.compressor.CompressedMemory` as a
prefilled attention prefix occupying positions ``0..k-1``; its own tokens
start at position ``k``. Reconstruction is triggered by [BOS]; answering is
conditioned on the query tokens directly after the memory. Teacher-forcing
targets always end with [EOS].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .compressor import (
    CompressedMemory,
    build_encoder_input,
    build_encoder_prefix,
    compress,
    encode_prefix,
    extend_with_slots,
)
from .controller import AllocationPolicy, allocate, probe_predict
from .data import SynthExample
from .errors import ContractError
from .model import KVCache, ModelConfig, ParamSet, forward
from .vocab import Vocab, encode_text


@dataclass
class ModelBundle:
    """Everything needed to run the compressor end to end."""

    config: ModelConfig
    params: ParamSet
    vocab: Vocab
    stage: str = "init"
    variant: str = "full"

    @property
    def selective(self) -> bool:
        return self.variant != "no_selective"


def reconstruction_target(bundle: ModelBundle, example: SynthExample) -> tuple:
    """(target text, gold length) for pretraining under the bundle's variant.

    Selective bundles reconstruct the relevant chunks; the no_selective
    ablation reconstructs the whole chunked context and uses its total
    content length as the probe target.
    """
    if bundle.selective:
        return example.c_rel, example.l_rel
    full = " ".join(c.text for c in example.chunks)
    return full, example.context_tokens


def compress_example(
    bundle: ModelBundle,
    example: SynthExample,
    policy: AllocationPolicy,
    *,
    allocation_from: str = "gold",
    fixed_k: int | None = None,
):
    """Compress one example; returns (memory, h_input, l_hat tensor, k).

    ``allocation_from='gold'`` sizes the budget from the gold length (the
    training default); ``'probe'`` uses the live probe estimate, which is the
    inference path. ``fixed_k`` bypasses the policy entirely (the no_aac
    ablation).
    """
    _, gold_len = reconstruction_target(bundle, example)
    if allocation_from not in ("gold", "probe"):
        raise ContractError(f"allocation_from must be 'gold' or 'probe', got {allocation_from!r}")
    if fixed_k is not None:
        k = int(fixed_k)
    elif allocation_from == "gold":
        k = allocate(policy, gold_len)
    else:
        k = None

    if k is not None:
        enc = build_encoder_input(bundle.vocab, example, k)
        memory, h_input = compress(bundle.params, bundle.config, enc)
        l_hat = probe_predict(bundle.params, bundle.config, h_input)
    else:
        # probe first, then extend the same encoder pass with the allocated slots
        prefix = build_encoder_prefix(bundle.vocab, example)
        phase1 = encode_prefix(bundle.params, bundle.config, prefix)
        h_input = phase1.hidden
        l_hat = probe_predict(bundle.params, bundle.config, h_input)
        k = allocate(policy, float(l_hat.data))
        kv = extend_with_slots(bundle.params, bundle.config, phase1, prefix.ct_start, k)
        memory = CompressedMemory(
            k=k, kv=kv, predicted_l_rel=0.0, source_total_tokens=prefix.content_tokens
        )
    memory.predicted_l_rel = float(l_hat.data)
    return memory, h_input, l_hat, k


@dataclass
class PretrainResult:
    loss: Tensor
    l_phi: float
    l_zeta: float
    l_total: float
    k: int
    l_hat: float
    memory: CompressedMemory


def pretrain_losses(
    bundle: ModelBundle,
    example: SynthExample,
    policy: AllocationPolicy,
    lam: float,
    delta: float,
    *,
    allocation_from: str = "gold",
) -> PretrainResult:
    """Reconstruction loss + weighted probe loss for one example."""
    target_text, gold_len = reconstruction_target(bundle, example)
    target_ids = encode_text(bundle.vocab, target_text)
    if not target_ids:
        raise ContractError(f"example {example.id} has an empty reconstruction target")

    memory, _, l_hat, k = compress_example(
        bundle, example, policy, allocation_from=allocation_from
    )
    vocab = bundle.vocab
    dec_input = np.asarray([vocab.bos_id] + target_ids, dtype=np.int64)
    targets = np.asarray(target_ids + [vocab.eos_id], dtype=np.int64)
    out = forward(bundle.params, bundle.config, dec_input, start_pos=k, prefix_kv=memory.kv)
    l_phi_t = ad.cross_entropy_mean(out.logits, targets)
    l_zeta_t = ad.huber_loss(l_hat, float(gold_len), delta)
    loss = l_phi_t + ad.mul(l_zeta_t, float(lam))

    l_phi = float(l_phi_t.data)
    l_zeta = float(l_zeta_t.data)
    return PretrainResult(
        loss=loss,
        l_phi=l_phi,
        l_zeta=l_zeta,
        l_total=l_phi + lam * l_zeta,
        k=k,
        l_hat=float(l_hat.data),
        memory=memory,
    )


@dataclass
class FinetuneResult:
    loss: Tensor
    l_f: float
    k: int
    l_hat: float
    memory: CompressedMemory


def finetune_loss(
    bundle: ModelBundle,
    example: SynthExample,
    policy: AllocationPolicy,
    *,
    allocation_from: str = "gold",
) -> FinetuneResult:
    """Answer cross-entropy over memory + query + teacher-forced answer prefix."""
    vocab = bundle.vocab
    query_ids = encode_text(vocab, example.query)
    answer_ids = encode_text(vocab, example.answer)
    if not answer_ids:
        raise ContractError(f"example {example.id} has an empty answer")
    if not query_ids:
        raise ContractError(f"example {example.id} has an empty query")

    memory, _, l_hat, k = compress_example(
        bundle, example, policy, allocation_from=allocation_from
    )
    m = len(query_ids)
    dec_input = np.asarray(query_ids + answer_ids, dtype=np.int64)
    targets = np.asarray(answer_ids + [vocab.eos_id], dtype=np.int64)
    out = forward(bundle.params, bundle.config, dec_input, start_pos=k, prefix_kv=memory.kv)
    logits = out.logits[m - 1 : m + len(answer_ids)]
    loss = ad.cross_entropy_mean(logits, targets)
    return FinetuneResult(
        loss=loss, l_f=float(loss.data), k=k, l_hat=float(l_hat.data), memory=memory
    )


def _greedy(params: ParamSet, config: ModelConfig, memory, prompt_ids, max_gen_len: int, eos_id: int):
    """Greedy argmax decoding; ties resolve to the lowest token id."""
    with ad.no_grad():
        cache = KVCache(config.n_layers)
        if memory is not None and memory.k > 0:
            cache.extend(memory.kv, np.arange(memory.k))
        out_ids = []
        cur = np.asarray(prompt_ids, dtype=np.int64)
        while len(out_ids) < max_gen_len:
            start = cache.next_position
            fwd = forward(params, config, cur, start_pos=start, prefix_kv=cache.prefix_tensors())
            cache.extend(fwd.kv, np.arange(start, start + cur.size))
            nxt = int(np.argmax(fwd.logits.data[-1]))
            if nxt == eos_id:
                break
            out_ids.append(nxt)
            cur = np.asarray([nxt], dtype=np.int64)
        return out_ids


def regenerate(bundle: ModelBundle, memory: CompressedMemory, max_gen_len: int):
    """Reconstruct the compressed content from [BOS], greedily."""
    return _greedy(
        bundle.params, bundle.config, memory, [bundle.vocab.bos_id], max_gen_len, bundle.vocab.eos_id
    )


def answer_greedy(bundle: ModelBundle, memory: CompressedMemory, query_ids, max_gen_len: int):
    """Generate an answer conditioned on memory and the query tokens."""
    query_ids = list(query_ids)
    if not query_ids:
        raise ContractError("answer generation requires a non-empty query")
    return _greedy(bundle.params, bundle.config, memory, query_ids, max_gen_len, bundle.vocab.eos_id)


def answer_full_context(bundle: ModelBundle, example: SynthExample, max_gen_len: int):
    """Reference path: the frozen decoder reads the raw tagged context."""
    vocab = bundle.vocab
    prompt = encode_text(vocab, example.tagged_context()) + encode_text(vocab, example.query)
    return _greedy(bundle.params, bundle.config, None, prompt, max_gen_len, vocab.eos_id)
