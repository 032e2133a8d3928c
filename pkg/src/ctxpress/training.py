"""Three-stage training driver and checkpointing.

Stages:

* ``base_lm``  — train every base weight on next-token prediction over the
                 synthetic corpus (plain tagged text and context+query+answer
                 sequences), producing the frozen backbone.
* ``pretrain`` — freeze the base; train adapters, compression-token
                 embeddings, and the probe on reconstruction + weighted probe
                 loss, sampling the policy ratio per batch.
* ``finetune`` — freeze the base and the probe; train adapters and slot
                 embeddings on the answer loss with a fixed policy ratio.

Batches are assembled per example and gradients accumulated in a fixed order,
so a run is a pure function of its seed. Checkpoints are directories holding
a flat manifest, a shape index, and one raw little-endian float32 blob per
parameter group.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .controller import AllocationPolicy
from .data import SynthExample
from .errors import CheckpointError, ConfigurationError, StagingError
from .model import GROUPS, ModelConfig, ParamSet, forward, init_params, zero_grads
from .pipeline import ModelBundle, finetune_loss, pretrain_losses
from .runs import FORMAT_VERSION, format_kv, parse_kv, rng_for
from .vocab import Vocab, encode_text, save_vocab
import hashlib

STAGES = ("base_lm", "pretrain", "finetune")

TRAINABLE_BY_STAGE = {
    "base_lm": ("base",),
    "pretrain": ("adapters", "ct", "probe"),
    "finetune": ("adapters", "ct"),
}


@dataclass(frozen=True)
class TrainConfig:
    stage: str
    steps: int = 200
    batch_size: int = 8
    lr: float = 0.3
    momentum: float = 0.9
    clip_norm: float = 1.0
    seed: int = 0
    lam: float = 1e-4
    delta: float = 10.0
    r_choices: tuple = (1.0, 5.0, 10.0, 20.0, 50.0)
    r_fixed: float = 10.0
    k_max: int = 8
    k_min: int = 1
    allocation_from: str = "gold"
    variant: str = "full"
    checkpoint_cadence: int = 0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigurationError(f"unknown stage {self.stage!r}")
        if self.variant not in ("full", "no_selective"):
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigurationError("steps and batch_size must be >= 1")
        if any(r <= 0 for r in self.r_choices) or self.r_fixed <= 0:
            raise ConfigurationError("policy ratios must be > 0")


def vocab_fingerprint(vocab: Vocab) -> str:
    joined = "\n".join(vocab.id_to_token[i] for i in range(len(vocab)))
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


def policy_ratio_stream(seed: int, r_choices):
    """Per-batch policy-ratio draws, one uniform choice per training step."""
    rng = rng_for(seed, "batch_r")
    choices = np.asarray(r_choices, dtype=np.float64)
    while True:
        yield float(choices[int(rng.integers(0, len(choices)))])


def base_lm_corpus(vocab: Vocab, examples) -> list:
    """Token sequences for the backbone stage.

    Two per example: ``[BOS] tagged-context [EOS]`` for plain language
    statistics (and the [BOS]-starts-text convention reconstruction relies
    on), and ``tagged-context query answer [EOS]`` so the frozen decoder can
    answer from a raw context, which the evaluation's full-context reference
    path requires.
    """
    corpus = []
    for ex in examples:
        ctx = encode_text(vocab, ex.tagged_context())
        lm_seq = [vocab.bos_id] + ctx + [vocab.eos_id]
        qa_seq = ctx + encode_text(vocab, ex.query) + encode_text(vocab, ex.answer) + [vocab.eos_id]
        corpus.append(np.asarray(lm_seq, dtype=np.int64))
        corpus.append(np.asarray(qa_seq, dtype=np.int64))
    return corpus


def _batch_indices(seed: int, n: int, batch_size: int, steps: int):
    """Deterministic epoch-shuffled index batches."""
    rng = rng_for(seed, "batches")
    order = []
    while len(order) < steps * batch_size:
        order.extend(rng.permutation(n).tolist())
    for s in range(steps):
        yield order[s * batch_size : (s + 1) * batch_size]


class _Momentum:
    def __init__(self, lr: float, momentum: float, clip_norm: float):
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = {}

    def step(self, params: ParamSet, batch_size: int) -> float:
        names, grads = [], []
        for name, t in params.trainable_named():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            names.append(name)
            grads.append(g / batch_size)
        gnorm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
        scale = 1.0 if gnorm <= self.clip_norm else self.clip_norm / (gnorm + 1e-12)
        for name, g in zip(names, grads):
            t = _by_name(params, name)
            v = self.velocity.get(name)
            v = g * scale if v is None else self.momentum * v + g * scale
            self.velocity[name] = v
            t.data = t.data - (self.lr * v).astype(t.data.dtype)
        zero_grads(params)
        return gnorm


def _by_name(params: ParamSet, full_name: str):
    group, name = full_name.split(".", 1)
    return params.groups[group][name]


def run_stage(
    config: TrainConfig,
    model_config: ModelConfig,
    vocab: Vocab,
    datasets,
    init_bundle: ModelBundle | None = None,
    checkpoint_hook=None,
) -> tuple:
    """Train one stage; returns (bundle, trace).

    ``datasets`` is a list of example lists (one per granularity or source);
    they are pooled and shuffled uniformly, so equal sizes give an equal
    mixture. ``trace`` has one dict per step.
    """
    examples = [ex for ds in datasets for ex in ds]
    if not examples:
        raise ConfigurationError("no training examples given")

    if config.stage == "base_lm":
        if init_bundle is not None:
            raise StagingError("base_lm starts from scratch; do not pass an init checkpoint")
        params = init_params(model_config, config.seed, trainable=TRAINABLE_BY_STAGE["base_lm"])
        bundle = ModelBundle(config=model_config, params=params, vocab=vocab,
                             stage="base_lm", variant="full")
    else:
        required_parent = {"pretrain": "base_lm", "finetune": "pretrain"}[config.stage]
        if init_bundle is None:
            raise StagingError(f"stage {config.stage} requires a {required_parent} checkpoint")
        if init_bundle.stage != required_parent:
            raise StagingError(
                f"stage {config.stage} requires a {required_parent} checkpoint, "
                f"got {init_bundle.stage}"
            )
        if config.stage == "finetune" and init_bundle.variant != config.variant:
            raise StagingError(
                f"finetune variant {config.variant!r} does not match the pretrained "
                f"bundle's variant {init_bundle.variant!r}"
            )
        params = init_bundle.params
        params.set_trainable(TRAINABLE_BY_STAGE[config.stage])
        bundle = ModelBundle(config=init_bundle.config, params=params, vocab=vocab,
                             stage=config.stage, variant=config.variant)

    opt = _Momentum(config.lr, config.momentum, config.clip_norm)
    trace = []

    if config.stage == "base_lm":
        corpus = base_lm_corpus(vocab, examples)
        batches = _batch_indices(config.seed, len(corpus), config.batch_size, config.steps)
        for step, batch in enumerate(batches, start=1):
            total = 0.0
            for idx in batch:
                seq = corpus[idx]
                out = forward(params, bundle.config, seq[:-1])
                loss = ad.cross_entropy_mean(out.logits, seq[1:])
                loss.backward()
                total += float(loss.data)
            gnorm = opt.step(params, len(batch))
            trace.append({"step": step, "loss": total / len(batch), "grad_norm": gnorm})
            if checkpoint_hook and config.checkpoint_cadence and step % config.checkpoint_cadence == 0:
                checkpoint_hook(step, bundle)
        return bundle, trace

    r_stream = policy_ratio_stream(config.seed, config.r_choices)
    batches = _batch_indices(config.seed, len(examples), config.batch_size, config.steps)
    for step, batch in enumerate(batches, start=1):
        if config.stage == "pretrain":
            r = next(r_stream)
        else:
            r = config.r_fixed
        policy = AllocationPolicy(r=r, k_max=config.k_max, k_min=config.k_min)
        totals = {"l_total": 0.0, "l_phi": 0.0, "l_zeta": 0.0, "k": 0.0}
        for idx in batch:
            ex = examples[idx]
            if config.stage == "pretrain":
                res = pretrain_losses(bundle, ex, policy, config.lam, config.delta,
                                      allocation_from=config.allocation_from)
                totals["l_total"] += res.l_total
                totals["l_phi"] += res.l_phi
                totals["l_zeta"] += res.l_zeta
            else:
                res = finetune_loss(bundle, ex, policy, allocation_from=config.allocation_from)
                totals["l_total"] += res.l_f
                totals["l_phi"] += res.l_f
            totals["k"] += res.k
            res.loss.backward()
        gnorm = opt.step(params, len(batch))
        n = len(batch)
        trace.append(
            {
                "step": step,
                "l_total": totals["l_total"] / n,
                "l_phi": totals["l_phi"] / n,
                "l_zeta": totals["l_zeta"] / n,
                "r": r,
                "k_mean": totals["k"] / n,
                "grad_norm": gnorm,
            }
        )
        if checkpoint_hook and config.checkpoint_cadence and step % config.checkpoint_cadence == 0:
            checkpoint_hook(step, bundle)
    return bundle, trace


def write_trace(trace, path) -> None:
    if not trace:
        return
    keys = list(trace[0].keys())
    lines = [",".join(keys)]
    for row in trace:
        lines.append(",".join(_fmt(row[k]) for k in keys))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.8f}"
    return str(value)


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(
    bundle: ModelBundle,
    path,
    *,
    seed: int = 0,
    parent_id: str = "",
    train_config: TrainConfig | None = None,
) -> str:
    """Write a checkpoint directory; returns its content id."""
    if bundle.config.dtype != "f32":
        raise CheckpointError("checkpoints are float32; re-build the model with dtype='f32'")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    shapes = {}
    digest = hashlib.sha256()
    for group in GROUPS:
        blob = bytearray()
        entries = []
        for name, t in bundle.params.named(group):
            arr = np.ascontiguousarray(t.data, dtype="<f4")
            entries.append([name.split(".", 1)[1], list(arr.shape)])
            blob.extend(arr.tobytes())
        (path / f"{group}.bin").write_bytes(bytes(blob))
        digest.update(group.encode())
        digest.update(bytes(blob))
        shapes[group] = entries
    (path / "shapes.json").write_text(json.dumps(shapes), encoding="utf-8")

    checkpoint_id = digest.hexdigest()
    manifest = {
        "format_version": FORMAT_VERSION,
        "stage": bundle.stage,
        "variant": bundle.variant,
        "seed": seed,
        "parent": parent_id,
        "checkpoint_id": checkpoint_id,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "loss_reduction": "mean",
        "vocab_fingerprint": vocab_fingerprint(bundle.vocab),
    }
    for key, value in asdict(bundle.config).items():
        manifest[f"config.{key}"] = value
    if train_config is not None:
        for key, value in asdict(train_config).items():
            manifest[f"train.{key}"] = value
    (path / "manifest.txt").write_text(format_kv(manifest), encoding="utf-8")
    save_vocab(bundle.vocab, path / "vocab.txt")
    return checkpoint_id


def load_checkpoint(path, vocab: Vocab | None = None) -> tuple:
    """Read a checkpoint directory; returns (bundle, manifest dict)."""
    path = Path(path)
    manifest_path = path / "manifest.txt"
    if not manifest_path.exists():
        raise CheckpointError(f"{path} is not a checkpoint: missing manifest.txt")
    manifest = parse_kv(manifest_path.read_text(encoding="utf-8"))
    if int(manifest.get("format_version", -1)) != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {manifest.get('format_version')!r} "
            f"is not supported (expected {FORMAT_VERSION})"
        )

    if vocab is None:
        from .vocab import load_vocab

        vocab = load_vocab(path / "vocab.txt")
    if manifest.get("vocab_fingerprint") != vocab_fingerprint(vocab):
        raise CheckpointError("vocabulary does not match the one the checkpoint was trained with")

    kwargs = {}
    for field_name, field_type in (
        ("vocab_size", int), ("n_layers", int), ("n_heads", int), ("d_model", int),
        ("d_ff", int), ("max_positions", int), ("adapter_rank", int),
        ("n_probe_layers", int), ("probe_hidden", int), ("k_max", int), ("dtype", str),
    ):
        key = f"config.{field_name}"
        if key not in manifest:
            raise CheckpointError(f"manifest is missing {key}")
        kwargs[field_name] = field_type(manifest[key])
    config = ModelConfig(**kwargs)

    try:
        shapes = json.loads((path / "shapes.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read shape index: {exc}") from exc

    params = init_params(config, seed=0)
    for group in GROUPS:
        blob_path = path / f"{group}.bin"
        if not blob_path.exists():
            raise CheckpointError(f"missing parameter blob {blob_path.name}")
        blob = blob_path.read_bytes()
        offset = 0
        loaded = set()
        for name, shape in shapes.get(group, []):
            if name not in params.groups[group]:
                raise CheckpointError(f"unexpected parameter {group}.{name} in checkpoint")
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            nbytes = count * 4
            if offset + nbytes > len(blob):
                raise CheckpointError(f"{group}.bin is truncated at parameter {name}")
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
            if tuple(params.groups[group][name].data.shape) != tuple(shape):
                raise CheckpointError(
                    f"shape mismatch for {group}.{name}: checkpoint {shape}, "
                    f"model {params.groups[group][name].data.shape}"
                )
            params.groups[group][name].data = arr.astype(np.float32).copy()
            loaded.add(name)
            offset += nbytes
        if offset != len(blob):
            raise CheckpointError(f"{group}.bin has {len(blob) - offset} trailing bytes")
        missing = set(params.groups[group]) - loaded
        if missing:
            raise CheckpointError(f"checkpoint is missing parameters {sorted(missing)} in {group}")

    stage = manifest.get("stage", "")
    variant = manifest.get("variant", "full")
    bundle = ModelBundle(config=config, params=params, vocab=vocab, stage=stage, variant=variant)
    return bundle, manifest
