"""Synthetic chunked-QA corpora with known relevant chunks and gold lengths.

Each example is a templated fact-lookup task: the context is a shuffled list
of chunks (sentences, passages, or documents), a known subset of which is
relevant to the query. Facts follow the fixed pattern ``entity E attr A is
V`` padded with filler words so that gold relevant lengths vary widely.
Two-hop examples chain ``E --A1--> B`` and ``B --A2--> V`` across two
relevant chunks.

Everything is a pure function of ``(config, index)``; splits are the index
range 0..n-1 and serialize to line-delimited JSON with a sidecar manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, GenerationError
from .runs import format_kv, rng_for
from .vocab import Vocab, build_vocab, SEP, TAG_OPEN, TAG_CLOSE

GRANULARITIES = ("sentence", "passage", "document")

TEMPLATE_WORDS = ("entity", "attr", "is", "what", "of")

FACT_LEN = 6  # "entity E attr A is V"


@dataclass(frozen=True)
class SynthConfig:
    granularity: str = "sentence"
    n_chunks: int = 10
    hops: int = 1
    n_relevant: int = 1
    n_entities: int = 40
    n_attributes: int = 12
    n_values: int = 120
    n_filler: int = 24
    filler_range: tuple = (0, 25)
    sentences_per_passage: tuple = (1, 1)
    passages_per_document: tuple = (1, 1)
    seed: int = 0
    input_cap: int = 600

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ConfigurationError(f"unknown granularity {self.granularity!r}")
        if self.hops not in (1, 2):
            raise ConfigurationError(f"hops must be 1 or 2, got {self.hops}")
        if self.n_relevant < 1:
            raise ConfigurationError("n_relevant must be >= 1")
        if self.hops == 2 and self.n_relevant < 2:
            raise ConfigurationError("hops=2 requires n_relevant >= 2")
        if self.n_chunks < self.n_relevant:
            raise ConfigurationError("n_chunks must be >= n_relevant")
        if self.n_entities < 4 or self.n_values < 2 or self.n_filler < 1:
            raise ConfigurationError("alphabets too small: need >=4 entities, >=2 values, >=1 filler")
        if self.n_attributes < self.n_relevant + (1 if self.hops == 2 else 0):
            raise ConfigurationError("n_attributes too small for the requested relevant chunks")
        for name, rng_pair in (
            ("filler_range", self.filler_range),
            ("sentences_per_passage", self.sentences_per_passage),
            ("passages_per_document", self.passages_per_document),
        ):
            lo, hi = rng_pair
            if lo > hi or lo < 0 or (name != "filler_range" and lo < 1):
                raise ConfigurationError(f"invalid {name}={rng_pair}")
        if max_total_tokens(self) > self.input_cap:
            raise GenerationError(
                f"token budget {self.input_cap} unreachable: worst case is "
                f"{max_total_tokens(self)} tokens with n_chunks={self.n_chunks}"
            )


def preset(granularity: str, **overrides) -> SynthConfig:
    """Granularity presets sized to fit the input cap with varied gold lengths."""
    base = {
        "sentence": dict(granularity="sentence", n_chunks=10, filler_range=(0, 25)),
        "passage": dict(
            granularity="passage", n_chunks=6, filler_range=(0, 10), sentences_per_passage=(2, 4)
        ),
        "document": dict(
            granularity="document",
            n_chunks=4,
            filler_range=(0, 8),
            sentences_per_passage=(2, 3),
            passages_per_document=(1, 2),
        ),
    }
    if granularity not in base:
        raise ConfigurationError(f"unknown granularity {granularity!r}")
    params = dict(base[granularity])
    params.update(overrides)
    return SynthConfig(**params)


def sentences_per_chunk(config: SynthConfig) -> tuple:
    """Min/max sentences in one chunk at the configured granularity."""
    if config.granularity == "sentence":
        return (1, 1)
    spp_lo, spp_hi = config.sentences_per_passage
    if config.granularity == "passage":
        return (spp_lo, spp_hi)
    ppd_lo, ppd_hi = config.passages_per_document
    return (ppd_lo * spp_lo, ppd_hi * spp_hi)


def max_total_tokens(config: SynthConfig) -> int:
    """Worst-case encoder input length (query + [SEP] + tagged chunks)."""
    query_len = 7 if config.hops == 1 else 11
    _, s_hi = sentences_per_chunk(config)
    max_sentence = FACT_LEN + config.filler_range[1]
    return query_len + 1 + config.n_chunks * (2 + s_hi * max_sentence)


@dataclass
class Chunk:
    text: str
    relevant: bool


@dataclass
class SynthExample:
    id: str
    query: str
    chunks: list
    granularity: str
    answer: str
    c_rel: str
    l_rel: int
    total_tokens: int

    @property
    def context_tokens(self) -> int:
        """Chunk content tokens only: no tags, no query."""
        return sum(len(c.text.split()) for c in self.chunks)

    def tagged_context(self) -> str:
        return " ".join(f"{TAG_OPEN} {c.text} {TAG_CLOSE}" for c in self.chunks)

    def encoder_text(self) -> str:
        return f"{self.query} {SEP} {self.tagged_context()}"

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "SynthExample":
        d = json.loads(line)
        d["chunks"] = [Chunk(**c) for c in d["chunks"]]
        return cls(**d)


def corpus_words(config: SynthConfig) -> list:
    """Every word the generator can emit, in a fixed deterministic order."""
    words = list(TEMPLATE_WORDS)
    words += [f"e{i}" for i in range(config.n_entities)]
    words += [f"a{i}" for i in range(config.n_attributes)]
    words += [f"v{i}" for i in range(config.n_values)]
    words += [f"f{i}" for i in range(config.n_filler)]
    return words


def vocab_for_config(config: SynthConfig, k_max: int) -> Vocab:
    return build_vocab(corpus_words(config), k_max=k_max)


def _fact(entity: str, attr: str, value: str) -> list:
    return ["entity", entity, "attr", attr, "is", value]


def _sentence(rng, config: SynthConfig, entity: str, attr: str, value: str) -> list:
    lo, hi = config.filler_range
    n_fill = int(rng.integers(lo, hi + 1))
    filler = [f"f{int(i)}" for i in rng.integers(0, config.n_filler, size=n_fill)]
    return _fact(entity, attr, value) + filler


def _background_sentence(rng, config: SynthConfig, avoid_entities, avoid_values) -> list:
    """A fact about some unprotected entity with an unprotected value."""
    while True:
        e = f"e{int(rng.integers(0, config.n_entities))}"
        if e not in avoid_entities:
            break
    while True:
        v = f"v{int(rng.integers(0, config.n_values))}"
        if v not in avoid_values:
            break
    a = f"a{int(rng.integers(0, config.n_attributes))}"
    return _sentence(rng, config, e, a, v)


def _chunk_sentences(rng, config: SynthConfig) -> int:
    lo, hi = sentences_per_chunk(config)
    return int(rng.integers(lo, hi + 1))


def _build_chunk(rng, config, n_sent, designated, avoid_entities, avoid_values) -> str:
    """Assemble a chunk of n_sent sentences with the designated facts placed at
    random positions and background facts everywhere else."""
    n_sent = max(n_sent, len(designated))
    slots = sorted(rng.choice(n_sent, size=len(designated), replace=False).tolist())
    sentences = []
    di = 0
    for s in range(n_sent):
        if di < len(designated) and s == slots[di]:
            e, a, v = designated[di]
            sentences.append(_sentence(rng, config, e, a, v))
            di += 1
        else:
            sentences.append(_background_sentence(rng, config, avoid_entities, avoid_values))
    return " ".join(" ".join(s) for s in sentences)


def generate_example(config: SynthConfig, index: int) -> SynthExample:
    """Deterministic in (config.seed, index)."""
    rng = rng_for(config.seed, f"example/{index}")

    entity = f"e{int(rng.integers(0, config.n_entities))}"
    attrs = rng.choice(config.n_attributes, size=config.n_attributes, replace=False)
    answer = f"v{int(rng.integers(0, config.n_values))}"

    relevant_chunks = []
    if config.hops == 1:
        query_words = ["what", "is", "attr", f"a{int(attrs[0])}", "of", "entity", entity]
        avoid_entities = {entity}
        avoid_values = {answer}
        designated_per_chunk = [[(entity, f"a{int(attrs[0])}", answer)]]
        for extra in range(1, config.n_relevant):
            v_extra = answer
            while v_extra == answer:
                v_extra = f"v{int(rng.integers(0, config.n_values))}"
            designated_per_chunk.append([(entity, f"a{int(attrs[extra])}", v_extra)])
    else:
        bridge = entity
        while bridge == entity:
            bridge = f"e{int(rng.integers(0, config.n_entities))}"
        a1, a2 = f"a{int(attrs[0])}", f"a{int(attrs[1])}"
        query_words = ["what", "is", "attr", a2, "of", "attr", a1, "of", "entity", entity]
        avoid_entities = {entity, bridge}
        avoid_values = {answer}
        designated_per_chunk = [[(entity, a1, bridge)], [(bridge, a2, answer)]]
        for extra in range(2, config.n_relevant):
            v_extra = answer
            while v_extra == answer:
                v_extra = f"v{int(rng.integers(0, config.n_values))}"
            designated_per_chunk.append([(entity, f"a{int(attrs[extra])}", v_extra)])

    for designated in designated_per_chunk:
        n_sent = _chunk_sentences(rng, config)
        text = _build_chunk(rng, config, n_sent, designated, avoid_entities, avoid_values)
        relevant_chunks.append(Chunk(text=text, relevant=True))

    distractors = []
    for _ in range(config.n_chunks - config.n_relevant):
        n_sent = _chunk_sentences(rng, config)
        text = _build_chunk(rng, config, n_sent, [], avoid_entities, avoid_values)
        distractors.append(Chunk(text=text, relevant=False))

    chunks = relevant_chunks + distractors
    order = rng.permutation(len(chunks))
    chunks = [chunks[int(i)] for i in order]

    query = " ".join(query_words)
    c_rel = " ".join(c.text for c in chunks if c.relevant)
    l_rel = len(c_rel.split())
    total = len(query_words) + 1 + sum(len(c.text.split()) + 2 for c in chunks)
    if total > config.input_cap:
        raise GenerationError(f"example {index} exceeds the input cap: {total} > {config.input_cap}")

    return SynthExample(
        id=f"{config.granularity}-{config.seed}-{index}",
        query=query,
        chunks=chunks,
        granularity=config.granularity,
        answer=answer,
        c_rel=c_rel,
        l_rel=l_rel,
        total_tokens=total,
    )


def generate_split(config: SynthConfig, n: int) -> list:
    if n < 1:
        raise GenerationError(f"split size must be >= 1, got {n}")
    return [generate_example(config, i) for i in range(n)]


def write_dataset(examples: Sequence[SynthExample], path, config: SynthConfig | None = None) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(ex.to_json())
            fh.write("\n")
    if config is not None:
        manifest = {"n": len(examples), "format_version": 1}
        for key, value in asdict(config).items():
            manifest[f"config.{key}"] = value
        sidecar = path.with_name(path.name + ".manifest.txt")
        sidecar.write_text(format_kv(manifest), encoding="utf-8")


def read_dataset(path) -> list:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(SynthExample.from_json(line))
    return out
