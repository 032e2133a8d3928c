"""Deterministic word-level tokenizer over a closed synthetic vocabulary.

Text is whitespace-tokenized; every content word and every special token maps
to a dense integer id. Specials come first, in a fixed order, so a vocabulary
file is reproducible byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigurationError, DecodingError

PAD = "[PAD]"
UNK = "[UNK]"
BOS = "[BOS]"
EOS = "[EOS]"
SEP = "[SEP]"
TAG_OPEN = "<PA>"
TAG_CLOSE = "</PA>"

NAMED_SPECIALS = (PAD, UNK, BOS, EOS, SEP, TAG_OPEN, TAG_CLOSE)


def ct_token(i: int) -> str:
    """Name of the i-th (1-based) compression-token placeholder."""
    return f"CT_{i}"


@dataclass(frozen=True)
class Vocab:
    """Immutable token<->id mapping with named special tokens."""

    token_to_id: dict
    id_to_token: dict
    k_max: int
    specials: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.token_to_id)

    @property
    def pad_id(self) -> int:
        return self.specials[PAD]

    @property
    def unk_id(self) -> int:
        return self.specials[UNK]

    @property
    def bos_id(self) -> int:
        return self.specials[BOS]

    @property
    def eos_id(self) -> int:
        return self.specials[EOS]

    @property
    def sep_id(self) -> int:
        return self.specials[SEP]

    @property
    def tag_open_id(self) -> int:
        return self.specials[TAG_OPEN]

    @property
    def tag_close_id(self) -> int:
        return self.specials[TAG_CLOSE]

    def ct_id(self, i: int) -> int:
        return self.specials[ct_token(i)]

    @property
    def ct_ids(self) -> list:
        return [self.ct_id(i) for i in range(1, self.k_max + 1)]


def build_vocab(corpus_words: Sequence[str], k_max: int) -> Vocab:
    """Build a vocabulary from content words plus the reserved specials.

    Content words keep first-occurrence order, so the same corpus always
    yields the same id assignment.
    """
    if k_max < 1:
        raise ConfigurationError(f"k_max must be >= 1, got {k_max}")
    words = list(dict.fromkeys(corpus_words))
    if not words:
        raise ConfigurationError("corpus_words is empty; cannot build a vocabulary")
    specials = list(NAMED_SPECIALS) + [ct_token(i) for i in range(1, k_max + 1)]
    if len(set(specials)) != len(specials):
        raise ConfigurationError("duplicate special token name")
    overlap = set(specials) & set(words)
    if overlap:
        raise ConfigurationError(f"content words collide with special tokens: {sorted(overlap)}")

    token_to_id = {}
    for tok in specials + words:
        token_to_id[tok] = len(token_to_id)
    id_to_token = {i: t for t, i in token_to_id.items()}
    special_ids = {t: token_to_id[t] for t in specials}
    return Vocab(token_to_id=token_to_id, id_to_token=id_to_token, k_max=k_max, specials=special_ids)


def encode_text(vocab: Vocab, text: str) -> list:
    """Whitespace-tokenize and map to ids; unknown words become [UNK]."""
    unk = vocab.unk_id
    return [vocab.token_to_id.get(w, unk) for w in text.split()]


def decode_ids(vocab: Vocab, ids: Iterable[int]) -> str:
    """Inverse of encode_text for known ids; [PAD] renders as nothing."""
    words = []
    pad = vocab.pad_id
    for i in ids:
        i = int(i)
        if i not in vocab.id_to_token:
            raise DecodingError(f"token id {i} is outside the vocabulary (size {len(vocab)})")
        if i == pad:
            continue
        words.append(vocab.id_to_token[i])
    return " ".join(words)


def save_vocab(vocab: Vocab, path) -> None:
    """One token per line; the line number is the id."""
    lines = [vocab.id_to_token[i] for i in range(len(vocab))]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab(path) -> Vocab:
    tokens = Path(path).read_text(encoding="utf-8").splitlines()
    k_max = sum(1 for t in tokens if t.startswith("CT_"))
    if k_max < 1:
        raise ConfigurationError(f"vocabulary file {path} has no compression-token entries")
    n_specials = len(NAMED_SPECIALS) + k_max
    expected = list(NAMED_SPECIALS) + [ct_token(i) for i in range(1, k_max + 1)]
    if tokens[:n_specials] != expected:
        raise ConfigurationError(f"vocabulary file {path} does not start with the reserved specials")
    return build_vocab(tokens[n_specials:], k_max=k_max)
