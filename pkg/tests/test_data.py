import numpy as np
import pytest

from ctxpress.data import (
    SynthConfig,
    generate_example,
    generate_split,
    preset,
    read_dataset,
    vocab_for_config,
    write_dataset,
)
from ctxpress.errors import ConfigurationError, GenerationError
from ctxpress.vocab import encode_text


def test_single_relevant_chunk_contains_query_pair():
    cfg = preset("sentence", n_chunks=5, seed=0)
    ex = generate_example(cfg, 0)
    relevant = [c for c in ex.chunks if c.relevant]
    assert len(relevant) == 1
    words = ex.query.split()
    attr, entity = words[3], words[6]
    assert entity in relevant[0].text.split()
    assert attr in relevant[0].text.split()
    assert ex.answer in relevant[0].text.split()


def test_two_hop_answer_only_in_second_chunk():
    cfg = preset("document", hops=2, n_relevant=2, seed=1)
    for i in range(20):
        ex = generate_example(cfg, i)
        relevant = [c for c in ex.chunks if c.relevant]
        assert len(relevant) == 2
        holders = [c for c in relevant if ex.answer in c.text.split()]
        assert len(holders) == 1
        # the answer-bearing chunk is the second hop: it mentions the bridge
        # entity, not the queried entity
        entity = ex.query.split()[-1]
        assert entity not in holders[0].text.split()


def test_determinism_byte_identical():
    cfg = preset("passage", seed=9)
    a = generate_example(cfg, 3).to_json()
    b = generate_example(cfg, 3).to_json()
    assert a == b


@pytest.mark.parametrize("granularity", ["sentence", "passage", "document"])
def test_invariant_sweep(granularity):
    cfg = preset(granularity, seed=2)
    examples = generate_split(cfg, 100)
    vocab = vocab_for_config(cfg, k_max=8)
    for ex in examples:
        relevant = [c for c in ex.chunks if c.relevant]
        assert relevant
        assert ex.c_rel == " ".join(c.text for c in relevant)
        assert ex.l_rel == len(encode_text(vocab, ex.c_rel))
        assert ex.total_tokens <= 600
        assert ex.total_tokens == len(encode_text(vocab, ex.encoder_text()))
        # masking relevant chunks removes every occurrence of the answer
        masked = " ".join(c.text for c in ex.chunks if not c.relevant)
        assert ex.answer not in masked.split()
        assert vocab.unk_id not in encode_text(vocab, ex.encoder_text())


def test_lrel_distribution_has_signal():
    cfg = preset("document", seed=4)
    examples = generate_split(cfg, 100)
    lrels = np.asarray([ex.l_rel for ex in examples])
    assert lrels.std() > 0
    assert lrels.max() / lrels.min() >= 5.0


def test_seed_changes_answers():
    cfg_a = preset("sentence", seed=100)
    cfg_b = preset("sentence", seed=200)
    pairs = [
        (generate_example(cfg_a, i).answer, generate_example(cfg_b, i).answer)
        for i in range(100)
    ]
    differing = sum(a != b for a, b in pairs)
    assert differing >= 90


def test_base_case_and_bad_n():
    cfg = preset("sentence", seed=5)
    assert len(generate_split(cfg, 1)) == 1
    with pytest.raises(GenerationError):
        generate_split(cfg, 0)


def test_budget_unreachable_is_generation_error():
    with pytest.raises(GenerationError):
        preset("sentence", n_chunks=40, seed=0)  # 40 chunks cannot fit in 600 tokens


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SynthConfig(granularity="word")
    with pytest.raises(ConfigurationError):
        SynthConfig(hops=3)
    with pytest.raises(ConfigurationError):
        SynthConfig(hops=2, n_relevant=1)
    with pytest.raises(ConfigurationError):
        SynthConfig(n_chunks=2, n_relevant=3)


def test_relevant_position_varies():
    cfg = preset("sentence", n_chunks=6, seed=8)
    positions = set()
    for i in range(40):
        ex = generate_example(cfg, i)
        positions.add(next(j for j, c in enumerate(ex.chunks) if c.relevant))
    assert len(positions) >= 4  # relevant chunk lands all over the context


def test_multi_relevant_one_hop():
    cfg = preset("passage", n_relevant=2, seed=3)
    ex = generate_example(cfg, 0)
    relevant = [c for c in ex.chunks if c.relevant]
    assert len(relevant) == 2
    entity = ex.query.split()[6]
    for c in relevant:
        assert entity in c.text.split()


def test_dataset_roundtrip(tmp_path):
    cfg = preset("document", seed=6)
    examples = generate_split(cfg, 10)
    path = tmp_path / "data.jsonl"
    write_dataset(examples, path, config=cfg)
    loaded = read_dataset(path)
    assert [e.to_json() for e in loaded] == [e.to_json() for e in examples]
    sidecar = tmp_path / "data.jsonl.manifest.txt"
    assert sidecar.exists()
    text = sidecar.read_text()
    assert "config.seed=6" in text
    assert "n=10" in text


def test_write_is_byte_stable(tmp_path):
    cfg = preset("sentence", seed=7)
    examples = generate_split(cfg, 5)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_dataset(examples, p1)
    write_dataset(generate_split(cfg, 5), p2)
    assert p1.read_bytes() == p2.read_bytes()
