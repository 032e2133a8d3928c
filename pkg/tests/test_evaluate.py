import numpy as np
import pytest

from ctxpress.controller import AllocationPolicy, allocate
from ctxpress.data import generate_split, preset, vocab_for_config
from ctxpress.errors import ContractError, StagingError
from ctxpress.evaluate import (
    answer_fidelity,
    bucket_summaries,
    check_variant,
    match_ratio_for_mean_k,
    probe_report,
    run_eval,
)
from ctxpress.model import init_params
from ctxpress.pipeline import ModelBundle, answer_full_context

from conftest import randomize_adapters, tiny_model_config


@pytest.fixture(scope="module")
def eval_setup():
    cfg = preset("sentence", n_chunks=4, seed=31)
    vocab = vocab_for_config(cfg, k_max=8)
    examples = generate_split(cfg, 10)
    config = tiny_model_config(len(vocab), dtype="f32")
    params = init_params(config, seed=5)
    randomize_adapters(params, seed=6)
    bundle = ModelBundle(config=config, params=params, vocab=vocab, stage="finetune")
    return bundle, examples


def test_variant_staging(eval_setup):
    bundle, _ = eval_setup
    check_variant(bundle, "full")
    with pytest.raises(StagingError):
        check_variant(bundle, "no_selective")
    with pytest.raises(StagingError):
        check_variant(bundle, "bogus")
    nosel = ModelBundle(config=bundle.config, params=bundle.params,
                        vocab=bundle.vocab, variant="no_selective")
    check_variant(nosel, "no_selective")
    with pytest.raises(StagingError):
        check_variant(nosel, "full")


def test_no_aac_rows_fixed_k(eval_setup):
    bundle, examples = eval_setup
    res = run_eval(bundle, examples, AllocationPolicy(r=10, k_max=8), "no_aac",
                   max_regen_len=8, max_answer_len=3, measure_latency=False)
    assert all(row.k == 8 for row in res.rows)
    assert all(row.latency_ms == 0.0 for row in res.rows)


def test_full_rows_respect_policy(eval_setup):
    bundle, examples = eval_setup
    policy = AllocationPolicy(r=10, k_max=8)
    res = run_eval(bundle, examples, policy, "full",
                   max_regen_len=8, max_answer_len=3, measure_latency=False)
    for row in res.rows:
        assert 1 <= row.k <= 8
        assert row.k == allocate(policy, row.l_hat)
        assert row.cr == pytest.approx(row.context_tokens / row.k)


def test_sweep_mean_k_nonincreasing_in_r(eval_setup):
    bundle, examples = eval_setup
    res = run_eval(bundle, examples, AllocationPolicy(r=10, k_max=8), "full",
                   r_values=[5.0, 10.0, 20.0], max_regen_len=4, max_answer_len=2,
                   measure_latency=False)
    means = [res.summaries[f"r={r:g}"]["k_mean"] for r in (5.0, 10.0, 20.0)]
    assert means[0] >= means[1] >= means[2]


def test_empty_dataset_contract(eval_setup):
    bundle, _ = eval_setup
    with pytest.raises(ContractError):
        run_eval(bundle, [], AllocationPolicy(r=10, k_max=8), "full")


def test_probe_report_stubs(eval_setup):
    bundle, examples = eval_setup
    rows, agg = probe_report(bundle, examples, predict=lambda ex: float(ex.l_rel))
    assert agg["sentence"]["mae"] == 0.0
    rows, agg = probe_report(bundle, examples, predict=lambda ex: 0.0)
    mean_rel = sum(ex.l_rel for ex in examples) / len(examples)
    assert agg["sentence"]["mae"] == pytest.approx(mean_rel)
    assert agg["sentence"]["rel_mae"] == pytest.approx(1.0)
    with pytest.raises(ContractError):
        probe_report(bundle, [])


def test_probe_report_live_probe(eval_setup):
    bundle, examples = eval_setup
    rows, agg = probe_report(bundle, examples)
    assert len(rows) == len(examples)
    assert all(r["l_hat"] >= 0 for r in rows)


def test_answer_fidelity_self_comparison(eval_setup):
    bundle, examples = eval_setup
    policy = AllocationPolicy(r=10, k_max=8)

    def full_path(ex):
        from ctxpress.vocab import decode_ids

        return decode_ids(bundle.vocab, answer_full_context(bundle, ex, 3))

    assert answer_fidelity(bundle, examples, policy, max_answer_len=3,
                           compressed=full_path) == 1.0
    with pytest.raises(ContractError):
        answer_fidelity(bundle, [], policy)


def test_match_ratio_for_mean_k(eval_setup):
    bundle, examples = eval_setup
    policy = AllocationPolicy(r=10, k_max=8)
    r, achieved = match_ratio_for_mean_k(bundle, examples, policy, target_mean_k=3.0)
    assert abs(achieved - 3.0) <= 0.5
    assert r > 0


def test_bucket_summaries(eval_setup):
    bundle, examples = eval_setup
    res = run_eval(bundle, examples, AllocationPolicy(r=10, k_max=8), "full",
                   max_regen_len=4, max_answer_len=2, measure_latency=False)
    buckets = bucket_summaries(res.rows, [60, 90])
    assert buckets
    assert sum(b["n"] for b in buckets.values()) == len(res.rows)


def test_throughput_reported(eval_setup):
    bundle, examples = eval_setup
    res = run_eval(bundle, examples, AllocationPolicy(r=10, k_max=8), "full",
                   max_regen_len=4, max_answer_len=2)
    agg = res.summaries["all"]
    assert agg["throughput_eps"] == pytest.approx(agg["n"] / agg["wall_seconds"])
