"""Evaluation runs, ablation variants, probe reports, and fidelity checks.

Variants:

* ``full``          — probe-driven allocation, the normal pipeline
* ``no_aac``        — fixed budget k = k_max, probe ignored for allocation
* ``no_selective``  — a bundle pretrained to compress the whole context; its
                      probe estimates total content length

Each run yields one MetricRow per example (answer F1/EM, reconstruction
ROUGE-L-F against the variant's own target, compression ratio, latency) plus
aggregates. Latency measurement can be disabled to make the CSV a pure
function of the seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .controller import AllocationPolicy, allocate
from .errors import ContractError, StagingError
from .metrics import MetricRow, compression_ratio, qa_metrics, rouge_l_f, summarize
from .pipeline import (
    ModelBundle,
    answer_full_context,
    answer_greedy,
    compress_example,
    reconstruction_target,
    regenerate,
)
from .metrics import normalize_answer
from .vocab import decode_ids, encode_text

VARIANTS = ("full", "no_aac", "no_selective")


def check_variant(bundle: ModelBundle, variant: str) -> None:
    if variant not in VARIANTS:
        raise StagingError(f"unknown evaluation variant {variant!r}")
    required = "no_selective" if variant == "no_selective" else "full"
    if bundle.variant != required:
        raise StagingError(
            f"variant {variant!r} needs a bundle trained as {required!r}, "
            f"got {bundle.variant!r}"
        )


@dataclass
class EvalResult:
    rows: list
    summaries: dict          # "all" plus one entry per swept r
    wall_seconds: float


def run_eval(
    bundle: ModelBundle,
    dataset,
    policy: AllocationPolicy,
    variant: str = "full",
    *,
    r_values=None,
    max_regen_len: int = 160,
    max_answer_len: int = 8,
    measure_latency: bool = True,
) -> EvalResult:
    """Single-stream evaluation; sweeping r re-runs the dataset per value."""
    check_variant(bundle, variant)
    if not dataset:
        raise ContractError("evaluation dataset is empty")
    r_list = list(r_values) if r_values is not None else [policy.r]

    rows = []
    t_run = time.perf_counter()
    with ad.no_grad():
        for r in r_list:
            pol = policy.with_r(float(r))
            for ex in dataset:
                t0 = time.perf_counter()
                memory, _, l_hat, k = compress_example(
                    bundle,
                    ex,
                    pol,
                    allocation_from="probe",
                    fixed_k=pol.k_max if variant == "no_aac" else None,
                )
                target_text, _ = reconstruction_target(bundle, ex)
                regen_ids = regenerate(bundle, memory, max_regen_len)
                regen_text = decode_ids(bundle.vocab, regen_ids)
                ans_ids = answer_greedy(
                    bundle, memory, encode_text(bundle.vocab, ex.query), max_answer_len
                )
                ans_text = decode_ids(bundle.vocab, ans_ids)
                latency = (time.perf_counter() - t0) * 1000.0 if measure_latency else 0.0
                qa = qa_metrics(ans_text, ex.answer)
                rows.append(
                    MetricRow(
                        example_id=ex.id,
                        variant=variant,
                        granularity=ex.granularity,
                        r=float(r),
                        k=k,
                        l_rel=ex.l_rel,
                        l_hat=float(l_hat.data),
                        f1=qa["f1"],
                        em=qa["em"],
                        rouge_l_f=rouge_l_f(regen_text, target_text),
                        cr=compression_ratio(ex.context_tokens, k),
                        latency_ms=latency,
                        context_tokens=ex.context_tokens,
                    )
                )
    wall = time.perf_counter() - t_run

    summaries = {"all": summarize(rows, wall_seconds=wall)}
    if len(r_list) > 1:
        for r in r_list:
            subset = [row for row in rows if row.r == float(r)]
            summaries[f"r={r:g}"] = summarize(subset)
    return EvalResult(rows=rows, summaries=summaries, wall_seconds=wall)


def bucket_summaries(rows, edges) -> dict:
    """Group rows by context length bucket: edges [a, b] give (<=a], (a, b], (b, inf)."""
    edges = sorted(edges)
    out = {}
    bounds = [-np.inf] + list(edges) + [np.inf]
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        subset = [r for r in rows if lo < r.context_tokens <= hi]
        if subset:
            label = f"len({'-inf' if lo == -np.inf else int(lo)},{'inf' if hi == np.inf else int(hi)}]"
            out[label] = summarize(subset)
    return out


def probe_report(bundle: ModelBundle, dataset, predict=None) -> tuple:
    """Per-example (gold length, estimate) pairs plus per-granularity MAE.

    ``predict`` overrides the probe with a callable(example) -> float, which
    keeps the report machinery testable against stub estimators.
    """
    if not dataset:
        raise ContractError("probe report needs a non-empty dataset")
    rows = []
    with ad.no_grad():
        for ex in dataset:
            _, gold_len = reconstruction_target(bundle, ex)
            if predict is not None:
                l_hat = float(predict(ex))
            else:
                policy = AllocationPolicy(k_max=bundle.config.k_max)
                _, _, l_hat_t, _ = compress_example(bundle, ex, policy, allocation_from="probe")
                l_hat = float(l_hat_t.data)
            rows.append(
                {
                    "example_id": ex.id,
                    "granularity": ex.granularity,
                    "l_rel": gold_len,
                    "l_hat": l_hat,
                    "abs_error": abs(l_hat - gold_len),
                }
            )
    aggregates = {}
    for gran in sorted({r["granularity"] for r in rows}):
        subset = [r for r in rows if r["granularity"] == gran]
        mae = sum(r["abs_error"] for r in subset) / len(subset)
        mean_gold = sum(r["l_rel"] for r in subset) / len(subset)
        aggregates[gran] = {
            "n": len(subset),
            "mae": mae,
            "mean_l_rel": mean_gold,
            "rel_mae": mae / mean_gold if mean_gold > 0 else float("nan"),
        }
    return rows, aggregates


def write_probe_csv(rows, path) -> None:
    import csv
    from pathlib import Path

    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("example_id", "granularity", "l_rel", "l_hat", "abs_error"))
        for r in sorted(rows, key=lambda x: x["example_id"]):
            writer.writerow(
                (r["example_id"], r["granularity"], r["l_rel"],
                 f"{r['l_hat']:.6f}", f"{r['abs_error']:.6f}")
            )


def answer_fidelity(
    bundle: ModelBundle,
    dataset,
    policy: AllocationPolicy,
    *,
    max_answer_len: int = 8,
    compressed=None,
) -> float:
    """Agreement rate between compressed-path and full-context answers.

    ``compressed`` overrides the compressed path with a callable(example) ->
    answer text (the self-comparison oracle passes the full-context path
    itself).
    """
    if not dataset:
        raise ContractError("answer fidelity needs a non-empty dataset")
    agree = 0
    with ad.no_grad():
        for ex in dataset:
            ref_ids = answer_full_context(bundle, ex, max_answer_len)
            ref_text = decode_ids(bundle.vocab, ref_ids)
            if compressed is not None:
                cand_text = compressed(ex)
            else:
                memory, _, _, _ = compress_example(bundle, ex, policy, allocation_from="probe")
                cand_ids = answer_greedy(
                    bundle, memory, encode_text(bundle.vocab, ex.query), max_answer_len
                )
                cand_text = decode_ids(bundle.vocab, cand_ids)
            agree += int(normalize_answer(cand_text) == normalize_answer(ref_text))
    return agree / len(dataset)


def predicted_lengths(bundle: ModelBundle, dataset) -> np.ndarray:
    """Probe estimates for every example (no generation; one encoder pass each)."""
    policy = AllocationPolicy(k_max=bundle.config.k_max)
    out = []
    with ad.no_grad():
        for ex in dataset:
            _, _, l_hat, _ = compress_example(bundle, ex, policy, allocation_from="probe")
            out.append(float(l_hat.data))
    return np.asarray(out)


def match_ratio_for_mean_k(
    bundle: ModelBundle,
    dataset,
    policy: AllocationPolicy,
    target_mean_k: float,
    tolerance: float = 0.5,
):
    """Find a policy ratio whose mean allocated k matches a target.

    Used to compare ablation variants at equal average budgets: mean k is a
    nonincreasing step function of r, so a fine geometric grid search is
    exact enough. Returns (r, achieved mean k); raises if the target cannot
    be approached within tolerance.
    """
    l_hats = predicted_lengths(bundle, dataset)

    def mean_k(r: float) -> float:
        pol = policy.with_r(r)
        return float(np.mean([allocate(pol, l) for l in l_hats]))

    grid = np.geomspace(0.25, 1000.0, 4000)
    best_r, best_diff, best_k = None, np.inf, None
    for r in grid:
        mk = mean_k(float(r))
        diff = abs(mk - target_mean_k)
        if diff < best_diff - 1e-12:
            best_r, best_diff, best_k = float(r), diff, mk
    if best_diff > tolerance:
        raise StagingError(
            f"cannot match mean k {target_mean_k:.2f} within {tolerance}; "
            f"closest is {best_k:.2f} at r={best_r:.3f}"
        )
    return best_r, best_k


def run_ablation(
    full_bundle: ModelBundle,
    nosel_bundle: ModelBundle,
    dataset,
    policy: AllocationPolicy,
    *,
    max_regen_len: int = 160,
    max_answer_len: int = 8,
    measure_latency: bool = True,
) -> dict:
    """Full pipeline vs fixed-budget vs non-selective, at matched mean k."""
    results = {}
    results["full"] = run_eval(
        full_bundle, dataset, policy, "full",
        max_regen_len=max_regen_len, max_answer_len=max_answer_len,
        measure_latency=measure_latency,
    )
    results["no_aac"] = run_eval(
        full_bundle, dataset, policy, "no_aac",
        max_regen_len=max_regen_len, max_answer_len=max_answer_len,
        measure_latency=measure_latency,
    )
    target_k = results["full"].summaries["all"]["k_mean"]
    matched_r, _ = match_ratio_for_mean_k(nosel_bundle, dataset, policy, target_k)
    results["no_selective"] = run_eval(
        nosel_bundle, dataset, policy.with_r(matched_r), "no_selective",
        max_regen_len=max_regen_len, max_answer_len=max_answer_len,
        measure_latency=measure_latency,
    )
    return results
