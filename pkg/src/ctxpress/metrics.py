"""QA and reconstruction metrics, per-example rows, CSV and summary emission.

Answer metrics follow the usual extractive-QA recipe: normalize (lowercase,
strip punctuation, drop articles, collapse whitespace), then token-multiset
F1 and exact match. ROUGE-L-F is the plain harmonic mean of LCS precision and
recall over whitespace tokens.
"""

from __future__ import annotations

import csv
import re
import string
from collections import Counter
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ContractError

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    text = text.lower()
    text = text.translate(_PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def qa_metrics(prediction: str, gold: str) -> dict:
    """Token-overlap F1 and exact match after normalization."""
    pred = normalize_answer(prediction)
    ref = normalize_answer(gold)
    em = int(pred == ref)
    pred_tokens = pred.split()
    ref_tokens = ref.split()
    if not pred_tokens or not ref_tokens:
        f1 = float(pred_tokens == ref_tokens)
        return {"f1": f1, "em": em}
    common = Counter(pred_tokens) & Counter(ref_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return {"f1": 0.0, "em": em}
    precision = overlap / len(pred_tokens)
    recall = overlap / len(ref_tokens)
    return {"f1": 2 * precision * recall / (precision + recall), "em": em}


def _lcs_len(a, b) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l_f(candidate: str, reference: str) -> float:
    """Harmonic mean of LCS precision and recall over word tokens."""
    cand = candidate.split()
    ref = reference.split()
    if not cand or not ref:
        return 0.0
    lcs = _lcs_len(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


def compression_ratio(context_tokens: int, k: int) -> float:
    """Original chunk-content length over slot count (tags and query excluded)."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if context_tokens < 0:
        raise ContractError(f"context_tokens must be >= 0, got {context_tokens}")
    return context_tokens / k


def throughput(n_examples: int, seconds: float) -> float:
    if seconds <= 0:
        raise ContractError(f"elapsed time must be positive, got {seconds}")
    return n_examples / seconds


CSV_COLUMNS = (
    "example_id", "variant", "granularity", "r", "k", "l_rel", "l_hat",
    "f1", "em", "rouge_l_f", "cr", "latency_ms",
)


@dataclass
class MetricRow:
    example_id: str
    variant: str
    granularity: str
    r: float
    k: int
    l_rel: int
    l_hat: float
    f1: float
    em: int
    rouge_l_f: float
    cr: float
    latency_ms: float
    context_tokens: int = 0  # internal; not part of the CSV surface

    def csv_values(self):
        return (
            self.example_id, self.variant, self.granularity,
            _fmt(self.r), str(self.k), str(self.l_rel), _fmt(self.l_hat),
            _fmt(self.f1), str(self.em), _fmt(self.rouge_l_f), _fmt(self.cr),
            _fmt(self.latency_ms),
        )


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_metrics_csv(rows, path) -> None:
    rows = sorted(rows, key=lambda r: (r.variant, r.r, r.example_id))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_values())


def read_metrics_csv(path) -> list:
    out = []
    with Path(path).open("r", newline="", encoding="utf-8") as fh:
        for record in csv.DictReader(fh):
            out.append(record)
    return out


def summarize(rows, wall_seconds: float | None = None) -> dict:
    """Aggregate a set of rows.

    Mean-of-row aggregates for every numeric column, plus the effective
    compression ratio (total content tokens over total slots), which is the
    headline number: effective_cr * mean_k recovers the mean context length
    exactly.
    """
    if not rows:
        raise ContractError("cannot summarize an empty row set")
    n = len(rows)
    agg = {
        "n": n,
        "f1_mean": sum(r.f1 for r in rows) / n,
        "em_mean": sum(r.em for r in rows) / n,
        "rouge_l_f_mean": sum(r.rouge_l_f for r in rows) / n,
        "cr_mean": sum(r.cr for r in rows) / n,
        "k_mean": sum(r.k for r in rows) / n,
        "l_rel_mean": sum(r.l_rel for r in rows) / n,
        "l_hat_mean": sum(r.l_hat for r in rows) / n,
        "latency_ms_mean": sum(r.latency_ms for r in rows) / n,
        "context_tokens_mean": sum(r.context_tokens for r in rows) / n,
        "probe_mae": sum(abs(r.l_hat - r.l_rel) for r in rows) / n,
    }
    total_k = sum(r.k for r in rows)
    agg["effective_cr"] = sum(r.context_tokens for r in rows) / total_k
    mean_rel = agg["l_rel_mean"]
    agg["probe_rel_mae"] = agg["probe_mae"] / mean_rel if mean_rel > 0 else float("nan")
    if wall_seconds is not None:
        agg["wall_seconds"] = wall_seconds
        agg["throughput_eps"] = throughput(n, wall_seconds)
    return agg


def format_summary(per_variant: dict) -> str:
    """Human-readable report: one block per variant."""
    lines = []
    for variant in sorted(per_variant):
        agg = per_variant[variant]
        lines.append(f"[{variant}]")
        for key in sorted(agg):
            value = agg[key]
            if isinstance(value, float):
                lines.append(f"  {key} = {value:.6f}")
            else:
                lines.append(f"  {key} = {value}")
    return "\n".join(lines) + "\n"
