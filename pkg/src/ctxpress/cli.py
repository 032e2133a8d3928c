"""Command-line entry point tying the stages together.

Subcommands::

    datagen       generate a synthetic split (+ vocabulary + manifest)
    train         run one training stage (base_lm | pretrain | finetune)
    eval          evaluate a bundle (full | no_aac | no_selective), sweeps
    probe-report  gold-vs-predicted length scatter and MAE per granularity
    ablate        full vs no_aac vs no_selective at matched mean budget
    plot          render CSV outputs as SVG figures

Exit codes: 0 success, 2 usage, 3 configuration, 4 staging, 5 runtime.
Every subcommand writes a manifest into its run directory.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import data as datamod
from .config import load_config, model_config_from, policy_from, settings_dict, train_config_from
from .errors import (
    CapacityError,
    CheckpointError,
    ConfigurationError,
    ContractError,
    CtxpressError,
    DecodingError,
    GenerationError,
    StagingError,
)
from .metrics import format_summary, write_metrics_csv
from .runs import RunDir

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_STAGING = 4
EXIT_RUNTIME = 5


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctxpress", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add_config_flags(sp):
        sp.add_argument("--config", type=Path, default=None, help="flat key=value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--k-max", dest="k_max", type=int, default=None)
        sp.add_argument("--steps", type=int, default=None)
        sp.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        sp.add_argument("--lr", type=float, default=None)
        sp.add_argument("--lambda", dest="lam", type=float, default=None)
        sp.add_argument("--delta", type=float, default=None)
        sp.add_argument("--r", dest="r_fixed", type=float, default=None)

    g = sub.add_parser("datagen", help="generate a synthetic split")
    g.add_argument("--granularity", choices=datamod.GRANULARITIES, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--hops", type=int, default=None)
    g.add_argument("--n-chunks", dest="n_chunks", type=int, default=None)
    g.add_argument("--n-relevant", dest="n_relevant", type=int, default=None)
    g.add_argument("--n-entities", dest="n_entities", type=int, default=None)
    g.add_argument("--n-attributes", dest="n_attributes", type=int, default=None)
    g.add_argument("--n-values", dest="n_values", type=int, default=None)
    g.add_argument("--n-filler", dest="n_filler", type=int, default=None)
    g.add_argument("--filler-max", dest="filler_max", type=int, default=None)
    add_config_flags(g)

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--stage", choices=("base_lm", "pretrain", "finetune"), required=True)
    t.add_argument("--data", type=Path, action="append", required=True,
                   help="dataset jsonl (repeatable; pooled uniformly)")
    t.add_argument("--vocab", type=Path, default=None,
                   help="vocabulary file (defaults to the one next to the first dataset)")
    t.add_argument("--init", type=Path, default=None, help="checkpoint to start from")
    t.add_argument("--variant", choices=("full", "no_selective"), default="full")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", type=Path, required=True)
    add_config_flags(t)

    e = sub.add_parser("eval", help="evaluate a bundle")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--variant", choices=("full", "no_aac", "no_selective"), default="full")
    e.add_argument("--sweep-r", dest="sweep_r", default=None,
                   help="comma list of policy ratios to sweep")
    e.add_argument("--sweep-length", dest="sweep_length", default=None,
                   help="comma list of context-length bucket edges")
    e.add_argument("--no-latency", dest="latency", action="store_false",
                   help="write zero latencies so the CSV is seed-deterministic")
    e.add_argument("--with-fidelity", dest="fidelity", action="store_true",
                   help="also report agreement with the full-context decoder")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", type=Path, required=True)
    add_config_flags(e)

    pr = sub.add_parser("probe-report", help="gold vs predicted lengths")
    pr.add_argument("--checkpoint", type=Path, required=True)
    pr.add_argument("--data", type=Path, action="append", required=True)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--out", type=Path, required=True)
    add_config_flags(pr)

    a = sub.add_parser("ablate", help="full vs no_aac vs no_selective comparison")
    a.add_argument("--checkpoint", type=Path, required=True, help="full-variant checkpoint")
    a.add_argument("--nosel-checkpoint", dest="nosel", type=Path, required=True)
    a.add_argument("--data", type=Path, required=True)
    a.add_argument("--no-latency", dest="latency", action="store_false")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", type=Path, required=True)
    add_config_flags(a)

    pl = sub.add_parser("plot", help="render metrics/probe CSVs as SVG")
    pl.add_argument("--metrics", type=Path, default=None)
    pl.add_argument("--probe", type=Path, default=None)
    pl.add_argument("--out", type=Path, required=True)

    return p


def _settings(args):
    overrides = {}
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for key in ("k_max", "steps", "batch_size", "lr", "lam", "delta", "r_fixed"):
        value = getattr(args, key, None)
        if value is not None:
            overrides["lambda" if key == "lam" else key] = value
    return load_config(getattr(args, "config", None), overrides)


def _load_vocab_for(args, dataset_paths):
    from .vocab import load_vocab

    if getattr(args, "vocab", None):
        return load_vocab(args.vocab), args.vocab
    candidate = Path(dataset_paths[0]).with_name("vocab.txt")
    if not candidate.exists():
        raise StagingError(f"no --vocab given and {candidate} does not exist")
    return load_vocab(candidate), candidate


def _cmd_datagen(args) -> int:
    settings = _settings(args)
    overrides = {
        k: getattr(args, k)
        for k in ("hops", "n_chunks", "n_relevant", "n_entities", "n_attributes",
                  "n_values", "n_filler")
        if getattr(args, k) is not None
    }
    if args.filler_max is not None:
        overrides["filler_range"] = (0, args.filler_max)
    cfg = datamod.preset(args.granularity, seed=args.seed, input_cap=settings.input_cap,
                         **overrides)
    examples = datamod.generate_split(cfg, args.n)
    run = RunDir(args.out)
    data_path = run.path / "data.jsonl"
    datamod.write_dataset(examples, data_path, config=cfg)
    vocab = datamod.vocab_for_config(cfg, k_max=settings.k_max)
    from .vocab import save_vocab

    save_vocab(vocab, run.path / "vocab.txt")
    run.write_manifest(
        command="datagen",
        config={**settings_dict(settings), "granularity": args.granularity, "n": args.n},
        seed=args.seed,
        inputs=[data_path],
        extra={"dataset": str(data_path), "vocab": str(run.path / "vocab.txt")},
    )
    print(f"wrote {len(examples)} examples to {data_path}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .training import load_checkpoint, run_stage, save_checkpoint, write_trace

    settings = _settings(args)
    vocab, vocab_path = _load_vocab_for(args, args.data)
    if vocab.k_max != settings.k_max:
        raise ConfigurationError(
            f"k_max={settings.k_max} does not match the vocabulary's "
            f"{vocab.k_max} compression-token entries"
        )
    datasets = [datamod.read_dataset(p) for p in args.data]

    init_bundle, parent_id = None, ""
    if args.init is not None:
        init_bundle, manifest = load_checkpoint(args.init, vocab)
        parent_id = manifest.get("checkpoint_id", "")
    model_config = (
        init_bundle.config if init_bundle is not None
        else model_config_from(settings, vocab_size=len(vocab))
    )
    train_config = train_config_from(settings, args.stage, args.seed, variant=args.variant)

    run = RunDir(args.out)
    ckpt_dir = run.subdir("checkpoints")

    def hook(step, bundle):
        save_checkpoint(bundle, ckpt_dir / f"step_{step:06d}", seed=args.seed,
                        parent_id=parent_id, train_config=train_config)

    bundle, trace = run_stage(train_config, model_config, vocab, datasets,
                              init_bundle=init_bundle, checkpoint_hook=hook)
    checkpoint_id = save_checkpoint(bundle, ckpt_dir / "final", seed=args.seed,
                                    parent_id=parent_id, train_config=train_config)
    write_trace(trace, run.path / "loss_trace.csv")
    run.write_manifest(
        command=f"train:{args.stage}",
        config=settings_dict(settings),
        seed=args.seed,
        inputs=list(args.data) + [vocab_path],
        parent=parent_id,
        extra={"checkpoint_id": checkpoint_id, "variant": args.variant,
               "mixture": "uniform_pool", "loss_reduction": "mean",
               "datasets": ";".join(str(p) for p in args.data)},
    )
    print(f"stage {args.stage} done; checkpoint {checkpoint_id[:12]} in {ckpt_dir / 'final'}")
    return EXIT_OK


def _parse_float_list(raw: str, flag: str):
    try:
        values = [float(x) for x in raw.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"{flag} expects a comma list of numbers: {exc}") from exc
    if not values:
        raise ConfigurationError(f"{flag} is empty")
    return values


def _cmd_eval(args) -> int:
    from .evaluate import answer_fidelity, bucket_summaries, run_eval
    from .training import load_checkpoint

    settings = _settings(args)
    bundle, manifest = load_checkpoint(args.checkpoint)
    dataset = datamod.read_dataset(args.data)
    policy = policy_from(settings)
    r_values = _parse_float_list(args.sweep_r, "--sweep-r") if args.sweep_r else None

    result = run_eval(
        bundle, dataset, policy, args.variant,
        r_values=r_values,
        max_regen_len=settings.max_regen_len,
        max_answer_len=settings.max_answer_len,
        measure_latency=args.latency,
    )
    run = RunDir(args.out)
    write_metrics_csv(result.rows, run.path / "metrics.csv")
    summaries = dict(result.summaries)
    if args.sweep_length:
        edges = _parse_float_list(args.sweep_length, "--sweep-length")
        summaries.update(bucket_summaries(result.rows, edges))
    if args.fidelity:
        summaries["all"] = dict(summaries["all"])
        summaries["all"]["answer_fidelity"] = answer_fidelity(
            bundle, dataset, policy, max_answer_len=settings.max_answer_len
        )
    (run.path / "summary.txt").write_text(format_summary(summaries), encoding="utf-8")
    run.write_manifest(
        command=f"eval:{args.variant}",
        config=settings_dict(settings),
        seed=args.seed,
        inputs=[args.data],
        parent=manifest.get("checkpoint_id", ""),
        extra={"dataset": str(args.data), "latency": args.latency},
    )
    print(format_summary({"all": summaries["all"]}))
    return EXIT_OK


def _cmd_probe_report(args) -> int:
    from .evaluate import probe_report, write_probe_csv
    from .training import load_checkpoint

    settings = _settings(args)
    bundle, manifest = load_checkpoint(args.checkpoint)
    rows, aggregates = [], {}
    for path in args.data:
        r, agg = probe_report(bundle, datamod.read_dataset(path))
        rows.extend(r)
        aggregates.update(agg)
    run = RunDir(args.out)
    write_probe_csv(rows, run.path / "probe.csv")
    (run.path / "summary.txt").write_text(format_summary(aggregates), encoding="utf-8")
    run.write_manifest(
        command="probe-report",
        config=settings_dict(settings),
        seed=args.seed,
        inputs=list(args.data),
        parent=manifest.get("checkpoint_id", ""),
    )
    print(format_summary(aggregates))
    return EXIT_OK


def _cmd_ablate(args) -> int:
    from .evaluate import run_ablation
    from .training import load_checkpoint

    settings = _settings(args)
    full_bundle, m_full = load_checkpoint(args.checkpoint)
    nosel_bundle, _ = load_checkpoint(args.nosel)
    dataset = datamod.read_dataset(args.data)
    policy = policy_from(settings)
    results = run_ablation(
        full_bundle, nosel_bundle, dataset, policy,
        max_regen_len=settings.max_regen_len,
        max_answer_len=settings.max_answer_len,
        measure_latency=args.latency,
    )
    run = RunDir(args.out)
    all_rows = [row for res in results.values() for row in res.rows]
    write_metrics_csv(all_rows, run.path / "metrics.csv")
    summaries = {variant: res.summaries["all"] for variant, res in results.items()}
    (run.path / "summary.txt").write_text(format_summary(summaries), encoding="utf-8")
    lines = ["variant,f1,em,effective_cr,k_mean,throughput_eps"]
    for variant, agg in summaries.items():
        lines.append(
            f"{variant},{agg['f1_mean']:.4f},{agg['em_mean']:.4f},"
            f"{agg['effective_cr']:.2f},{agg['k_mean']:.2f},"
            f"{agg.get('throughput_eps', float('nan')):.3f}"
        )
    (run.path / "comparison.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    run.write_manifest(
        command="ablate",
        config=settings_dict(settings),
        seed=args.seed,
        inputs=[args.data],
        parent=m_full.get("checkpoint_id", ""),
    )
    print("\n".join(lines))
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plots import plot_metrics, plot_probe

    run = RunDir(args.out)
    made = []
    if args.metrics is not None:
        made += plot_metrics(args.metrics, run.subdir("plots"))
    if args.probe is not None:
        made += plot_probe(args.probe, run.subdir("plots"))
    if not made:
        raise ConfigurationError("plot needs --metrics and/or --probe")
    run.write_manifest(command="plot", config={}, seed=0,
                       inputs=[p for p in (args.metrics, args.probe) if p])
    print("\n".join(str(p) for p in made))
    return EXIT_OK


_HANDLERS = {
    "datagen": _cmd_datagen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "probe-report": _cmd_probe_report,
    "ablate": _cmd_ablate,
    "plot": _cmd_plot,
}


def cli_main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return _HANDLERS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StagingError, CheckpointError) as exc:
        print(f"staging error: {exc}", file=sys.stderr)
        return EXIT_STAGING
    except (GenerationError, CapacityError, DecodingError, ContractError, CtxpressError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except FileNotFoundError as exc:
        print(f"usage error: missing input path: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(cli_main())
