"""Command-line entry point for the full pipeline.

Subcommands: forms-validate, preprocess, train, generate, eval-form,
compare, coverage. Exit codes: 0 success, 1 validation error, 2 runtime
failure. All randomness is controlled by --seed.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .corpus import (
    TokenStream,
    Vocabulary,
    build_token_stream,
    build_vocabulary,
    coverage_report,
    load_raw_samples,
)
from .evaluation import (
    CorrectRateReport,
    ab_compare,
    correct_rate,
    load_generation_records,
)
from .forms import load_registry
from .model import ModelConfig, load_checkpoint
from .sampling import GenerationParams, build_prompt, generate_batch, write_results_jsonl
from .training import TrainConfig, TrainMode, train


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shici",
        description="Form-constrained classical poetry toolkit",
    )
    parser.add_argument("--version", action="version", version=f"shici {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forms-validate", help="check a registry file and report its forms")
    p.add_argument("--forms", required=True, help="registry JSONL file")

    p = sub.add_parser(
        "preprocess", help="normalize a raw corpus, build the vocabulary, encode tokens"
    )
    p.add_argument("--corpus", required=True, help="raw corpus JSONL file")
    p.add_argument("--forms", required=True, help="registry JSONL file")
    p.add_argument("--out", required=True, help="encoded token stream output (PMF1)")
    p.add_argument("--vocab", required=True, help="vocabulary JSON output")
    p.add_argument("--min-freq", type=int, default=3, help="UNK frequency threshold")
    p.add_argument(
        "--stanza-label",
        choices=["on", "off"],
        default="on",
        help="emit the stanza separator (off replaces it with a line separator)",
    )

    p = sub.add_parser("train", help="train a model on an encoded corpus")
    p.add_argument("--corpus", required=True, help="encoded token stream (PMF1)")
    p.add_argument("--vocab", required=True, help="vocabulary JSON")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--mode", choices=["basic", "enhanced"], default="enhanced")
    p.add_argument("--config", help="model config JSON file (defaults otherwise)")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=2.5e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", help="resume from this checkpoint")

    p = sub.add_parser("generate", help="sample poems for a form and title")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--form", required=True)
    p.add_argument("--title", default="")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--top-k", type=int, default=15)
    p.add_argument("--max-new-tokens", type=int, default=160)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output JSONL (stdout if omitted)")

    p = sub.add_parser("eval-form", help="score generations against their forms")
    p.add_argument("--in", dest="input", required=True, help="generations JSONL")
    p.add_argument("--forms", required=True, help="registry JSONL file")
    p.add_argument("--report", required=True, help="CSV report path (JSON written next to it)")
    p.add_argument("--mode", default="", help="label recorded in the report")

    p = sub.add_parser("compare", help="per-form rate deltas between two eval reports")
    p.add_argument(
        "--in",
        dest="inputs",
        nargs=2,
        required=True,
        metavar=("REPORT_A", "REPORT_B"),
        help="two JSON reports from eval-form",
    )
    p.add_argument("--report", help="CSV output for the delta table")

    p = sub.add_parser("coverage", help="form-frequency coverage of a raw corpus")
    p.add_argument("--corpus", required=True, help="raw corpus JSONL file")
    p.add_argument("--target-coverage", type=float, default=0.8)
    p.add_argument("--report", help="CSV output of the ranked coverage table")

    return parser


def _cmd_forms_validate(args) -> int:
    registry = load_registry(args.forms)
    user = registry.user_forms()
    print(f"{len(user)} form(s) loaded from {args.forms} "
          f"({len(registry)} total with built-ins)")
    return 0


def _cmd_preprocess(args) -> int:
    registry = load_registry(args.forms)
    samples = load_raw_samples(args.corpus)
    if not samples:
        print("error: raw corpus is empty", file=sys.stderr)
        return 1
    for i, sample in enumerate(samples):
        if sample.form_name not in registry:
            print(
                f"error: sample {i} names unregistered form {sample.form_name!r}",
                file=sys.stderr,
            )
            return 1
    vocab = build_vocabulary(samples, min_frequency=args.min_freq)
    vocab.save(args.vocab)
    stream = build_token_stream(
        samples, vocab, include_stanza_label=(args.stanza_label == "on")
    )
    stream.save(args.out)
    print(
        f"{len(samples)} samples, vocabulary {vocab.size} tokens, "
        f"{len(stream.ids)} token ids -> {args.out}"
    )
    return 0


def _load_model_config(path: str | None, vocab_size: int) -> ModelConfig:
    if path is None:
        return ModelConfig(vocab_size=vocab_size)
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    data.setdefault("vocab_size", vocab_size)
    if data["vocab_size"] != vocab_size:
        raise ValueError(
            f"config vocab_size {data['vocab_size']} does not match vocabulary {vocab_size}"
        )
    return ModelConfig.from_dict(data)


def _cmd_train(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    stream = TokenStream.load(args.corpus)
    if stream.vocab_hash != vocab.content_hash():
        print(
            "error: token stream was encoded with a different vocabulary",
            file=sys.stderr,
        )
        return 1
    model_config = _load_model_config(args.config, vocab.size)
    train_config = TrainConfig(
        mode=TrainMode(args.mode),
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.seed,
    )
    result = train(
        stream,
        model_config,
        train_config,
        out_dir=args.out,
        resume_from=args.checkpoint,
    )
    print(
        f"trained {train_config.steps} steps ({train_config.mode.value}); "
        f"final loss {result.report.final_loss:.4f}; "
        f"checkpoint {result.final_checkpoint}"
    )
    return 0


def _cmd_generate(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.vocab_hash != vocab.content_hash():
        print(
            "error: checkpoint was trained with a different vocabulary",
            file=sys.stderr,
        )
        return 1
    gen = GenerationParams(
        top_k=args.top_k,
        max_new_tokens=args.max_new_tokens,
        seed=args.seed,
        count=args.count,
    )
    prompt = build_prompt(args.form, args.title, vocab)
    results = generate_batch(ckpt.params, prompt, gen, ckpt.config, vocab)
    if args.out:
        write_results_jsonl(results, args.out)
        ok = sum(r.parse_ok for r in results)
        print(f"{len(results)} generations -> {args.out} ({ok} parsed)")
    else:
        for result in results:
            print(json.dumps(result.to_json_dict(), ensure_ascii=False))
    return 0


def _cmd_eval_form(args) -> int:
    registry = load_registry(args.forms)
    records = load_generation_records(args.input)
    report = correct_rate(records, registry, mode=args.mode)
    report.write_csv(args.report)
    json_path = Path(args.report).with_suffix(".json")
    report.write_json(json_path)
    for row in report.rows:
        print(
            f"{row.form}: {row.correct}/{row.generated} correct "
            f"({row.rate * 100.0:.1f}%)"
        )
    print(f"report -> {args.report} and {json_path}")
    return 0


def _cmd_compare(args) -> int:
    path_a, path_b = args.inputs
    report_a = CorrectRateReport.from_json_dict(
        json.loads(Path(path_a).read_text(encoding="utf-8"))
    )
    report_b = CorrectRateReport.from_json_dict(
        json.loads(Path(path_b).read_text(encoding="utf-8"))
    )
    comparison = ab_compare(report_a, report_b)
    for d in comparison.deltas:
        print(
            f"{d.form}: {d.rate_a * 100.0:.1f}% -> {d.rate_b * 100.0:.1f}% "
            f"({d.delta_points:+.1f} points)"
        )
    summary = comparison.sign_summary()
    print(
        f"{summary['positive']} improved, {summary['zero']} unchanged, "
        f"{summary['negative']} regressed"
    )
    if args.report:
        comparison.write_csv(args.report)
        print(f"delta table -> {args.report}")
    return 0


def _cmd_coverage(args) -> int:
    samples = load_raw_samples(args.corpus)
    report = coverage_report(samples)
    k = report.k_for(args.target_coverage)
    print(
        f"{len(report.counts)} forms over {len(samples)} samples; "
        f"top {k} forms cover {args.target_coverage * 100.0:.0f}%"
    )
    if args.report:
        with Path(args.report).open("w", encoding="utf-8") as handle:
            handle.write("rank,form,count,cumulative_fraction\n")
            for rank, (form, count) in enumerate(report.ranked, start=1):
                handle.write(
                    f"{rank},{form},{count},{report.cumulative[rank - 1]:.6f}\n"
                )
        print(f"coverage table -> {args.report}")
    return 0


_COMMANDS = {
    "forms-validate": _cmd_forms_validate,
    "preprocess": _cmd_preprocess,
    "train": _cmd_train,
    "generate": _cmd_generate,
    "eval-form": _cmd_eval_form,
    "compare": _cmd_compare,
    "coverage": _cmd_coverage,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
