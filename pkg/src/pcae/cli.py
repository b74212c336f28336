"""Command-line entry point for the full train/generate/evaluate pipeline.

Exit codes: 0 success, 1 usage error, 2 runtime failure. All stage
randomness derives from the single [run] seed (overridable through the
PCAE_SEED environment variable).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .base_ae import train_base
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import (
    RunConfig,
    decoding_from_metadata,
    decoding_to_metadata,
    parse_run_config,
    with_seed,
)
from .corpus import (
    build_vocabulary,
    encode_labeled,
    encode_line,
    load_corpus,
    load_labeled_tsv,
    load_vocabulary,
    save_vocabulary,
    vocabulary_hash,
)
from .evaluation import (
    evaluate_generated,
    export_local_latents,
    pca_project_2d,
    report_text,
    report_tsv,
    train_attribute_classifier,
)
from .figures import render_latent_figure, render_metrics_figure
from .generation import generate_conditional
from .plugin_ae import train_plugin

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

CLASSIFIER_EPOCHS = 60
CLASSIFIER_LR = 0.01


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1 instead of argparse's SystemExit(2)
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="pcae", description="Plug-in conditional auto-encoder toolkit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("pretrain", help="pre-train the base auto-encoder")
    p.add_argument("--config", required=True, help="run config file")
    p.add_argument("--corpus", help="unlabeled corpus, one sentence per line")
    p.add_argument("--out", help="output checkpoint path")

    p = sub.add_parser("plugin-train", help="train the plug-in conditioning stage")
    p.add_argument("--config", required=True)
    p.add_argument("--base", help="base checkpoint path")
    p.add_argument("--labeled", help="labeled TSV (label<TAB>text)")
    p.add_argument("--out", help="output checkpoint path")

    p = sub.add_parser("generate", help="generate sentences for one class label")
    p.add_argument("--plugin", required=True, help="plug-in checkpoint path")
    p.add_argument("--label", required=True, type=int)
    p.add_argument("--num", required=True, type=int)
    p.add_argument("--out", help="output text file (default: stdout)")
    p.add_argument("--tsv", action="store_true", help="write label<TAB>text lines")

    p = sub.add_parser("evaluate", help="score generated text against a classifier")
    p.add_argument("--plugin", required=True)
    p.add_argument("--labeled", required=True, help="classifier training TSV")
    p.add_argument("--generated", required=True, help="generated TSV (label<TAB>text)")
    p.add_argument("--report", required=True, help="report path (also writes .tsv/.png)")

    p = sub.add_parser("export-latents", help="export prior-side local latents")
    p.add_argument("--plugin", required=True)
    p.add_argument("--per-class", required=True, type=int)
    p.add_argument("--out", help="TSV path (also writes .2d.tsv/.png)")
    return parser


def _env_seed() -> int | None:
    raw = os.environ.get("PCAE_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise UsageError(f"PCAE_SEED must be an integer, got {raw!r}") from exc


def _load_config(path: str) -> RunConfig:
    cfg = parse_run_config(path)
    seed = _env_seed()
    return with_seed(cfg, seed) if seed is not None else cfg


def _resolve(flag_value: str | None, cfg: RunConfig, key: str, flag: str) -> str:
    value = flag_value or cfg.paths.get(key)
    if not value:
        raise UsageError(f"{flag} is required (or set paths.{key} in the config)")
    return value


def _run_seed_from_metadata(ckpt: Checkpoint) -> int:
    env = _env_seed()
    if env is not None:
        return env
    return int(ckpt.metadata.get("run.seed", "0"))


def _cmd_pretrain(args: argparse.Namespace) -> None:
    cfg = _load_config(args.config)
    corpus_path = _resolve(args.corpus, cfg, "corpus", "--corpus")
    out_path = _resolve(args.out, cfg, "base_checkpoint", "--out")
    vocab_path = cfg.paths.get("vocab") or f"{out_path}.vocab"

    lines = load_corpus(corpus_path)
    vocab = build_vocabulary(lines, cfg.max_vocab)
    save_vocabulary(vocab, vocab_path)
    logger.info("vocabulary of %d tokens written to %s", vocab.size, vocab_path)

    encoded = [encode_line(vocab, line) for line in lines]
    ckpt = train_base(replace(cfg.base, vocab_size=vocab.size), encoded, vocab)
    ckpt.metadata.update(decoding_to_metadata(cfg.decoding))
    ckpt.metadata["run.seed"] = str(cfg.seed)
    save_checkpoint(ckpt, out_path)
    logger.info("base checkpoint written to %s (%.2fs)", out_path, ckpt.seconds)


def _cmd_plugin_train(args: argparse.Namespace) -> None:
    cfg = _load_config(args.config)
    base_path = _resolve(args.base, cfg, "base_checkpoint", "--base")
    labeled_path = _resolve(args.labeled, cfg, "labeled", "--labeled")
    out_path = _resolve(args.out, cfg, "plugin_checkpoint", "--out")
    base_ckpt = load_checkpoint(base_path)

    vocab_path = cfg.paths.get("vocab") or f"{base_path}.vocab"
    vocab = load_vocabulary(vocab_path)
    if vocabulary_hash(vocab) != base_ckpt.metadata.get("vocab_hash"):
        raise RuntimeError(
            f"vocabulary hash mismatch: {vocab_path} does not match the base checkpoint"
        )

    pairs = load_labeled_tsv(labeled_path)
    labeled = encode_labeled(vocab, pairs)
    num_classes = cfg.plugin.num_classes
    if not cfg.plugin_classes_pinned:
        num_classes = max(label for label, _ in pairs) + 1
    plugin_cfg = replace(cfg.plugin, num_classes=num_classes)

    ckpt = train_plugin(base_ckpt, labeled, plugin_cfg)
    ckpt.metadata.update(decoding_to_metadata(cfg.decoding))
    ckpt.metadata["run.seed"] = str(cfg.seed)
    save_checkpoint(ckpt, out_path)
    logger.info("plug-in checkpoint written to %s (%.2fs)", out_path, ckpt.seconds)


def _cmd_generate(args: argparse.Namespace) -> None:
    ckpt = load_checkpoint(args.plugin)
    run_seed = _run_seed_from_metadata(ckpt)
    dec_cfg = replace(decoding_from_metadata(ckpt.metadata), seed=run_seed + 2)
    sentences = generate_conditional(ckpt, args.label, args.num, dec_cfg)
    if args.tsv:
        payload = "".join(f"{args.label}\t{s}\n" for s in sentences)
    else:
        payload = "".join(f"{s}\n" for s in sentences)
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
        logger.info("%d sentences written to %s", len(sentences), args.out)
    else:
        sys.stdout.write(payload)


def _cmd_evaluate(args: argparse.Namespace) -> None:
    ckpt = load_checkpoint(args.plugin)
    if ckpt.metadata.get("stage") != "plugin":
        raise RuntimeError(f"{args.plugin} is not a plug-in checkpoint")
    run_seed = _run_seed_from_metadata(ckpt)
    labeled = load_labeled_tsv(args.labeled)
    generated = load_labeled_tsv(args.generated)
    classifier = train_attribute_classifier(
        labeled, lr=CLASSIFIER_LR, epochs=CLASSIFIER_EPOCHS, seed=run_seed + 3
    )
    report = evaluate_generated(classifier, generated)
    Path(args.report).write_text(report_text(report), encoding="utf-8")
    Path(f"{args.report}.tsv").write_text(report_tsv(report), encoding="utf-8")
    render_metrics_figure(report, f"{args.report}.png")
    logger.info(
        "report written to %s (accuracy %.3f, macro-F1 %.3f)",
        args.report,
        report.accuracy,
        report.macro_f1,
    )


def _cmd_export_latents(args: argparse.Namespace) -> None:
    ckpt = load_checkpoint(args.plugin)
    if ckpt.metadata.get("stage") != "plugin":
        raise RuntimeError(f"{args.plugin} is not a plug-in checkpoint")
    run_seed = _run_seed_from_metadata(ckpt)
    out_path = args.out or "latents.tsv"
    rows = export_local_latents(ckpt, args.per_class, seed=run_seed + 4)

    lines = []
    for label, vec in rows:
        lines.append(str(label) + "\t" + "\t".join(f"{v:.6f}" for v in vec))
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    points = pca_project_2d([vec for _, vec in rows])
    labels = [label for label, _ in rows]
    proj_lines = [
        f"{label}\t{x:.6f}\t{y:.6f}" for label, (x, y) in zip(labels, points)
    ]
    Path(f"{out_path}.2d.tsv").write_text("\n".join(proj_lines) + "\n", encoding="utf-8")
    render_latent_figure(points, labels, f"{out_path}.png")
    logger.info("%d latent rows written to %s", len(rows), out_path)


_COMMANDS = {
    "pretrain": _cmd_pretrain,
    "plugin-train": _cmd_plugin_train,
    "generate": _cmd_generate,
    "evaluate": _cmd_evaluate,
    "export-latents": _cmd_export_latents,
}


def run_command(argv: list[str]) -> int:
    """Dispatch one CLI invocation; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse -h/--help
        return int(exc.code or 0)
    try:
        _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
