"""Command-line entry point: ``lmproto <subcommand> [flags]``.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64): {text}")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lmproto", description="Few-shot relation classification with prototypical networks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one model and write a checkpoint")
    t.add_argument("--config", required=True, help="JSON training config")
    t.add_argument("--train", required=True, help="FewRel-format training relations")
    t.add_argument("--val", required=True, help="FewRel-format validation relations")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--seed", type=_u64, help="overrides the config seed")
    t.add_argument("--log", help="write episode/loss/val_acc lines here")

    e = sub.add_parser("eval", help="evaluate a checkpoint on seeded episodes")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--nway", type=_positive, required=True)
    e.add_argument("--kshot", type=_positive, required=True)
    e.add_argument("--nquery", type=_positive, default=5)
    e.add_argument("--episodes", type=_positive, default=10_000)
    e.add_argument("--seed", type=_u64, default=0)
    e.add_argument("--csv", help="report path (stdout if omitted)")
    e.add_argument("--classifier", choices=("proto", "knn"), default="proto")
    e.add_argument("--workers", type=_positive, default=1)

    a = sub.add_parser("ablate", help="train the four variants and evaluate on a validation holdout")
    a.add_argument("--config", required=True)
    a.add_argument("--train", required=True)
    a.add_argument("--val", required=True)
    a.add_argument("--holdout", type=_positive, default=8)
    a.add_argument("--seed", type=_u64, default=0)
    a.add_argument("--episodes", type=_positive, default=10_000)
    a.add_argument("--csv", help="report path (stdout if omitted)")
    a.add_argument("--log", help="training log path")

    x = sub.add_parser("export-emb", help="export support-set embeddings of one seeded episode")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--nway", type=_positive, default=7)
    x.add_argument("--kshot", type=_positive, default=40)
    x.add_argument("--seed", type=_u64, default=0)
    x.add_argument("--out", required=True)

    s = sub.add_parser("tsne", help="project an embedding CSV to 2-D")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--perplexity", type=float, default=30.0)
    s.add_argument("--iters", type=int, default=1000)
    s.add_argument("--lr", type=float, default=200.0)
    s.add_argument("--seed", type=_u64, default=0)
    s.add_argument("--out", required=True)

    g = sub.add_parser("plot", help="render a 2-D coordinate CSV as SVG")
    g.add_argument("--in", dest="inp", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--title", default="")

    sub.add_parser("selftest", help="run gradient checks and invariants")
    return p


def _cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .config import TrainConfig
    from .data import load_fewrel
    from .training import train

    cfg = TrainConfig.from_json_file(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    train_set = load_fewrel(args.train, "train")
    val_set = load_fewrel(args.val, "val")
    if args.log:
        with open(args.log, "w", encoding="utf-8") as log:
            log.write(f"# seed={cfg.seed} model={cfg.model_name.replace(' ', '')}\n")
            ckpt = train(cfg, train_set, val_set, log=log)
    else:
        ckpt = train(cfg, train_set, val_set)
    save_checkpoint(ckpt, args.out)
    print(f"saved {args.out} (best val acc {ckpt.best_val_acc:.2f})", file=sys.stderr)
    return EXIT_OK


def _emit_reports(reports, path) -> None:
    from .training import write_report_csv

    write_report_csv(reports, path if path else sys.stdout)


def _cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import load_fewrel
    from .fewshot import EpisodeSpec
    from .training import evaluate

    ckpt = load_checkpoint(args.ckpt)
    data = load_fewrel(args.data, "test")
    spec = EpisodeSpec(args.nway, args.kshot, args.nquery)
    report = evaluate(ckpt, data, spec, args.episodes, args.seed, args.classifier, args.workers)
    _emit_reports([report], args.csv)
    print(report, file=sys.stderr)
    return EXIT_OK


def _cmd_ablate(args) -> int:
    from .config import TrainConfig
    from .data import load_fewrel, split_holdout
    from .training import print_ablation_table, run_ablation

    cfg = TrainConfig.from_json_file(args.config)
    train_set = load_fewrel(args.train, "train")
    val_full = load_fewrel(args.val, "val")
    val_set, holdout = split_holdout(val_full, args.holdout, args.seed)
    log = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        reports = run_ablation(cfg, train_set, val_set, holdout, n_episodes=args.episodes, seed=args.seed, log=log)
    finally:
        if log is not None:
            log.close()
    _emit_reports(reports, args.csv)
    print_ablation_table(reports, sys.stderr)
    return EXIT_OK


def _cmd_export(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import load_fewrel
    from .fewshot import EpisodeSpec
    from .viz import export_embeddings

    ckpt = load_checkpoint(args.ckpt)
    data = load_fewrel(args.data, "test")
    spec = EpisodeSpec(args.nway, args.kshot, 0)
    m = export_embeddings(ckpt, data, spec, args.seed, args.out, source=Path(args.data).name)
    print(f"wrote {len(m.ids)} embeddings to {args.out}", file=sys.stderr)
    return EXIT_OK


def _cmd_tsne(args) -> int:
    from .tsne import TsneConfig, tsne_project
    from .viz import EmbeddingMatrix, read_matrix_csv, write_matrix_csv

    m = read_matrix_csv(args.inp)
    cfg = TsneConfig(perplexity=args.perplexity, iterations=args.iters, learning_rate=args.lr, seed=args.seed)
    coords = tsne_project(m.values, cfg)
    meta = {**m.meta, "tsne_seed": str(args.seed), "perplexity": f"{args.perplexity:g}", "iters": str(args.iters), "lr": f"{args.lr:g}"}
    write_matrix_csv(EmbeddingMatrix(m.ids, m.labels, coords, meta), args.out, columns=["x", "y"])
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .viz import read_matrix_csv, render_scatter

    m = read_matrix_csv(args.inp)
    if m.values.shape[1] != 2:
        raise ValueError(f"{args.inp}: expected 2 coordinate columns, got {m.values.shape[1]}")
    title = args.title or " ".join(f"{k}={v}" for k, v in sorted(m.meta.items()))
    render_scatter(m.values, m.labels, args.out, title=title)
    return EXIT_OK


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest() else EXIT_RUNTIME


COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "export-emb": _cmd_export,
    "tsne": _cmd_tsne,
    "plot": _cmd_plot,
    "selftest": _cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, FloatingPointError, KeyError) as exc:
        print(f"lmproto {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
