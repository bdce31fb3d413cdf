"""The four-variant ablation grid.

With FewRel on disk this is the validation-holdout experiment:

    python3 scripts/run_ablation.py --train train_wiki.json --val val_wiki.json \
        --vectors glove.6B.50d.json --csv ablation.csv

Without it, ``--synthetic`` runs the same grid on the marker corpus at a
small budget.
"""
import argparse
import dataclasses
import sys

from lmproto.config import TrainConfig
from lmproto.data import build_vocab, load_fewrel, split_holdout
from lmproto.synthetic import make_marker_corpus, marker_train_config, marker_vectors
from lmproto.training import TABLE_SETTINGS, print_ablation_table, run_ablation, write_report_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--train")
    ap.add_argument("--val")
    ap.add_argument("--vectors")
    ap.add_argument("--config", help="JSON config (defaults otherwise)")
    ap.add_argument("--synthetic", action="store_true")
    ap.add_argument("--holdout", type=int, default=8)
    ap.add_argument("--episodes", type=int, default=10_000, help="evaluation episodes per setting")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv")
    args = ap.parse_args()

    if args.synthetic:
        train_set = make_marker_corpus(range(16), per_relation=40, seed=1)
        val_full = make_marker_corpus(range(16, 32), per_relation=40, seed=2, split="val")
        cfg = marker_train_config("cnn", args.seed, 2000)
        vectors = marker_vectors(32, seed=args.seed)
    else:
        if not (args.train and args.val):
            ap.error("--train and --val are required unless --synthetic is given")
        train_set = load_fewrel(args.train, "train")
        val_full = load_fewrel(args.val, "val")
        cfg = TrainConfig.from_json_file(args.config) if args.config else TrainConfig()
        cfg = dataclasses.replace(cfg, vectors=args.vectors or cfg.vectors, seed=args.seed)
        vectors = None

    val_set, holdout = split_holdout(val_full, args.holdout, args.seed)
    vocab = None
    if vectors is not None:
        vocab = build_vocab([train_set, val_set, holdout], vectors, seed=cfg.seed)
    reports = run_ablation(cfg, train_set, val_set, holdout, TABLE_SETTINGS, args.episodes, args.seed,
                           log=sys.stderr, vocab=vocab)
    print_ablation_table(reports)
    if args.csv:
        write_report_csv(reports, args.csv)


if __name__ == "__main__":
    main()
