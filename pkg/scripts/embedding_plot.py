"""Embedding-space picture of one 7-way-40-shot episode: train, export,
project with t-SNE and plot, all through the CLI.

    python3 scripts/embedding_plot.py --workdir plot            # synthetic corpus
    python3 scripts/embedding_plot.py --workdir plot --ckpt m.ckpt --data val_wiki.json
"""
import argparse
import sys
from pathlib import Path

from lmproto.cli import main as cli
from lmproto.synthetic import write_marker_task


def run(argv: list[str]) -> None:
    print("lmproto " + " ".join(argv), file=sys.stderr)
    rc = cli(argv)
    if rc:
        sys.exit(rc)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--workdir", default="embedding_plot")
    ap.add_argument("--ckpt", help="existing checkpoint (trains on the marker corpus otherwise)")
    ap.add_argument("--data", help="FewRel-format relations to draw the episode from")
    ap.add_argument("--mode", choices=("cnn", "fgf"), default="fgf")
    ap.add_argument("--episodes", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    ckpt, data = args.ckpt, args.data
    if ckpt is None:
        paths = write_marker_task(work / "task", seed=args.seed, mode=args.mode, n_train=args.episodes)
        ckpt = str(work / "model.ckpt")
        run(["train", "--config", str(paths["config"]), "--train", str(paths["train"]),
             "--val", str(paths["val"]), "--out", ckpt])
        data = data or str(paths["train"])
    if data is None:
        ap.error("--data is required with --ckpt")
    emb, xy, svg = work / "embeddings.csv", work / "tsne.csv", work / "episode.svg"
    run(["export-emb", "--ckpt", ckpt, "--data", data, "--nway", "7", "--kshot", "40", "--seed", str(args.seed), "--out", str(emb)])
    run(["tsne", "--in", str(emb), "--seed", str(args.seed), "--out", str(xy)])
    run(["plot", "--in", str(xy), "--out", str(svg)])
    print(svg)


if __name__ == "__main__":
    main()
