"""Episodic training, seeded evaluation and the four-variant ablation grid."""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .config import TrainConfig
from .data import RelationDataset, Vocab, build_vocab, check_disjoint, featurize_dataset
from .encoders import FewShotEncoder
from .fewshot import (
    EpisodeSpec,
    combined_loss,
    compute_prototypes,
    episode_rng,
    knn_predict,
    sample_episode,
)
from .optim import OptimizerState, optimizer_step

logger = logging.getLogger(__name__)

TRAIN_STREAM = 1
EVAL_STREAM = 2

# The four settings of the result tables.
TABLE_SETTINGS = (
    EpisodeSpec(5, 1, 5),
    EpisodeSpec(5, 5, 5),
    EpisodeSpec(10, 1, 5),
    EpisodeSpec(10, 5, 5),
)
REPORT_HEADER = ("model", "setting", "n_episodes", "accuracy", "ci95", "seed")


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class EvalReport:
    model: str
    spec: EpisodeSpec
    n_episodes: int
    accuracy: float  # percent
    ci95: float  # percent, normal-approximation half-width
    seed: int

    def row(self) -> tuple:
        return (self.model, self.spec.label, self.n_episodes, f"{self.accuracy:.4f}", f"{self.ci95:.4f}", self.seed)

    def __str__(self) -> str:
        return f"{self.model} {self.spec.label}: {self.accuracy:.2f} +- {self.ci95:.2f} ({self.n_episodes} episodes)"


def write_report_csv(reports: Iterable[EvalReport], out: str | TextIO) -> None:
    rows = [r.row() for r in reports]
    if isinstance(out, str):
        with open(out, "w", newline="", encoding="utf-8") as fh:
            _write_rows(fh, rows)
    else:
        _write_rows(out, rows)


def _write_rows(fh, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    w.writerows(rows)


# -- evaluation -----------------------------------------------------------------
def episode_accuracy(encoder: FewShotEncoder, dataset, spec: EpisodeSpec, seed: int, index: int, classifier: str = "proto") -> float:
    ep = sample_episode(dataset, spec, episode_rng(seed, index, EVAL_STREAM))
    with T.no_grad():
        emb = encoder.encode(ep.flat_support() + ep.flat_query()).data
    n_sup = spec.n_way * spec.k_shot
    s_emb, q_emb = emb[:n_sup], emb[n_sup:]
    labels = ep.query_labels()
    if classifier == "proto":
        protos = compute_prototypes(T.Tensor(s_emb.reshape(spec.n_way, spec.k_shot, -1))).data
        d = ((q_emb[:, None, :] - protos[None, :, :]) ** 2).sum(axis=-1)
        preds = (-d).argmax(axis=1)
    elif classifier == "knn":
        s_labels = ep.support_labels()
        preds = np.array([knn_predict(s_emb, s_labels, q, spec.k_shot) for q in q_emb])
    else:
        raise ValueError(f"unknown classifier {classifier!r}")
    return float(np.mean(preds == labels))


def summarize(accs: Sequence[float]) -> tuple[float, float]:
    """Mean accuracy and 95% half-width, both in percent.

    The standard deviation of a single episode is taken to be 0.
    """
    a = np.asarray(accs, dtype=np.float64)
    mean = 100.0 * a.mean()
    if len(a) < 2:
        return mean, 0.0
    half = 100.0 * 1.96 * a.std(ddof=1) / math.sqrt(len(a))
    return mean, half


def evaluate_encoder(
    encoder: FewShotEncoder,
    dataset,
    spec: EpisodeSpec,
    n_episodes: int,
    seed: int,
    classifier: str = "proto",
    workers: int = 1,
    model_name: str = "model",
) -> EvalReport:
    """Accuracy over ``n_episodes`` seeded episodes.

    Episode ``i`` always draws from the stream ``(seed, i)``, so the report
    does not depend on ``workers``.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    job = lambda i: episode_accuracy(encoder, dataset, spec, seed, i, classifier)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accs = list(pool.map(job, range(n_episodes)))
    else:
        accs = [job(i) for i in range(n_episodes)]
    mean, half = summarize(accs)
    return EvalReport(model_name, spec, n_episodes, mean, half, seed)


def evaluate(
    checkpoint: Checkpoint,
    dataset: RelationDataset,
    spec: EpisodeSpec,
    n_episodes: int,
    seed: int,
    classifier: str = "proto",
    workers: int = 1,
) -> EvalReport:
    encoder = checkpoint.encoder()
    feats = featurize_dataset(dataset, encoder.vocab, encoder.cfg.max_rel)
    name = checkpoint.config.model_name
    if classifier == "knn":
        name = f"KNN ({checkpoint.config.encoder.mode.upper()})"
    return evaluate_encoder(encoder, feats, spec, n_episodes, seed, classifier, workers, name)


# -- training --------------------------------------------------------------------
def train(
    config: TrainConfig,
    train_set: RelationDataset,
    val_set: RelationDataset,
    vocab: Vocab | None = None,
    log: TextIO | None = None,
    extra_vocab_sets: Sequence[RelationDataset] = (),
    on_step: Callable[[int, float], None] | None = None,
) -> Checkpoint:
    """Train one model and return its best-on-validation checkpoint.

    ``log`` receives ``episode<TAB>loss<TAB>val_acc`` per evaluation
    interval, where loss is the mean training loss over the interval.
    """
    check_disjoint(train_set, val_set)
    if vocab is None:
        vocab = build_vocab(
            [train_set, val_set, *extra_vocab_sets],
            config.vectors,
            dim=config.word_dim,
            seed=config.seed,
        )
    encoder = FewShotEncoder(config.encoder, vocab, seed=config.seed)
    train_feats = featurize_dataset(train_set, vocab, config.encoder.max_rel)
    val_feats = featurize_dataset(val_set, vocab, config.encoder.max_rel)
    loss_cfg = config.effective_loss()
    opt = OptimizerState(config.optimizer)
    interval = config.interval

    best_acc = -1.0
    best_params = None
    running = []
    for episode in range(1, config.n_train + 1):
        ep = sample_episode(train_feats, config.train_spec, episode_rng(config.seed, episode, TRAIN_STREAM))
        loss, soft, trip = combined_loss(encoder, ep, loss_cfg, return_parts=True)
        value = loss.item()
        if not math.isfinite(value):
            raise NonFiniteLossError(
                f"non-finite loss at episode {episode} (seed {config.seed}): "
                f"total={value}, softmax={soft.item()}, "
                f"triplet={None if trip is None else trip.item()}"
            )
        loss.backward()
        optimizer_step(opt, encoder.params)
        running.append(value)
        if on_step is not None:
            on_step(episode, value)

        if episode % interval == 0 or episode == config.n_train:
            report = evaluate_encoder(
                encoder, val_feats, config.val_spec, config.val_episodes, config.seed,
                model_name=config.model_name,
            )
            mean_loss = float(np.mean(running))
            running.clear()
            if log is not None:
                log.write(f"{episode}\t{mean_loss:.6f}\t{report.accuracy:.4f}\n")
                log.flush()
            logger.info("episode %d loss %.4f val %.2f", episode, mean_loss, report.accuracy)
            if report.accuracy > best_acc:
                best_acc = report.accuracy
                best_params = {k: t.data.copy() for k, t in encoder.params.items()}

    ckpt = Checkpoint.from_encoder(config, encoder, episodes=config.n_train, best_val_acc=best_acc)
    ckpt.params = best_params
    return ckpt


# -- ablation ----------------------------------------------------------------------
ABLATION_VARIANTS = (
    ("softmax", "cnn"),
    ("softmax", "fgf"),
    ("softmax+triplet", "cnn"),
    ("softmax+triplet", "fgf"),
)


def variant_config(base: TrainConfig, objective: str, mode: str) -> TrainConfig:
    enc = dataclasses.replace(base.encoder, mode=mode)
    return dataclasses.replace(base, objective=objective, encoder=enc)


def run_ablation(
    base_config: TrainConfig,
    train_set: RelationDataset,
    val_set: RelationDataset,
    holdout: RelationDataset,
    settings: Sequence[EpisodeSpec] = TABLE_SETTINGS,
    n_episodes: int = 10_000,
    seed: int | None = None,
    log: TextIO | None = None,
    vocab: Vocab | None = None,
) -> list[EvalReport]:
    """Train {ProtoNet, LM-ProtoNet} x {CNN, FGF} and evaluate each setting.

    Settings wider than the holdout fall back to holdout + validation
    relations (logged); the models never see either set during training.
    """
    check_disjoint(train_set, val_set, holdout)
    seed = base_config.seed if seed is None else seed
    if vocab is None:
        vocab = build_vocab([train_set, val_set, holdout], base_config.vectors, dim=base_config.word_dim, seed=base_config.seed)
    merged = RelationDataset({**holdout.relations, **val_set.relations}, "test")
    reports: list[EvalReport] = []
    for objective, mode in ABLATION_VARIANTS:
        cfg = variant_config(base_config, objective, mode)
        if log is not None:
            log.write(f"# {cfg.model_name}\n")
        ckpt = train(cfg, train_set, val_set, vocab=vocab, log=log)
        for spec in settings:
            target = holdout
            if spec.n_way > len(holdout):
                logger.warning(
                    "%s needs %d relations, holdout has %d; evaluating on holdout+val",
                    spec.label, spec.n_way, len(holdout),
                )
                target = merged
            reports.append(evaluate(ckpt, target, spec, n_episodes, seed))
    return reports


def print_ablation_table(reports: Sequence[EvalReport], out: TextIO = sys.stdout) -> None:
    settings = list(dict.fromkeys(r.spec.label for r in reports))
    models = list(dict.fromkeys(r.model for r in reports))
    cell = {(r.model, r.spec.label): r for r in reports}
    out.write("model".ljust(20) + "".join(s.rjust(20) for s in settings) + "\n")
    for m in models:
        vals = [f"{cell[m, s].accuracy:.2f}+-{cell[m, s].ci95:.2f}" for s in settings]
        out.write(m.ljust(20) + "".join(v.rjust(20) for v in vals) + "\n")
