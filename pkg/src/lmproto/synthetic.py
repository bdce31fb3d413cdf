"""Synthetic template corpus where one marker word identifies the relation.

Each sentence fills a fixed template with a head entity, a tail entity and
the relation's marker word. Marker vectors live in the first
``marker_dims`` coordinates, template and entity words in the remaining
ones. Entity words are drawn per sentence and have a larger norm, so a
random encoder sees mostly entity noise while a trained one can learn to
read the marker subspace, including for relations it never saw.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import RelationDataset, TokenizedInstance

TEMPLATES = (
    "the {h} was {m} by the {t} .",
    "{h} , {m} , {t} in the city .",
    "in 1990 the {h} {m} {t} .",
    "it is said that {h} {m} the {t} today .",
    "{h} {m} {t}",
)
TEMPLATE_WORDS = sorted(
    {w for t in TEMPLATES for w in t.split() if not w.startswith("{")}
)


def simplex_vertices(dims: int, rng: np.random.Generator) -> np.ndarray:
    """``dims + 1`` unit vectors with pairwise cosine ``-1 / dims``, randomly rotated."""
    n = dims + 1
    centered = np.eye(n) - 1.0 / n
    basis = np.linalg.svd(centered)[0][:, :dims]  # orthonormal basis of the sum-zero plane
    pts = centered @ basis
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    rot, _ = np.linalg.qr(rng.normal(size=(dims, dims)))
    return pts @ rot


def spread_unit_vectors(n: int, dims: int, rng: np.random.Generator, max_cos: float = 0.75,
                        tries: int = 10_000, start: np.ndarray | None = None) -> np.ndarray:
    """``n`` unit vectors with pairwise cosine at most ``max_cos``.

    ``start`` rows are kept as the first vectors; the rest are sampled.
    """
    out: list[np.ndarray] = [] if start is None else list(start)
    if len(out) >= n:
        return np.stack(out[:n])
    for _ in range(tries):
        u = rng.normal(size=dims)
        u /= np.linalg.norm(u)
        if all(float(u @ v) <= max_cos for v in out):
            out.append(u)
            if len(out) == n:
                return np.stack(out)
    raise ValueError(f"could not place {n} markers in {dims} dims with cos <= {max_cos}")


def marker_vectors(n_relations: int, dim: int = 50, marker_dims: int = 4, n_entities: int = 30,
                   entity_scale: float = 2.0, seed: int = 0, max_cos: float = 0.75) -> dict[str, np.ndarray]:
    """Pretrained-style vectors for every word the corpus can produce.

    The last ``marker_dims + 1`` markers form a regular simplex, so the
    relations meant for held-out evaluation are equally far apart; the
    others are sampled with pairwise cosine at most ``max_cos``.
    """
    rng = np.random.default_rng(seed)
    vecs: dict[str, np.ndarray] = {}
    held = simplex_vertices(marker_dims, rng)[: n_relations]
    rest = spread_unit_vectors(n_relations, marker_dims, rng, max_cos, start=held)[len(held):]
    markers = np.concatenate([rest, held])
    for r in range(n_relations):
        v = np.zeros(dim, np.float32)
        v[:marker_dims] = markers[r]
        vecs[f"marker{r}"] = v

    def other(scale: float) -> np.ndarray:
        v = np.zeros(dim, np.float32)
        u = rng.normal(size=dim - marker_dims)
        v[marker_dims:] = scale * u / np.linalg.norm(u)
        return v

    for w in TEMPLATE_WORDS:
        vecs[w] = other(1.0)
    for i in range(n_entities):
        vecs[f"ent{i}"] = other(entity_scale)
    return vecs


def make_marker_corpus(
    relation_ids,
    per_relation: int = 40,
    n_entities: int = 30,
    signal: bool = True,
    seed: int = 0,
    split: str = "train",
    n_markers: int | None = None,
) -> RelationDataset:
    """One dataset with relation ``R{r}`` for every ``r`` in ``relation_ids``.

    Relation ``r`` always uses ``marker{r}``. With ``signal=False`` every
    sentence gets a random marker instead, so labels carry no information.
    """
    rng = np.random.default_rng(seed)
    relation_ids = list(relation_ids)
    n_markers = n_markers or (max(relation_ids) + 1)
    relations: dict[str, list[TokenizedInstance]] = {}
    for r in relation_ids:
        insts = []
        for _ in range(per_relation):
            template = TEMPLATES[rng.integers(len(TEMPLATES))].split()
            e1, e2 = (f"ent{i}" for i in rng.choice(n_entities, size=2, replace=False))
            m = r if signal else int(rng.integers(n_markers))
            head_first = rng.random() < 0.5
            fill = {"{h}": e1 if head_first else e2, "{m}": f"marker{m}", "{t}": e2 if head_first else e1}
            toks = [fill.get(w, w) for w in template]
            a, b = template.index("{h}"), template.index("{t}")
            head, tail = ((a, a), (b, b)) if head_first else ((b, b), (a, a))
            insts.append(TokenizedInstance(tuple(toks), head, tail, f"R{r}"))
        relations[f"R{r}"] = insts
    return RelationDataset(relations, split)


def marker_task(seed: int = 0, n_train_relations: int = 10, n_val_relations: int = 5, per_relation: int = 40):
    """Train/val corpora on disjoint relations plus matching word vectors."""
    n = n_train_relations + n_val_relations
    train = make_marker_corpus(range(n_train_relations), per_relation, seed=1 + seed)
    val = make_marker_corpus(range(n_train_relations, n), per_relation, seed=100 + seed, split="val")
    return train, val, marker_vectors(n, seed=seed)


def marker_train_config(mode: str = "cnn", seed: int = 0, n_train: int = 2000, **overrides):
    """A small configuration that learns the marker task in a few thousand episodes."""
    from .config import TrainConfig
    from .encoders import EncoderConfig
    from .fewshot import EpisodeSpec, LossConfig
    from .optim import OptimizerConfig

    kw = dict(
        encoder=EncoderConfig(mode=mode, filters=32, phrase_filters=16, hidden=32, max_rel=20),
        loss=LossConfig(gamma=1.0, lam=1.0),
        optimizer=OptimizerConfig(learning_rate=0.1),
        train_spec=EpisodeSpec(10, 1, 5),
        val_spec=EpisodeSpec(5, 1, 5),
        n_train=n_train,
        eval_every=max(1, n_train // 4),
        val_episodes=300,
        seed=seed,
    )
    kw.update(overrides)
    return TrainConfig(**kw)


def write_word_vectors(vectors: dict[str, np.ndarray], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for w in sorted(vectors):
            fh.write(w + " " + " ".join(repr(float(x)) for x in vectors[w]) + "\n")


def write_marker_task(out_dir, seed: int = 0, mode: str = "cnn", n_train: int = 2000, **overrides) -> dict[str, Path]:
    """Write train.json, val.json, vectors.txt and config.json for the CLI."""
    import dataclasses

    from .data import save_fewrel

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, val, vecs = marker_task(seed)
    paths = {k: out / f"{k}.{ext}" for k, ext in (("train", "json"), ("val", "json"), ("vectors", "txt"), ("config", "json"))}
    save_fewrel(train, paths["train"])
    save_fewrel(val, paths["val"])
    write_word_vectors(vecs, paths["vectors"])
    cfg = marker_train_config(mode, seed, n_train, **overrides)
    cfg = dataclasses.replace(cfg, vectors=str(paths["vectors"].resolve()))
    paths["config"].write_text(cfg.to_json(), encoding="utf-8")
    return paths
