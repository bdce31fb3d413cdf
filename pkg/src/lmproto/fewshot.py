"""Episodes, prototypes, distance classification and the two episode losses."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

TRIPLET_POLICIES = ("all-pairs", "semi-hard")


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int
    k_shot: int
    n_query: int = 5

    def __post_init__(self):
        if self.n_way < 2:
            raise ValueError("n_way must be >= 2")
        if self.k_shot < 1:
            raise ValueError("k_shot must be >= 1")
        if self.n_query < 0:
            raise ValueError("n_query must be >= 0")

    @property
    def label(self) -> str:
        return f"{self.n_way}-way-{self.k_shot}-shot"


@dataclass
class Episode:
    """``support[c]`` / ``query[c]`` hold the instances of local class ``c``."""

    classes: list[str]
    support: list[list]
    query: list[list]

    @property
    def n_way(self) -> int:
        return len(self.classes)

    @property
    def k_shot(self) -> int:
        return len(self.support[0])

    def flat_support(self) -> list:
        return [x for cls in self.support for x in cls]

    def flat_query(self) -> list:
        return [x for cls in self.query for x in cls]

    def query_labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_way), [len(q) for q in self.query])

    def support_labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_way), [len(s) for s in self.support])


@dataclass
class LossConfig:
    gamma: float = 5.0
    lam: float = 1.0
    triplet_policy: str = "all-pairs"

    def __post_init__(self):
        if self.gamma < 0 or self.lam < 0:
            raise ValueError("gamma and lambda must be non-negative")
        if self.triplet_policy not in TRIPLET_POLICIES:
            raise ValueError(f"triplet_policy must be one of {TRIPLET_POLICIES}")


def _relations(dataset) -> Mapping[str, Sequence]:
    return dataset.relations if hasattr(dataset, "relations") else dataset


def sample_episode(dataset, spec: EpisodeSpec, rng: np.random.Generator) -> Episode:
    """Draw N relations, then K+Q distinct instances of each (first K support)."""
    rels = _relations(dataset)
    ids = list(rels)
    if len(ids) < spec.n_way:
        raise ValueError(
            f"cannot sample a {spec.n_way}-way episode from {len(ids)} relations"
        )
    need = spec.k_shot + spec.n_query
    chosen = [ids[i] for i in rng.choice(len(ids), size=spec.n_way, replace=False)]
    support, query = [], []
    for rel in chosen:
        pool = rels[rel]
        if len(pool) < need:
            raise ValueError(
                f"relation {rel!r} has {len(pool)} instances, episode needs {need}"
            )
        picks = rng.choice(len(pool), size=need, replace=False)
        support.append([pool[i] for i in picks[: spec.k_shot]])
        query.append([pool[i] for i in picks[spec.k_shot :]])
    return Episode(chosen, support, query)


def episode_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for episode ``index`` of a seeded stream."""
    return np.random.default_rng([seed, stream, index])


def compute_prototypes(support_embeddings: Tensor) -> Tensor:
    """Per-class mean of an ``(N, K, D)`` support tensor."""
    support_embeddings = T.as_tensor(support_embeddings)
    if support_embeddings.shape[1] == 1:
        return support_embeddings.reshape(support_embeddings.shape[0], support_embeddings.shape[2])
    return support_embeddings.mean(axis=1)


def classify_query(query_emb, protos):
    """Logits are negative squared distances; ties go to the lowest index.

    Accepts one query ``(D,)`` or a batch ``(M, D)``.
    """
    q = T.as_tensor(query_emb)
    p = T.as_tensor(protos)
    if q.shape[-1] != p.shape[-1]:
        raise ValueError(f"query dim {q.shape[-1]} does not match prototype dim {p.shape[-1]}")
    if q.ndim == 1:
        logits = -T.squared_euclidean(q.reshape(1, -1), p)
        return logits, int(np.argmax(logits.data))
    logits = -T.pairwise_squared_euclidean(q, p)
    return logits, logits.data.argmax(axis=1)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class EpisodeForward:
    support_emb: Tensor  # (N*K, D)
    query_emb: Tensor  # (N*Q, D)
    prototypes: Tensor  # (N, D)
    sq_dists: Tensor  # (N*Q, N)
    labels: np.ndarray  # (N*Q,)


def episode_forward(encoder, episode: Episode) -> EpisodeForward:
    sup = episode.flat_support()
    qry = episode.flat_query()
    emb = encoder.encode(sup + qry)
    n, k = episode.n_way, episode.k_shot
    s_emb = emb[: len(sup)]
    q_emb = emb[len(sup) :]
    protos = compute_prototypes(s_emb.reshape(n, k, emb.shape[1]))
    d = T.pairwise_squared_euclidean(q_emb, protos)
    return EpisodeForward(s_emb, q_emb, protos, d, episode.query_labels())


def softmax_loss_from(fwd: EpisodeForward) -> Tensor:
    return T.log_softmax_xent(-fwd.sq_dists, fwd.labels)


def triplet_loss_from(fwd: EpisodeForward, gamma: float, policy: str = "all-pairs") -> Tensor:
    """Prototype-anchored hinge ``max(0, gamma + d(a, p) - d(a, n))``.

    Anchor is the prototype of class c, positives are queries of c and
    negatives are queries of any other class. ``all-pairs`` averages over
    every (c, positive, negative); ``semi-hard`` keeps, per positive, only the
    negative closest to the anchor.
    """
    if policy not in TRIPLET_POLICIES:
        raise ValueError(f"unknown triplet policy {policy!r}")
    labels = fwd.labels
    d = fwd.sq_dists
    m = len(labels)
    if policy == "all-pairs":
        pos, neg = np.nonzero(labels[:, None] != labels[None, :])
        cls = labels[pos]
    else:
        dd = d.data
        pos = np.arange(m)
        cls = labels
        neg = np.empty(m, dtype=np.int64)
        for i, c in enumerate(labels):
            cand = np.nonzero(labels != c)[0]
            neg[i] = cand[np.argmin(dd[cand, c])]
    if len(pos) == 0:
        return Tensor(np.zeros((), dtype=d.dtype))
    d_ap = d[(pos, cls)]
    d_an = d[(neg, cls)]
    return T.relu(d_ap - d_an + gamma).mean()


def episode_softmax_loss(encoder, episode: Episode) -> Tensor:
    return softmax_loss_from(episode_forward(encoder, episode))


def episode_triplet_loss(encoder, episode: Episode, gamma: float, policy: str = "all-pairs") -> Tensor:
    return triplet_loss_from(episode_forward(encoder, episode), gamma, policy)


def combined_loss(encoder, episode: Episode, cfg: LossConfig, return_parts: bool = False):
    """Softmax cross-entropy plus ``lam`` times the triplet loss.

    With ``lam == 0`` the triplet branch is never built.
    """
    fwd = episode_forward(encoder, episode)
    soft = softmax_loss_from(fwd)
    trip = None
    loss = soft
    if cfg.lam != 0:
        trip = triplet_loss_from(fwd, cfg.gamma, cfg.triplet_policy)
        loss = soft + trip * cfg.lam
    if return_parts:
        return loss, soft, trip
    return loss


def knn_predict(support_embs: np.ndarray, support_labels: np.ndarray, query_emb: np.ndarray, k: int) -> int:
    """Majority vote of the ``k`` nearest supports.

    Vote ties go to the class with the smaller mean distance among its
    selected neighbours, then to the lower class index. Equal distances are
    ordered by support position.
    """
    support_embs = np.asarray(support_embs, dtype=np.float64)
    support_labels = np.asarray(support_labels)
    if support_embs.ndim == 3:
        n, kk, dim = support_embs.shape
        support_embs = support_embs.reshape(n * kk, dim)
    if not 1 <= k <= len(support_embs):
        raise ValueError(f"k must be in [1, {len(support_embs)}], got {k}")
    dist = ((support_embs - np.asarray(query_emb, dtype=np.float64)) ** 2).sum(axis=1)
    order = np.argsort(dist, kind="stable")[:k]
    votes = Counter(int(support_labels[i]) for i in order)
    best = None
    for c, count in votes.items():
        mean_d = float(np.mean([dist[i] for i in order if support_labels[i] == c]))
        key = (-count, mean_d, c)
        if best is None or key < best:
            best = key
    return best[2]
