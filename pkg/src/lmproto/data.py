"""FewRel loading, vocabulary, position features and five-way segmentation."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

UNK_TOKEN = "<unk>"
PAD_TOKEN = "<pad>"
MAX_SENTENCE_LEN = 128
SPLITS = ("train", "val", "test")


class FewRelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TokenizedInstance:
    """One sentence with its head/tail entity spans (inclusive token ranges)."""

    tokens: tuple[str, ...]
    head_span: tuple[int, int]
    tail_span: tuple[int, int]
    relation_id: str

    def __post_init__(self):
        n = len(self.tokens)
        if n < 2:
            raise ValueError("an instance needs at least 2 tokens")
        for name, (a, b) in (("head", self.head_span), ("tail", self.tail_span)):
            if not 0 <= a <= b < n:
                raise ValueError(f"{name} span {(a, b)} out of range for {n} tokens")
        if spans_overlap(self.head_span, self.tail_span):
            raise ValueError(f"head span {self.head_span} overlaps tail span {self.tail_span}")


def spans_overlap(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


@dataclass
class RelationDataset:
    relations: dict[str, list[TokenizedInstance]]
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split tag {self.split!r}")

    @property
    def relation_ids(self) -> list[str]:
        return list(self.relations)

    def __len__(self) -> int:
        return len(self.relations)

    def n_instances(self) -> int:
        return sum(len(v) for v in self.relations.values())


def check_disjoint(*datasets: RelationDataset) -> None:
    """Raise if any two datasets share a relation id."""
    owner: dict[str, int] = {}
    for i, ds in enumerate(datasets):
        for rel in ds.relations:
            if rel in owner:
                raise ValueError(
                    f"relation {rel!r} appears in both dataset #{owner[rel]} "
                    f"({datasets[owner[rel]].split}) and dataset #{i} ({ds.split})"
                )
            owner[rel] = i


# -- loading -----------------------------------------------------------------
def _first_run(indices) -> tuple[int, int]:
    idx = sorted(int(i) for i in indices)
    if not idx:
        raise ValueError("empty entity index list")
    end = idx[0]
    for i in idx[1:]:
        if i != end + 1:
            break
        end = i
    return idx[0], end


def _entity_span(field_value) -> tuple[int, int]:
    # [surface, kb_id, [[indices], [indices], ...]]
    mentions = field_value[2]
    return _first_run(mentions[0])


def parse_fewrel(raw: dict, split: str = "train") -> RelationDataset:
    relations: dict[str, list[TokenizedInstance]] = {}
    dropped = 0
    for rel, items in raw.items():
        insts = []
        for i, item in enumerate(items):
            try:
                tokens = tuple(item["tokens"])
                head = _entity_span(item["h"])
                tail = _entity_span(item["t"])
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise FewRelFormatError(
                    f"relation {rel!r}, instance {i}: missing or malformed h/t/tokens ({exc!r})"
                ) from None
            if spans_overlap(head, tail):
                dropped += 1
                continue
            tokens, head, tail = truncate_instance(tokens, head, tail)
            insts.append(TokenizedInstance(tokens, head, tail, rel))
        relations[rel] = insts
    if dropped:
        logger.warning("dropped %d instances with overlapping head/tail spans", dropped)
    return RelationDataset(relations, split)


def load_fewrel(path, split: str = "train") -> RelationDataset:
    """Read a FewRel-format JSON file (relation id -> list of instances)."""
    raw_bytes = Path(path).read_bytes()
    text = raw_bytes.decode("utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise FewRelFormatError(f"{path}: invalid JSON at byte offset {offset}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise FewRelFormatError(f"{path}: top level must be an object of relation id -> instances")
    return parse_fewrel(raw, split)


def to_fewrel_json(dataset: RelationDataset) -> dict:
    """Inverse of ``parse_fewrel`` for instances that need no truncation."""
    def ent(inst, span, tag):
        a, b = span
        return [" ".join(inst.tokens[a:b + 1]), f"{tag}{a}", [list(range(a, b + 1))]]

    return {
        rel: [{"tokens": list(i.tokens), "h": ent(i, i.head_span, "Q"), "t": ent(i, i.tail_span, "Q")} for i in insts]
        for rel, insts in dataset.relations.items()
    }


def save_fewrel(dataset: RelationDataset, path) -> None:
    Path(path).write_text(json.dumps(to_fewrel_json(dataset)), encoding="utf-8")


def truncate_instance(tokens, head, tail, max_len: int = MAX_SENTENCE_LEN):
    """Cap a sentence at ``max_len`` tokens without cutting either entity span.

    Non-entity tokens are removed from the end first.
    """
    if len(tokens) <= max_len:
        return tuple(tokens), head, tail
    keep = set(range(head[0], head[1] + 1)) | set(range(tail[0], tail[1] + 1))
    if len(keep) > max_len:
        raise ValueError("entity spans alone exceed the sentence length cap")
    budget = max_len - len(keep)
    for i in range(len(tokens)):
        if budget == 0:
            break
        if i not in keep:
            keep.add(i)
            budget -= 1
    kept = sorted(keep)
    remap = {old: new for new, old in enumerate(kept)}
    new_tokens = tuple(tokens[i] for i in kept)
    return (
        new_tokens,
        (remap[head[0]], remap[head[1]]),
        (remap[tail[0]], remap[tail[1]]),
    )


def split_holdout(dataset: RelationDataset, n_holdout: int, seed: int = 0):
    """Move ``n_holdout`` seeded-random relations into a separate dataset."""
    rels = dataset.relation_ids
    if n_holdout >= len(rels) and n_holdout > 0:
        raise ValueError(f"cannot hold out {n_holdout} of {len(rels)} relations")
    if n_holdout < 0:
        raise ValueError("n_holdout must be non-negative")
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(len(rels), size=n_holdout, replace=False).tolist())
    held = {r: dataset.relations[r] for i, r in enumerate(rels) if i in chosen}
    rest = {r: dataset.relations[r] for i, r in enumerate(rels) if i not in chosen}
    reduced = RelationDataset(rest, dataset.split)
    holdout = RelationDataset(held, "test")
    check_disjoint(reduced, holdout)
    return reduced, holdout


# -- vocabulary ----------------------------------------------------------------
@dataclass
class Vocab:
    words: list[str]
    embeddings: np.ndarray
    lowercase: bool = True
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.words)}
        if self.embeddings.shape[0] != len(self.words):
            raise ValueError("embedding rows do not match vocabulary size")

    @property
    def unk(self) -> int:
        return self.index[UNK_TOKEN]

    @property
    def pad(self) -> int:
        return self.index[PAD_TOKEN]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self) -> int:
        return len(self.words)

    def lookup(self, token: str) -> int:
        key = token.lower() if self.lowercase else token
        return self.index.get(key, self.unk)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]


def read_word_vectors(path, wanted: set[str] | None = None) -> tuple[dict[str, np.ndarray], int]:
    """Parse a plain-text vector file (``word v1 ... vD`` per line).

    A ``.json`` path is read as a list of ``{"word": ..., "vec": [...]}``
    records, the layout the FewRel release ships its GloVe vectors in.
    """
    if str(path).endswith(".json"):
        return _read_json_vectors(path, wanted)
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if not parts or parts == [""]:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue  # word2vec-style "count dim" header
            d = len(parts) - 1
            if dim is None:
                dim = d
            elif d != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, found {d}")
            if wanted is not None and parts[0] not in wanted:
                continue
            vectors[parts[0]] = np.asarray(parts[1:], dtype=np.float32)
    if dim is None:
        raise ValueError(f"{path}: no vectors found")
    return vectors, dim


def _read_json_vectors(path, wanted: set[str] | None) -> tuple[dict[str, np.ndarray], int]:
    records = json.loads(Path(path).read_text(encoding="utf-8"))
    vectors: dict[str, np.ndarray] = {}
    dim = None
    for i, rec in enumerate(records):
        vec = np.asarray(rec["vec"], dtype=np.float32)
        if dim is None:
            dim = len(vec)
        elif len(vec) != dim:
            raise ValueError(f"{path}: record {i}: expected {dim} values, found {len(vec)}")
        if wanted is None or rec["word"] in wanted:
            vectors[rec["word"]] = vec
    if dim is None:
        raise ValueError(f"{path}: no vectors found")
    return vectors, dim


def build_vocab(
    datasets: Sequence[RelationDataset],
    vectors=None,
    dim: int = 50,
    seed: int = 0,
    lowercase: bool = True,
) -> Vocab:
    """Vocabulary over every token in ``datasets``, then UNK and PAD.

    ``vectors`` is a vector-file path or an in-memory word -> vector mapping.
    Words found there take their pretrained rows; the rest get seeded
    uniform(-0.25, 0.25) rows. The PAD row is zero.
    """
    seen: set[str] = set()
    for ds in datasets:
        for insts in ds.relations.values():
            for inst in insts:
                for tok in inst.tokens:
                    seen.add(tok.lower() if lowercase else tok)
    words = sorted(seen)
    pretrained: dict[str, np.ndarray] = {}
    if isinstance(vectors, dict):
        pretrained = vectors
        if pretrained:
            dim = len(next(iter(pretrained.values())))
    elif vectors is not None:
        pretrained, dim = read_word_vectors(vectors, wanted=seen)
    rng = np.random.default_rng(seed)
    table = rng.uniform(-0.25, 0.25, size=(len(words) + 2, dim)).astype(np.float32)
    for i, w in enumerate(words):
        if w in pretrained:
            table[i] = pretrained[w]
    table[-1] = 0.0
    return Vocab(words + [UNK_TOKEN, PAD_TOKEN], table, lowercase)


# -- features ----------------------------------------------------------------
@dataclass(frozen=True)
class PositionFeatures:
    head: np.ndarray
    tail: np.ndarray


def encode_positions(inst: TokenizedInstance, max_rel: int = MAX_SENTENCE_LEN) -> PositionFeatures:
    """Token offsets to the head/tail start, clipped to +-max_rel and shifted >= 0."""
    idx = np.arange(len(inst.tokens))
    head = np.clip(idx - inst.head_span[0], -max_rel, max_rel) + max_rel
    tail = np.clip(idx - inst.tail_span[0], -max_rel, max_rel) + max_rel
    return PositionFeatures(head.astype(np.int64), tail.astype(np.int64))


SEGMENT_NAMES = ("r_front", "head", "r_mid", "tail", "r_back")


@dataclass(frozen=True)
class FiveSegments:
    """Token-id phrases in the fixed order front, head, middle, tail, back.

    ``positions`` holds the source token index of each id, or -1 for an
    inserted PAD filler.
    """

    r_front: tuple[int, ...]
    head: tuple[int, ...]
    r_mid: tuple[int, ...]
    tail: tuple[int, ...]
    r_back: tuple[int, ...]
    positions: tuple[tuple[int, ...], ...] = ()

    def as_list(self) -> list[tuple[int, ...]]:
        return [self.r_front, self.head, self.r_mid, self.tail, self.r_back]

    def textual_order(self, head_first: bool) -> list[tuple[int, ...]]:
        first, second = (self.head, self.tail) if head_first else (self.tail, self.head)
        return [self.r_front, first, self.r_mid, second, self.r_back]


def segment_instance(inst: TokenizedInstance, vocab: Vocab | None = None) -> FiveSegments:
    """Split a sentence around its two entities.

    Relation-mention segments are taken in textual order; the head/tail slots
    always hold the head/tail entity. Empty relation segments become a single
    PAD. Without a vocab the "ids" are the raw tokens.
    """
    h, t = inst.head_span, inst.tail_span
    if spans_overlap(h, t):
        raise ValueError("overlapping entity spans")
    first, second = (h, t) if h[0] < t[0] else (t, h)
    n = len(inst.tokens)
    ranges = {
        "r_front": range(0, first[0]),
        "head": range(h[0], h[1] + 1),
        "r_mid": range(first[1] + 1, second[0]),
        "tail": range(t[0], t[1] + 1),
        "r_back": range(second[1] + 1, n),
    }
    if vocab is None:
        conv = lambda toks: list(toks)  # noqa: E731
        pad = PAD_TOKEN
    else:
        conv = vocab.ids
        pad = vocab.pad
    segs, poss = [], []
    for name in SEGMENT_NAMES:
        r = ranges[name]
        if len(r) == 0:
            segs.append((pad,))
            poss.append((-1,))
        else:
            segs.append(tuple(conv(inst.tokens[i] for i in r)))
            poss.append(tuple(r))
    return FiveSegments(*segs, positions=tuple(poss))


@dataclass(frozen=True)
class FeaturizedInstance:
    """Everything an encoder needs, precomputed once per instance."""

    token_ids: np.ndarray
    pos_head: np.ndarray
    pos_tail: np.ndarray
    segments: FiveSegments
    relation_id: str


def featurize(inst: TokenizedInstance, vocab: Vocab, max_rel: int = MAX_SENTENCE_LEN) -> FeaturizedInstance:
    pos = encode_positions(inst, max_rel)
    return FeaturizedInstance(
        token_ids=np.asarray(vocab.ids(inst.tokens), dtype=np.int64),
        pos_head=pos.head,
        pos_tail=pos.tail,
        segments=segment_instance(inst, vocab),
        relation_id=inst.relation_id,
    )


def featurize_dataset(dataset: RelationDataset, vocab: Vocab, max_rel: int = MAX_SENTENCE_LEN) -> dict[str, list[FeaturizedInstance]]:
    return {
        rel: [featurize(inst, vocab, max_rel) for inst in insts]
        for rel, insts in dataset.relations.items()
    }
