"""Sentence CNN, five-phrase network and the fine-grained concatenation.

``encode`` returns one row per instance: the sentence-CNN feature alone in
``cnn`` mode, or the sentence feature followed by the phrase feature in
``fgf`` mode. All paths are batched; a batch of one gives exactly what the
instance would get inside any larger batch.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import (
    MAX_SENTENCE_LEN,
    FeaturizedInstance,
    TokenizedInstance,
    Vocab,
    featurize,
)
from .tensor import Tensor

N_SEGMENTS = 5


@dataclass
class EncoderConfig:
    mode: str = "fgf"  # cnn | fgf
    pos_dim: int = 5
    max_rel: int = MAX_SENTENCE_LEN
    filters: int = 230
    window: int = 3
    phrase_filters: int = 100
    phrase_window: int = 3
    hidden: int = 200
    phrase_cnn: str = "shared"  # shared | per_segment | tied
    sentence_positions: bool = True
    phrase_positions: bool = False

    def __post_init__(self):
        if self.mode not in ("cnn", "fgf"):
            raise ValueError(f"encoder mode must be 'cnn' or 'fgf', got {self.mode!r}")
        if self.phrase_cnn not in ("shared", "per_segment", "tied"):
            raise ValueError(f"unknown phrase_cnn {self.phrase_cnn!r}")
        if self.phrase_cnn == "tied":
            # the phrase branch reuses the sentence conv, so its inputs must match
            if self.phrase_positions != self.sentence_positions:
                raise ValueError("tied phrase CNN needs phrase_positions == sentence_positions")
            if self.phrase_window != self.window or self.phrase_filters != self.filters:
                raise ValueError("tied phrase CNN needs phrase window/filters equal to the sentence CNN's")

    @property
    def output_dim(self) -> int:
        return self.filters + (self.hidden if self.mode == "fgf" else 0)

    def to_dict(self) -> dict:
        return asdict(self)


def _xavier(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def init_params(cfg: EncoderConfig, word_embeddings: np.ndarray, seed: int = 0) -> dict[str, Tensor]:
    """Xavier-uniform weights and zero biases, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    d_word = word_embeddings.shape[1]
    n_pos = 2 * cfg.max_rel + 1
    params: dict[str, np.ndarray] = {"word_emb": word_embeddings.astype(np.float32).copy()}
    if cfg.sentence_positions or cfg.phrase_positions:
        params["pos_head_emb"] = _xavier(rng, (n_pos, cfg.pos_dim), n_pos, cfg.pos_dim)
        params["pos_tail_emb"] = _xavier(rng, (n_pos, cfg.pos_dim), n_pos, cfg.pos_dim)
    d_in = d_word + (2 * cfg.pos_dim if cfg.sentence_positions else 0)
    params["conv_kernel"] = _xavier(
        rng, (cfg.window, d_in, cfg.filters), cfg.window * d_in, cfg.filters
    )
    params["conv_bias"] = np.zeros(cfg.filters, np.float32)
    if cfg.mode == "fgf":
        dp_in = d_word + (2 * cfg.pos_dim if cfg.phrase_positions else 0)
        kshape = (cfg.phrase_window, dp_in, cfg.phrase_filters)
        fan_in = cfg.phrase_window * dp_in
        if cfg.phrase_cnn == "shared":
            params["phrase_kernel"] = _xavier(rng, kshape, fan_in, cfg.phrase_filters)
            params["phrase_bias"] = np.zeros(cfg.phrase_filters, np.float32)
        elif cfg.phrase_cnn == "per_segment":
            for s in range(N_SEGMENTS):
                params[f"phrase_kernel_{s}"] = _xavier(rng, kshape, fan_in, cfg.phrase_filters)
                params[f"phrase_bias_{s}"] = np.zeros(cfg.phrase_filters, np.float32)
        fc_in = N_SEGMENTS * cfg.phrase_filters
        params["fc_weight"] = _xavier(rng, (fc_in, cfg.hidden), fc_in, cfg.hidden)
        params["fc_bias"] = np.zeros(cfg.hidden, np.float32)
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


class FewShotEncoder:
    """Holds the parameters and vocabulary of one encoder."""

    def __init__(self, cfg: EncoderConfig, vocab: Vocab, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        self.vocab = vocab
        self.params = params if params is not None else init_params(cfg, vocab.embeddings, seed)
        self.pad_id = vocab.pad

    @property
    def output_dim(self) -> int:
        return self.cfg.output_dim

    def trainable_mask(self, name: str) -> np.ndarray | None:
        """Entries of ``params[name]`` that receive gradient (None = all)."""
        if name != "word_emb":
            return None
        mask = np.ones(self.params[name].shape, dtype=bool)
        mask[self.pad_id] = False
        return mask

    def featurize(self, inst: TokenizedInstance) -> FeaturizedInstance:
        return featurize(inst, self.vocab, self.cfg.max_rel)

    def _as_featurized(self, insts) -> list[FeaturizedInstance]:
        return [i if isinstance(i, FeaturizedInstance) else self.featurize(i) for i in insts]

    # -- building blocks ---------------------------------------------------
    def _embed(self, ids: np.ndarray, pos_h: np.ndarray | None, pos_t: np.ndarray | None) -> Tensor:
        p = self.params
        parts = [T.embedding(p["word_emb"], ids, padding_idx=self.pad_id)]
        if pos_h is not None:
            parts.append(T.embedding(p["pos_head_emb"], pos_h))
            parts.append(T.embedding(p["pos_tail_emb"], pos_t))
        return T.concat(parts, axis=-1)

    def _cnn(self, x: Tensor, lengths: np.ndarray, kernel: Tensor, bias: Tensor) -> Tensor:
        """conv -> ReLU -> max-over-time, restricted to each row's valid windows."""
        w = kernel.shape[0]
        h = T.relu(T.conv1d(x, kernel, bias))
        return T.maxpool_over_time(h, lengths - w + 1)

    def _pad_batch(self, seqs: Sequence[np.ndarray], window: int, fill: int):
        lengths = np.array([max(len(s), window) for s in seqs], dtype=np.int64)
        out = np.full((len(seqs), int(lengths.max())), fill, dtype=np.int64)
        for i, s in enumerate(seqs):
            out[i, : len(s)] = s
        return out, lengths

    # -- public encoders -----------------------------------------------------
    def encode_sentence(self, insts) -> Tensor:
        """Sentence-level CNN feature, shape ``(B, filters)``."""
        insts = self._as_featurized(insts)
        cfg = self.cfg
        ids, lengths = self._pad_batch([f.token_ids for f in insts], cfg.window, self.pad_id)
        pos_h = pos_t = None
        if cfg.sentence_positions:
            pos_h, _ = self._pad_batch([f.pos_head for f in insts], cfg.window, cfg.max_rel)
            pos_t, _ = self._pad_batch([f.pos_tail for f in insts], cfg.window, cfg.max_rel)
        x = self._embed(ids, pos_h, pos_t)
        return self._cnn(x, lengths, self.params["conv_kernel"], self.params["conv_bias"])

    def _segment_positions(self, f: FeaturizedInstance, slot: int):
        src = np.asarray(f.segments.positions[slot], dtype=np.int64)
        filler = self.cfg.max_rel
        ph = np.where(src >= 0, f.pos_head[np.maximum(src, 0)], filler)
        pt = np.where(src >= 0, f.pos_tail[np.maximum(src, 0)], filler)
        return ph, pt

    def _phrase_features(self, insts: list[FeaturizedInstance], slots, kernel: Tensor, bias: Tensor) -> Tensor:
        cfg = self.cfg
        w = kernel.shape[0]
        seqs = [np.asarray(f.segments.as_list()[s], dtype=np.int64) for f in insts for s in slots]
        ids, lengths = self._pad_batch(seqs, w, self.pad_id)
        pos_h = pos_t = None
        if cfg.phrase_positions:
            pairs = [self._segment_positions(f, s) for f in insts for s in slots]
            pos_h, _ = self._pad_batch([p[0] for p in pairs], w, cfg.max_rel)
            pos_t, _ = self._pad_batch([p[1] for p in pairs], w, cfg.max_rel)
        x = self._embed(ids, pos_h, pos_t)
        return self._cnn(x, lengths, kernel, bias)

    def encode_phrase(self, insts) -> Tensor:
        """Five-phrase feature, shape ``(B, hidden)``."""
        insts = self._as_featurized(insts)
        cfg, p = self.cfg, self.params
        B = len(insts)
        if cfg.phrase_cnn == "per_segment":
            per_slot = [
                self._phrase_features(insts, [s], p[f"phrase_kernel_{s}"], p[f"phrase_bias_{s}"])
                for s in range(N_SEGMENTS)
            ]
            joined = T.concat(per_slot, axis=-1)
        else:
            if cfg.phrase_cnn == "tied":
                kernel, bias = p["conv_kernel"], p["conv_bias"]
            else:
                kernel, bias = p["phrase_kernel"], p["phrase_bias"]
            feats = self._phrase_features(insts, range(N_SEGMENTS), kernel, bias)
            # rows are instance-major: (B*5, F_p) -> (B, 5*F_p) in segment order
            joined = feats.reshape(B, N_SEGMENTS * kernel.shape[2])
        return T.relu(T.linear(joined, p["fc_weight"], p["fc_bias"]))

    def encode(self, insts) -> Tensor:
        """Instance embeddings, shape ``(B, output_dim)``."""
        insts = self._as_featurized(insts)
        sent = self.encode_sentence(insts)
        if self.cfg.mode == "cnn":
            return sent
        return T.concat([sent, self.encode_phrase(insts)], axis=-1)
