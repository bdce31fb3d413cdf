"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"LMPN" | u32 version | u64 json_len | config JSON (UTF-8)
    u32 n_tensors
    per tensor: u16 name_len | name | u8 rank | u64 dim * rank | float32 payload
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .data import Vocab
from .encoders import FewShotEncoder, init_params
from .tensor import Tensor

MAGIC = b"LMPN"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab_words: list[str]
    params: dict[str, np.ndarray]
    episodes: int = 0
    best_val_acc: float = 0.0

    def header(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "vocab": self.vocab_words,
            "episodes": self.episodes,
            "best_val_acc": self.best_val_acc,
        }

    def encoder(self) -> FewShotEncoder:
        vocab = Vocab(list(self.vocab_words), self.params["word_emb"], lowercase=True)
        tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in self.params.items()}
        return FewShotEncoder(self.config.encoder, vocab, tensors)

    @classmethod
    def from_encoder(cls, config: TrainConfig, encoder: FewShotEncoder, episodes: int = 0, best_val_acc: float = 0.0):
        params = {k: t.data.astype(np.float32).copy() for k, t in encoder.params.items()}
        return cls(config, list(encoder.vocab.words), params, episodes, best_val_acc)


def expected_shapes(config: TrainConfig, vocab_size: int) -> dict[str, tuple[int, ...]]:
    dummy = np.zeros((vocab_size, config.word_dim), np.float32)
    return {k: t.shape for k, t in init_params(config.encoder, dummy).items()}


def dumps(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    meta = json.dumps(ckpt.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<Q", len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(ckpt.params)))
    for name in sorted(ckpt.params):
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
        raw_name = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<Q", d))
        buf.write(arr.tobytes())
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(dumps(ckpt))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: need {n} bytes for {what} at byte offset {self.pos}, "
                f"only {len(self.data) - self.pos} left"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))[0]


def loads(data: bytes) -> Checkpoint:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at byte offset 0 (expected {MAGIC!r})")
    version = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version} at byte offset 4 (expected {VERSION})")
    meta_len = r.unpack("<Q", "config length")
    meta_at = r.pos
    try:
        meta = json.loads(r.take(meta_len, "config JSON").decode("utf-8"))
        config = TrainConfig.from_dict(meta["config"])
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"invalid config JSON at byte offset {meta_at}: {exc}") from None
    vocab = list(meta["vocab"])
    shapes = expected_shapes(config, len(vocab))
    count = r.unpack("<I", "tensor count")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        at = r.pos
        name = r.take(r.unpack("<H", "name length"), "tensor name").decode("utf-8")
        rank = r.unpack("<B", "rank")
        dims = tuple(r.unpack("<Q", "dimension") for _ in range(rank))
        if name not in shapes:
            raise CheckpointError(f"unexpected tensor {name!r} at byte offset {at}")
        if dims != shapes[name]:
            raise CheckpointError(
                f"tensor {name!r} at byte offset {at} has shape {dims}, config implies {shapes[name]}"
            )
        n = int(np.prod(dims)) if dims else 1
        payload = r.take(4 * n, f"tensor {name!r} payload")
        params[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    missing = sorted(set(shapes) - set(params))
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {', '.join(missing)}")
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes at byte offset {r.pos}")
    return Checkpoint(config, vocab, params, int(meta["episodes"]), float(meta["best_val_acc"]))


def load_checkpoint(path) -> Checkpoint:
    return loads(Path(path).read_bytes())
