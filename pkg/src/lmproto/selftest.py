"""Fast built-in checks behind ``lmproto selftest``."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import tensor as T
from .data import RelationDataset, TokenizedInstance, build_vocab, segment_instance
from .encoders import EncoderConfig, FewShotEncoder
from .fewshot import EpisodeSpec, LossConfig, combined_loss, episode_softmax_loss, sample_episode
from .gradcheck import finite_diff_check
from .tensor import Tensor

GRAD_TOL = 1e-3


def toy_dataset(n_relations: int = 2, per_relation: int = 6, seed: int = 0) -> RelationDataset:
    rng = np.random.default_rng(seed)
    words = "the a city river band song film was born in near by of album league".split()
    rels = {}
    for r in range(n_relations):
        insts = []
        for _ in range(per_relation):
            toks = list(rng.choice(words, size=6))
            toks[1], toks[4] = f"head{r}", f"tail{r}"
            insts.append(TokenizedInstance(tuple(toks), (1, 1), (4, 4), f"P{r}"))
        rels[f"P{r}"] = insts
    return RelationDataset(rels)


def toy_encoder(mode: str = "fgf", seed: int = 0, dataset: RelationDataset | None = None) -> FewShotEncoder:
    ds = dataset or toy_dataset()
    vocab = build_vocab([ds], dim=6, seed=seed)
    cfg = EncoderConfig(mode=mode, pos_dim=2, max_rel=16, filters=5, window=3,
                        phrase_filters=4, phrase_window=2, hidden=3)
    return FewShotEncoder(cfg, vocab, seed=seed)


def _rand(rng, *shape) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)


def op_gradient_errors(seed: int = 0) -> dict[str, float]:
    """Max relative finite-difference error for each differentiable op."""
    rng = np.random.default_rng(seed)
    out = {}
    x = _rand(rng, 6, 3)
    k = _rand(rng, 2, 3, 4)
    b = _rand(rng, 4)
    out["conv1d"] = finite_diff_check(lambda: (T.conv1d(x, k, b) * np.arange(20.0).reshape(5, 4)).sum(), [x, k, b])
    # distinct values keep the max away from ties
    pool_in = Tensor(rng.permutation(24).reshape(6, 4) + rng.uniform(0, 0.1, (6, 4)), requires_grad=True, dtype=np.float64)
    out["maxpool_over_time"] = finite_diff_check(lambda: (T.maxpool_over_time(pool_in) * np.array([1.0, -2.0, 3.0, 0.5])).sum(), [pool_in])
    r_in = Tensor(rng.choice([-1, 1], size=8) * rng.uniform(0.5, 2.0, size=8), requires_grad=True, dtype=np.float64)
    out["relu"] = finite_diff_check(lambda: (T.relu(r_in) * np.arange(1.0, 9.0)).sum(), [r_in])
    xi, w, bb = _rand(rng, 3, 4), _rand(rng, 4, 2), _rand(rng, 2)
    out["linear"] = finite_diff_check(lambda: (T.linear(xi, w, bb) * np.array([1.0, -1.5])).sum(), [xi, w, bb])
    c1, c2 = _rand(rng, 2), _rand(rng, 3)
    out["concat"] = finite_diff_check(lambda: (T.concat([c1, c2]) * np.arange(1.0, 6.0)).sum(), [c1, c2])
    s1, s2 = _rand(rng, 5), _rand(rng, 5)
    out["squared_euclidean"] = finite_diff_check(lambda: T.squared_euclidean(s1, s2), [s1, s2])
    p1, p2 = _rand(rng, 4, 3), _rand(rng, 2, 3)
    out["pairwise_squared_euclidean"] = finite_diff_check(lambda: (T.pairwise_squared_euclidean(p1, p2) * np.arange(8.0).reshape(4, 2)).sum(), [p1, p2])
    lg = _rand(rng, 4, 3)
    out["log_softmax_xent"] = finite_diff_check(lambda: T.log_softmax_xent(lg, [0, 2, 1, 2]), [lg])
    tab = _rand(rng, 5, 3)
    out["embedding"] = finite_diff_check(lambda: (T.embedding(tab, np.array([[0, 2], [2, 4]])) * np.arange(12.0).reshape(2, 2, 3)).sum(), [tab])
    m = _rand(rng, 3, 4)
    out["mean/take/reshape"] = finite_diff_check(lambda: (m.reshape(4, 3)[(np.array([0, 3]), np.array([1, 2]))] * 2.0).sum() + m.mean(axis=0).sum(), [m])
    return out


def model_gradient_error(mode: str = "fgf", seed: int = 0, loss_cfg: LossConfig | None = None) -> float:
    """Finite-difference error of the combined loss on a 2-way-2-shot toy episode."""
    ds = toy_dataset(seed=seed)
    enc = toy_encoder(mode, seed, ds)
    ep = sample_episode(ds, EpisodeSpec(2, 2, 2), np.random.default_rng(seed))
    cfg = loss_cfg or LossConfig(gamma=1.0, lam=1.0)
    names = list(enc.params)
    params = [enc.params[n] for n in names]
    masks = [enc.trainable_mask(n) for n in names]
    return finite_diff_check(lambda: combined_loss(enc, ep, cfg), params, masks=masks, max_coords=24, seed=seed)


def _check_segments() -> tuple[bool, str]:
    toks = "Capital Gate was designed by architectural firm RMJM and was completed in 2011 .".split()
    seg = segment_instance(TokenizedInstance(tuple(toks), (0, 1), (7, 7), "P84"))
    ok = seg.head == ("Capital", "Gate") and seg.tail == ("RMJM",) and seg.r_front == ("<pad>",)
    return ok, "five-segment split of a reference sentence"


def _check_reduction() -> tuple[bool, str]:
    ds = toy_dataset()
    enc = toy_encoder("fgf", 0, ds)
    ep = sample_episode(ds, EpisodeSpec(2, 2, 2), np.random.default_rng(1))
    a = combined_loss(enc, ep, LossConfig(gamma=3.0, lam=0.0)).item()
    b = episode_softmax_loss(enc, ep).item()
    return a == b, "lambda=0 objective equals the softmax loss"


def _check_xent_shift() -> tuple[bool, str]:
    z = np.array([0.3, -1.2, 2.0])
    a = T.log_softmax_xent(Tensor(z, dtype=np.float64), 1).item()
    b = T.log_softmax_xent(Tensor(z + 123.0, dtype=np.float64), 1).item()
    return abs(a - b) < 1e-6, "cross-entropy shift invariance"


def run_selftest(report: Callable[[str], None] = print) -> bool:
    ok_all = True
    for name, err in op_gradient_errors().items():
        ok = err < GRAD_TOL
        ok_all &= ok
        report(f"{'PASS' if ok else 'FAIL'} grad {name}: max rel err {err:.2e}")
    for mode in ("cnn", "fgf"):
        err = model_gradient_error(mode)
        ok = err < GRAD_TOL and math.isfinite(err)
        ok_all &= ok
        report(f"{'PASS' if ok else 'FAIL'} grad combined loss ({mode}): max rel err {err:.2e}")
    for check in (_check_segments, _check_reduction, _check_xent_shift):
        ok, what = check()
        ok_all &= ok
        report(f"{'PASS' if ok else 'FAIL'} {what}")
    return ok_all
