import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lmproto import tensor as T
from lmproto.fewshot import (
    EpisodeForward,
    EpisodeSpec,
    LossConfig,
    classify_query,
    combined_loss,
    compute_prototypes,
    episode_rng,
    episode_softmax_loss,
    episode_triplet_loss,
    knn_predict,
    sample_episode,
    softmax,
    softmax_loss_from,
    triplet_loss_from,
)
from lmproto.selftest import toy_dataset, toy_encoder
from lmproto.synthetic import make_marker_corpus
from lmproto.tensor import Tensor

from oracles import knn_classify, proto_classify, triplet_all_pairs

small = st.integers(-3, 3).map(float)


# sampling
@pytest.fixture(scope="module")
def corpus():
    return make_marker_corpus(range(12), per_relation=15, seed=0)


@pytest.mark.parametrize("n,k,q", [(5, 1, 5), (10, 5, 5), (7, 40, 0)])
def test_episode_shapes(n, k, q):
    ds = make_marker_corpus(range(10), per_relation=45)
    ep = sample_episode(ds, EpisodeSpec(n, k, q), np.random.default_rng(0))
    assert len(ep.flat_support()) == n * k and len(ep.flat_query()) == n * q
    assert len(set(ep.classes)) == n


def test_episode_deterministic(corpus):
    a = sample_episode(corpus, EpisodeSpec(5, 2, 3), episode_rng(4, 17))
    b = sample_episode(corpus, EpisodeSpec(5, 2, 3), episode_rng(4, 17))
    assert a == b
    c = sample_episode(corpus, EpisodeSpec(5, 2, 3), episode_rng(4, 18))
    assert a != c


@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 4), st.integers(0, 2**32))
def test_episode_invariants(n, k, q, seed):
    ds = make_marker_corpus(range(8), per_relation=10, seed=1)
    ep = sample_episode(ds, EpisodeSpec(n, k, q), np.random.default_rng(seed))
    for c, rel in enumerate(ep.classes):
        assert len(ep.support[c]) == k and len(ep.query[c]) == q
        assert all(x.relation_id == rel for x in ep.support[c] + ep.query[c])
        ids = [id(x) for x in ep.support[c] + ep.query[c]]
        assert len(set(ids)) == k + q


def test_sampling_errors(corpus):
    with pytest.raises(ValueError, match="relations"):
        sample_episode(corpus, EpisodeSpec(13, 1, 1), np.random.default_rng(0))
    with pytest.raises(ValueError, match="instances"):
        sample_episode(corpus, EpisodeSpec(2, 10, 6), np.random.default_rng(0))
    with pytest.raises(ValueError):
        EpisodeSpec(1, 1, 1)


# prototypes and classification
def test_prototype_examples():
    one = np.array([[[1.0, 2.0]], [[3.0, 4.0]]])
    np.testing.assert_array_equal(compute_prototypes(Tensor(one)).data, one[:, 0])
    two = np.array([[[1.0, 1.0], [3.0, 3.0]]])
    np.testing.assert_array_equal(compute_prototypes(Tensor(two)).data, [[2.0, 2.0]])


def test_classify_limit_and_symmetry():
    protos = np.array([[100.0, 0.0], [0.0, 100.0], [1.0, 1.0]])
    logits, pred = classify_query(np.array([1.0, 1.0]), protos)
    assert pred == 2 and softmax(logits.data)[2] == pytest.approx(1.0)
    eq = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    logits, pred = classify_query(np.zeros(2), eq)
    np.testing.assert_allclose(softmax(logits.data), 0.25)
    assert pred == 0


@given(arrays(np.float64, (4, 3), elements=small), arrays(np.float64, 3, elements=small), arrays(np.float64, 3, elements=small))
def test_classify_translation_invariant(protos, q, shift):
    assert classify_query(q, protos)[1] == classify_query(q + shift, protos + shift)[1]


# dyadic shot counts keep prototype means exact, so ties are real ties
@given(st.integers(2, 5), st.sampled_from([1, 2, 4]), st.integers(1, 4), st.data())
def test_classify_matches_oracle(n, k, d, data):
    sup = data.draw(arrays(np.float64, (n, k, d), elements=small))
    q = data.draw(arrays(np.float64, d, elements=small))
    protos = compute_prototypes(Tensor(sup, dtype=np.float64)).data
    assert classify_query(q, protos)[1] == proto_classify(q, sup.tolist())


@given(st.integers(2, 4), st.integers(1, 4), st.data())
def test_knn_matches_oracle(n, k, data):
    d = 2
    sup = data.draw(arrays(np.float64, (n * k, d), elements=small))
    labels = np.repeat(np.arange(n), k)
    q = data.draw(arrays(np.float64, d, elements=small))
    kk = data.draw(st.integers(1, n * k))
    assert knn_predict(sup, labels, q, kk) == knn_classify(q.tolist(), sup.tolist(), labels, kk)


def test_knn_examples():
    sup = np.array([[0.0, 0.0], [10.0, 10.0]])
    labels = np.array([0, 1])
    assert knn_predict(sup, labels, np.array([1.0, 1.0]), 1) == 0
    assert knn_predict(sup, labels, np.array([10.0, 10.0]), 1) == 1


@given(st.integers(2, 5), st.data())
def test_one_shot_knn_equals_proto(n, data):
    sup = data.draw(arrays(np.float64, (n, 3), elements=small))
    q = data.draw(arrays(np.float64, 3, elements=small))
    assert knn_predict(sup, np.arange(n), q, 1) == classify_query(q, sup)[1]


def test_knn_rejects_bad_k():
    with pytest.raises(ValueError):
        knn_predict(np.zeros((2, 2)), np.array([0, 1]), np.zeros(2), 3)


# losses
def _fwd(dist, labels):
    d = Tensor(np.asarray(dist, dtype=np.float64), dtype=np.float64)
    return EpisodeForward(None, None, None, d, np.asarray(labels))


def test_softmax_loss_uniform_is_log_n():
    fwd = _fwd(np.full((6, 3), 4.0), [0, 0, 1, 1, 2, 2])
    assert softmax_loss_from(fwd).item() == pytest.approx(math.log(3))


def test_softmax_loss_limit():
    fwd = _fwd([[0.0, 1e4], [1e4, 0.0]], [0, 1])
    assert softmax_loss_from(fwd).item() == pytest.approx(0.0, abs=1e-12)


def test_triplet_hinge_arithmetic():
    # one positive per class: query 0 (class 0), query 1 (class 1)
    satisfied = _fwd([[1.0, 5.0], [3.0, 9.0]], [0, 1])
    # term for anchor 0: max(0, 1 + 1 - 3) = 0; anchor 1: max(0, 1 + 9 - 5) = 5
    assert triplet_loss_from(satisfied, 1.0).item() == pytest.approx(2.5)
    # d(a,p) = d(a,n) for both anchors -> every term is gamma
    tie = _fwd([[2.0, 0.0], [2.0, 0.0]], [0, 1])
    assert triplet_loss_from(tie, 1.0).item() == pytest.approx(1.0)


@given(st.integers(2, 4), st.integers(1, 3), st.data())
def test_triplet_matches_oracle(n, q, data):
    labels = np.repeat(np.arange(n), q)
    dist = data.draw(arrays(np.float64, (n * q, n), elements=st.floats(0, 20)))
    gamma = data.draw(st.floats(0, 5))
    got = triplet_loss_from(_fwd(dist, labels), gamma).item()
    assert got == pytest.approx(triplet_all_pairs(dist.tolist(), labels.tolist(), gamma), abs=1e-9)


def test_triplet_zero_margin_separated():
    fwd = _fwd([[0.5, 9.0], [0.7, 8.0], [9.0, 0.1], [7.0, 0.2]], [0, 0, 1, 1])
    assert triplet_loss_from(fwd, 0.0).item() == 0.0
    assert triplet_loss_from(fwd, 0.0, "semi-hard").item() == 0.0


def test_semi_hard_picks_closest_negative():
    # class 0 anchor: negatives are queries 2 (d=4) and 3 (d=1); closest is 3
    fwd = _fwd([[2.0, 0.0], [2.0, 0.0], [4.0, 0.0], [1.0, 0.0]], [0, 0, 1, 1])
    loss = triplet_loss_from(fwd, 0.0, "semi-hard").item()
    # class 0 terms: 2 - 1 = 1 each; class 1 terms: negatives (d to proto 1) all 0 -> 0
    assert loss == pytest.approx(0.5)


@pytest.fixture(scope="module")
def toy():
    ds = toy_dataset(n_relations=3, per_relation=6, seed=2)
    return ds, toy_encoder("fgf", 1, ds)


def test_lambda_zero_is_bitwise_softmax(toy):
    ds, enc = toy
    for i in range(5):
        ep = sample_episode(ds, EpisodeSpec(3, 2, 2), episode_rng(0, i))
        loss, _, trip = combined_loss(enc, ep, LossConfig(gamma=3.0, lam=0.0), return_parts=True)
        assert trip is None
        assert loss.item() == episode_softmax_loss(enc, ep).item()


def test_combined_monotone_in_lambda(toy):
    ds, enc = toy
    ep = sample_episode(ds, EpisodeSpec(3, 2, 2), episode_rng(1, 0))
    values = [combined_loss(enc, ep, LossConfig(gamma=2.0, lam=lam)).item() for lam in (0.0, 0.5, 1.0, 2.0)]
    assert values == sorted(values)
    soft = episode_softmax_loss(enc, ep).item()
    trip = episode_triplet_loss(enc, ep, 2.0).item()
    assert values[2] == pytest.approx(soft + trip, rel=1e-6)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(gamma=-1.0)
    with pytest.raises(ValueError):
        LossConfig(triplet_policy="hardest")
