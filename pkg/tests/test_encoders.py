import numpy as np
import pytest

from lmproto import tensor as T
from lmproto.data import TokenizedInstance
from lmproto.encoders import EncoderConfig, FewShotEncoder
from lmproto.selftest import model_gradient_error, toy_dataset, toy_encoder


def naive_cnn(rows: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    w = kernel.shape[0]
    if len(rows) < w:
        raise AssertionError("caller pads")
    outs = []
    for start in range(len(rows) - w + 1):
        window = rows[start:start + w]
        outs.append(np.maximum(0.0, np.einsum("wd,wdf->f", window, kernel) + bias))
    return np.max(outs, axis=0)


def naive_sentence(enc: FewShotEncoder, inst) -> np.ndarray:
    f = enc.featurize(inst)
    p = {k: v.data.astype(np.float64) for k, v in enc.params.items()}
    rows = [np.concatenate([p["word_emb"][i], p["pos_head_emb"][h], p["pos_tail_emb"][t]])
            for i, h, t in zip(f.token_ids, f.pos_head, f.pos_tail)]
    w = enc.cfg.window
    while len(rows) < w:
        rows.append(np.concatenate([p["word_emb"][enc.pad_id], p["pos_head_emb"][enc.cfg.max_rel], p["pos_tail_emb"][enc.cfg.max_rel]]))
    return naive_cnn(np.array(rows), p["conv_kernel"], p["conv_bias"])


def naive_phrase(enc: FewShotEncoder, inst) -> np.ndarray:
    f = enc.featurize(inst)
    p = {k: v.data.astype(np.float64) for k, v in enc.params.items()}
    feats = []
    for seg in f.segments.as_list():
        ids = list(seg) + [enc.pad_id] * max(0, enc.cfg.phrase_window - len(seg))
        feats.append(naive_cnn(p["word_emb"][ids], p["phrase_kernel"], p["phrase_bias"]))
    return np.maximum(0.0, np.concatenate(feats) @ p["fc_weight"] + p["fc_bias"])


@pytest.fixture(scope="module")
def ds():
    return toy_dataset(n_relations=3, per_relation=4, seed=5)


def _instances(ds):
    return [i for insts in ds.relations.values() for i in insts]


def test_sentence_encoder_matches_loops(ds):
    enc = toy_encoder("fgf", 2, ds)
    insts = _instances(ds)
    got = enc.encode_sentence(insts).data
    want = np.stack([naive_sentence(enc, i) for i in insts])
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)


def test_phrase_encoder_matches_loops(ds):
    enc = toy_encoder("fgf", 2, ds)
    insts = _instances(ds)
    got = enc.encode_phrase(insts).data
    want = np.stack([naive_phrase(enc, i) for i in insts])
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)


def test_short_sentence_is_padded(ds):
    enc = toy_encoder("fgf", 0, ds)
    inst = TokenizedInstance(("head0", "tail0"), (0, 0), (1, 1), "P0")
    out = enc.encode([inst]).data
    np.testing.assert_allclose(enc.encode_sentence([inst]).data[0], naive_sentence(enc, inst), rtol=1e-5, atol=1e-6)
    assert out.shape == (1, enc.output_dim)


def test_output_dims(ds):
    cnn = toy_encoder("cnn", 0, ds)
    fgf = toy_encoder("fgf", 0, ds)
    insts = _instances(ds)[:3]
    assert cnn.encode(insts).shape == (3, cnn.cfg.filters)
    assert fgf.encode(insts).shape == (3, fgf.cfg.filters + fgf.cfg.hidden)
    assert fgf.encode_phrase(insts).shape == (3, fgf.cfg.hidden)


def test_fgf_layout_extends_cnn(ds):
    fgf = toy_encoder("fgf", 4, ds)
    cnn = FewShotEncoder(EncoderConfig(**{**fgf.cfg.to_dict(), "mode": "cnn"}), fgf.vocab, fgf.params)
    insts = _instances(ds)
    full = fgf.encode(insts).data
    np.testing.assert_array_equal(full[:, : fgf.cfg.filters], cnn.encode(insts).data)
    np.testing.assert_array_equal(cnn.encode(insts).data, cnn.encode_sentence(insts).data)


def test_identical_instances_identical_vectors(ds):
    enc = toy_encoder("fgf", 0, ds)
    inst = _instances(ds)[0]
    out = enc.encode([inst, inst]).data
    np.testing.assert_array_equal(out[0], out[1])


def test_batch_composition_does_not_matter(ds):
    enc = toy_encoder("fgf", 1, ds)
    insts = _instances(ds)
    batch = enc.encode(insts).data
    single = np.concatenate([enc.encode([i]).data for i in insts])
    np.testing.assert_allclose(batch, single, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("variant", ["per_segment", "tied"])
def test_phrase_variants(ds, variant):
    base = dict(mode="fgf", pos_dim=2, max_rel=16, filters=4, window=2, phrase_filters=4, phrase_window=2, hidden=3)
    if variant == "tied":
        base.update(phrase_positions=True)
    enc = toy_encoder("fgf", 0, ds)
    enc = FewShotEncoder(EncoderConfig(**base, phrase_cnn=variant), enc.vocab, seed=3)
    out = enc.encode(_instances(ds))
    assert out.shape == (len(_instances(ds)), 7)
    if variant == "tied":
        assert "phrase_kernel" not in enc.params
    else:
        assert "phrase_kernel_4" in enc.params


def test_tied_requires_matching_shapes():
    with pytest.raises(ValueError):
        EncoderConfig(phrase_cnn="tied", phrase_positions=False)


def test_init_is_seeded(ds):
    a = toy_encoder("fgf", 9, ds)
    b = toy_encoder("fgf", 9, ds)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
    assert not a.params["conv_bias"].data.any()


def test_pad_row_frozen_through_training_step(ds):
    from lmproto.fewshot import EpisodeSpec, LossConfig, combined_loss, sample_episode

    enc = toy_encoder("fgf", 0, ds)
    ep = sample_episode(ds, EpisodeSpec(2, 1, 2), np.random.default_rng(0))
    combined_loss(enc, ep, LossConfig(gamma=1.0)).backward()
    assert not enc.params["word_emb"].grad[enc.pad_id].any()


@pytest.mark.parametrize("mode", ["cnn", "fgf"])
@pytest.mark.parametrize("policy", ["all-pairs", "semi-hard"])
def test_model_gradients(mode, policy):
    from lmproto.fewshot import LossConfig

    assert model_gradient_error(mode, 0, LossConfig(gamma=1.0, lam=0.7, triplet_policy=policy)) < 1e-3


def test_no_grad_encoding_matches(ds):
    enc = toy_encoder("fgf", 0, ds)
    insts = _instances(ds)
    with T.no_grad():
        a = enc.encode(insts).data
    np.testing.assert_array_equal(a, enc.encode(insts).data)
