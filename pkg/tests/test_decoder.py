import math

import numpy as np
import pytest

from bisst import tensor as tn
from bisst.decoder import (
    BOS_ID,
    EOS_ID,
    UNK_ID,
    VARIANTS,
    CaptionedEvent,
    Vocabulary,
    caption_loss,
    context_gate,
    decode_distribution,
    greedy_decode,
    init_decoder_params,
    joint_rank,
    lstm_step,
    prepare_event,
    tda_attend,
    visual_input,
    visual_input_simple,
)
from bisst.errors import ContractError, ShapeError
from bisst.geometry import AnchorSet, Interval
from bisst.model import Model, ModelConfig, encode_video, event_inputs
from bisst.proposal import ProposalCandidate


def sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def make_params(variant, V=8, D=3, C=4, E=3, H=4, A=3, P=2, seed=0):
    return init_decoder_params(variant, V, D, C, E, H, A, P, seed)


def prop(s, e, score):
    return ProposalCandidate(Interval(s, e), 0, score, 1.0, score)


def test_vocabulary_reserved_and_unk():
    v = Vocabulary.from_captions([("the", "man"), ("a", "man")])
    assert v.tokens[:4] == ["<bos>", "<eos>", "<unk>", "<pad>"]
    assert v.tokens[4:] == ["a", "man", "the"]
    assert v.encode(["man", "dog"]) == [5, UNK_ID]
    assert v.decode([BOS_ID, 5, EOS_ID]) == ["man"]
    assert Vocabulary.from_token_list(v.tokens) == v
    with pytest.raises(ValueError):
        Vocabulary.from_token_list(["a", "b"])


def test_lstm_step_zero_weights():
    p = make_params("H")
    for k in ("dec.l1.W", "dec.l1.b", "dec.l2.W", "dec.l2.b"):
        p[k].data = np.zeros_like(p[k].data)
    z = tn.Tensor(np.zeros(4))
    E, F = tn.Tensor(np.ones(3)), tn.Tensor(np.ones(4))
    (h1, c1), (h2, c2) = lstm_step(E, F, [(z, z), (z, z)], p)
    assert np.array_equal(c1.data, np.zeros(4)) and np.array_equal(h2.data, np.zeros(4))
    v = tn.Tensor(np.array([1.0, -2.0, 0.5, 3.0]))
    (h1, c1), _ = lstm_step(E, F, [(z, v), (z, z)], p)
    assert np.array_equal(c1.data, 0.5 * v.data)
    np.testing.assert_allclose(h1.data, 0.5 * np.tanh(0.5 * v.data), rtol=0, atol=1e-16)


def test_lstm_step_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    p = make_params("H", E=2, C=2, H=4)
    W = p["dec.l1.W"].data
    b = p["dec.l1.b"].data
    E_t, F_t = rng.normal(size=2), rng.normal(size=2)
    h0, c0 = rng.normal(size=4), rng.normal(size=4)
    z = tn.Tensor(np.zeros(4))
    ((h1, c1), _) = lstm_step(tn.Tensor(E_t), tn.Tensor(F_t),
                              [(tn.Tensor(h0), tn.Tensor(c0)), (z, z)], p)
    inp = list(E_t) + list(F_t) + list(h0)
    for u in range(4):
        pre = [b[r] + sum(W[r][k] * inp[k] for k in range(len(inp))) for r in (u, 4 + u, 8 + u, 12 + u)]
        c = sig(pre[1]) * c0[u] + sig(pre[0]) * math.tanh(pre[3])
        h = sig(pre[2]) * math.tanh(c)
        assert abs(c1.data[u] - c) < 1e-14 and abs(h1.data[u] - h) < 1e-14


def test_lstm_step_dimension_mismatch():
    p = make_params("H")
    z = tn.Tensor(np.zeros(4))
    with pytest.raises(ShapeError):
        lstm_step(tn.Tensor(np.ones(3)), tn.Tensor(np.ones(5)), [(z, z), (z, z)], p)


def test_visual_input_simple_examples():
    clip = np.array([[1.0, 3.0], [3.0, 5.0]])
    assert np.array_equal(visual_input_simple("E", clip, None, None).data, [2, 4])
    assert np.array_equal(
        visual_input_simple("H", None, tn.Tensor([1.0]), tn.Tensor([2.0])).data, [1, 2])
    one = np.array([[7.0, 8.0]])
    assert np.array_equal(
        visual_input_simple("E+H", one, tn.Tensor([1.0]), tn.Tensor([2.0])).data, [7, 8, 1, 2])
    with pytest.raises(ContractError):
        visual_input_simple("E", np.zeros((0, 2)), None, None)


def random_event(variant, p, rng, clip_len=3, D=3):
    clip = rng.normal(size=(clip_len, D))
    hf, hb = tn.Tensor(rng.normal(size=2)), tn.Tensor(rng.normal(size=2))
    return prepare_event(variant, clip, hf, hb, p), clip, hf.data, hb.data


def test_tda_single_step_clip_is_exact():
    rng = np.random.default_rng(1)
    p = make_params("TDA")
    ev, clip, _, _ = random_event("TDA", p, rng, clip_len=1)
    v, alpha = tda_attend(ev, tn.Tensor(rng.normal(size=4)), p)
    assert alpha.data.tolist() == [1.0]
    assert np.array_equal(v.data, clip[0])


def test_tda_zero_weights_give_mean():
    rng = np.random.default_rng(2)
    p = make_params("TDA")
    p["att.w_a"].data = np.zeros_like(p["att.w_a"].data)
    ev, clip, _, _ = random_event("TDA", p, rng, clip_len=4)
    v, alpha = tda_attend(ev, tn.Tensor(rng.normal(size=4)), p)
    np.testing.assert_allclose(alpha.data, 0.25, rtol=0, atol=1e-16)
    np.testing.assert_allclose(v.data, clip.mean(axis=0), rtol=0, atol=1e-15)


def test_tda_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    p = make_params("TDA")
    ev, clip, hf, hb = random_event("TDA", p, rng, clip_len=3)
    Hp = rng.normal(size=4)
    v, alpha = tda_attend(ev, tn.Tensor(Hp), p)
    ctx = list(hf) + list(hb)
    Wv, Wh, WH = p["att.W_v"].data, p["att.W_h"].data, p["att.W_H"].data
    bb, wa = p["att.b"].data, p["att.w_a"].data
    z = []
    for i in range(3):
        total = 0.0
        for a in range(len(bb)):
            pre = bb[a]
            pre += sum(Wv[a][k] * clip[i][k] for k in range(3))
            pre += sum(Wh[a][k] * ctx[k] for k in range(4))
            pre += sum(WH[a][k] * Hp[k] for k in range(4))
            total += wa[a] * math.tanh(pre)
        z.append(total)
    mx = max(z)
    e = [math.exp(x - mx) for x in z]
    ref_alpha = [x / sum(e) for x in e]
    np.testing.assert_allclose(alpha.data, ref_alpha, rtol=0, atol=1e-14)
    assert abs(alpha.data.sum() - 1.0) < 1e-12
    ref_v = [sum(ref_alpha[i] * clip[i][k] for i in range(3)) for k in range(3)]
    np.testing.assert_allclose(v.data, ref_v, rtol=0, atol=1e-14)


def test_context_gate_examples():
    rng = np.random.default_rng(4)
    p = make_params("TDA+CG")
    ev, _, _, _ = random_event("TDA+CG", p, rng)
    v_att = tn.Tensor(rng.normal(size=3))
    E_t, Hp = tn.Tensor(rng.normal(size=3)), tn.Tensor(rng.normal(size=4))
    p["cg.W_g"].data = np.zeros_like(p["cg.W_g"].data)
    F, gate = context_gate(v_att, ev, E_t, Hp, p)
    v_dot = np.tanh(p["cg.W_tilde"].data @ v_att.data)
    h_ctx = np.tanh(p["cg.W_ctx"].data @ ev.context.data)
    assert np.array_equal(gate.data, [0.5, 0.5])
    np.testing.assert_allclose(F.data, np.concatenate([0.5 * v_dot, 0.5 * h_ctx]), atol=1e-16)
    p["cg.W_tilde"].data = np.zeros_like(p["cg.W_tilde"].data)
    F, _ = context_gate(v_att, ev, E_t, Hp, p)
    assert np.array_equal(F.data[:2], [0.0, 0.0])


def test_context_gate_matches_scalar_oracle():
    rng = np.random.default_rng(5)
    p = make_params("TDA+CG")
    ev, _, hf, hb = random_event("TDA+CG", p, rng)
    v_att, E_t, Hp = rng.normal(size=3), rng.normal(size=3), rng.normal(size=4)
    F, gate = context_gate(tn.Tensor(v_att), ev, tn.Tensor(E_t), tn.Tensor(Hp), p)
    Wt, Wc, Wg = p["cg.W_tilde"].data, p["cg.W_ctx"].data, p["cg.W_g"].data
    ctx = list(hf) + list(hb)
    v_dot = [math.tanh(sum(Wt[r][k] * v_att[k] for k in range(3))) for r in range(2)]
    h = [math.tanh(sum(Wc[r][k] * ctx[k] for k in range(4))) for r in range(2)]
    cat = v_dot + h + list(E_t) + list(Hp)
    g = [sig(sum(Wg[r][k] * cat[k] for k in range(len(cat)))) for r in range(2)]
    ref = [(1 - g[r]) * v_dot[r] for r in range(2)] + [g[r] * h[r] for r in range(2)]
    np.testing.assert_allclose(gate.data, g, rtol=0, atol=1e-15)
    np.testing.assert_allclose(F.data, ref, rtol=0, atol=1e-15)


def test_decode_distribution_examples():
    p = make_params("H", V=8)
    H = tn.Tensor(np.random.default_rng(0).normal(size=4))
    p["dec.out.W"].data = np.zeros((8, 4))
    np.testing.assert_allclose(decode_distribution(H, p).data, 1 / 8, atol=1e-16)
    p["dec.out.b"].data = np.zeros(8)
    p["dec.out.b"].data[5] = 60.0
    assert abs(decode_distribution(H, p).data[5] - 1.0) < 1e-12
    p = make_params("H", V=8)
    d = decode_distribution(H, p).data
    assert np.all(d > 0) and abs(d.sum() - 1.0) < 1e-12


def zero_output(p):
    p["dec.out.W"].data = np.zeros_like(p["dec.out.W"].data)
    p["dec.out.b"].data = np.zeros_like(p["dec.out.b"].data)


def test_caption_loss_examples():
    rng = np.random.default_rng(6)
    p = make_params("E", V=8)
    ev, _, _, _ = random_event("E", p, rng)
    zero_output(p)
    assert abs(caption_loss(ev, [4, 5, 6], p, "E").item() - 4 * math.log(8)) < 1e-12
    p["dec.out.b"].data[[4, EOS_ID]] = 60.0
    assert abs(caption_loss(ev, [4], p, "E").item() - 2 * math.log(2)) < 1e-12
    p["dec.out.b"].data[:] = 0.0
    p["dec.out.b"].data[EOS_ID] = 800.0
    # Out-of-vocabulary ids fall back to <unk>; a certain <eos> yields -log p(unk) + 0.
    assert caption_loss(ev, [99], p, "E").item() > 700
    with pytest.raises(ContractError):
        caption_loss(ev, [], p, "E")


def test_caption_loss_zero_for_certain_decoder():
    rng = np.random.default_rng(7)
    p = make_params("H", V=5)
    ev, _, _, _ = random_event("H", p, rng)
    zero_output(p)
    p["dec.out.b"].data[EOS_ID] = 800.0
    assert caption_loss(ev, [EOS_ID], p, "H").item() == 0.0


def test_greedy_decode_rigged_eos():
    rng = np.random.default_rng(8)
    p = make_params("TDA+CG")
    ev, _, _, _ = random_event("TDA+CG", p, rng)
    zero_output(p)
    p["dec.out.b"].data[EOS_ID] = 800.0
    ids, probs = greedy_decode(ev, p, "TDA+CG", max_len=5)
    assert ids == [EOS_ID] and probs == [1.0]
    event = CaptionedEvent.build(prop(1, 3, 0.5), ids, probs)
    assert event.caption_confidence == 0.0


def test_greedy_decode_ties_and_max_len():
    rng = np.random.default_rng(9)
    p = make_params("H")
    ev, _, _, _ = random_event("H", p, rng)
    zero_output(p)
    ids, probs = greedy_decode(ev, p, "H", max_len=3)
    assert ids == [0, 0, 0] and probs == [1 / 8] * 3
    with pytest.raises(ValueError):
        greedy_decode(ev, p, "H", max_len=0)


def test_caption_confidence_sum_of_logs():
    e = CaptionedEvent.build(prop(1, 2, 0.3), [5, EOS_ID], [0.5, 0.5])
    assert abs(e.caption_confidence - 2 * math.log(0.5)) < 1e-15
    rng = np.random.default_rng(10)
    for _ in range(50):
        probs = rng.uniform(0.01, 1.0, size=rng.integers(1, 8))
        e = CaptionedEvent.build(prop(1, 2, 0.3), range(len(probs)), probs)
        total = 0.0
        for x in probs:
            total += math.log(x)
        assert e.caption_confidence == total and e.caption_confidence <= 0


def test_joint_rank_examples():
    a = CaptionedEvent.build(prop(1, 3, 0.5), [4], [math.exp(-1)])
    b = CaptionedEvent.build(prop(4, 6, 0.9), [4], [math.exp(-6)])
    ranked = joint_rank([b, a], gamma=10)
    assert ranked[0].interval == Interval(1, 3)
    assert [round(e.joint_score, 12) for e in ranked] == [4.0, 3.0]
    c = CaptionedEvent.build(prop(1, 3, 0.9), [4], [math.exp(-5)])
    assert abs(joint_rank([c])[0].joint_score - 4.0) < 1e-12
    by_conf = joint_rank([a, b], gamma=0)
    assert by_conf[0] is not None and by_conf[0].caption_confidence == a.caption_confidence
    assert len(joint_rank([a, b], k=5)) == 2
    with pytest.raises(ValueError):
        joint_rank([a], gamma=-1)


@pytest.mark.parametrize("variant", VARIANTS)
def test_visual_input_dimensions(variant):
    rng = np.random.default_rng(11)
    p = make_params(variant)
    ev, _, _, _ = random_event(variant, p, rng)
    F, alpha, gate = visual_input(variant, ev, tn.Tensor(np.zeros(3)), tn.Tensor(np.zeros(4)), p)
    assert p["dec.l1.W"].shape[1] == 3 + F.shape[0] + 4
    assert (alpha is None) == (not variant.startswith("TDA"))
    assert (gate is None) == (variant != "TDA+CG")


def tiny_model(variant, direction="bi", seed=0):
    cfg = ModelConfig(feature_dim=3, vocab_size=8, num_anchors=2, direction=direction,
                      variant=variant, enc_hidden=4, embed_dim=3, dec_hidden=4,
                      att_dim=3, proj_dim=2, seed=seed)
    return Model.create(cfg, AnchorSet((2, 4)), Vocabulary(["a", "b", "c", "d"]))


def test_shared_end_step_distinguishability():
    feats = np.random.default_rng(12).normal(size=(8, 3))
    short, long_ = Interval(5, 6), Interval(3, 6)
    for variant in VARIANTS:
        model = tiny_model(variant)
        enc = encode_video(model, feats)
        a = event_inputs(model, enc, short)
        b = event_inputs(model, enc, long_)
        assert np.array_equal(a.h_fwd.data, b.h_fwd.data)
        if variant == "H":
            continue
        E_t = tn.Tensor(np.ones(3))
        Hp = tn.Tensor(np.full(4, 0.1))
        Fa = visual_input(variant, a, E_t, Hp, model.params)[0].data
        Fb = visual_input(variant, b, E_t, Hp, model.params)[0].data
        assert not np.array_equal(Fa, Fb)


@pytest.mark.parametrize("variant", VARIANTS)
def test_caption_gradients_reach_encoder(variant):
    rng = np.random.default_rng(13)
    model = tiny_model(variant)
    for p in model.params.values():
        p.data = rng.uniform(-1, 1, size=p.shape)
    feats = rng.normal(size=(6, 3))

    def f():
        enc = encode_video(model, feats)
        return caption_loss(event_inputs(model, enc, Interval(2, 5)), [4, 5], model.params, variant)

    with tn.Tape():
        loss = f()
    g = tn.backprop(loss, model.params)
    reaches = variant != "E"  # the clip mean alone never touches the encoders
    assert np.any(g["enc_fwd.l0.W"] != 0) == reaches
    assert np.any(g["enc_bwd.l0.W"] != 0) == reaches
    assert np.all(g["score_fwd.W"] == 0)
