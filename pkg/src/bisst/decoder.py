"""Two-layer LSTM caption decoder with five visual-input variants.

``H``       context vectors only
``E``       mean of the event clip features
``E+H``     clip mean concatenated with the context vectors
``TDA``     per-step attention over clip features, concatenated with the context
``TDA+CG``  attended feature and projected context mixed by a learned gate

The context vector of an event ``[m, n]`` is ``[h_fwd_n, h_bwd_m]`` for a
bidirectional encoder, or whichever of the two exists for a unidirectional one.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as tn
from .errors import ContractError, ShapeError
from .lstm import init_lstm, lstm_cell

VARIANTS = ("H", "E", "E+H", "TDA", "TDA+CG")

BOS, EOS, UNK, PAD = "<bos>", "<eos>", "<unk>", "<pad>"
RESERVED = (BOS, EOS, UNK, PAD)
BOS_ID, EOS_ID, UNK_ID, PAD_ID = range(4)


class Vocabulary:
    def __init__(self, tokens=()):
        words = list(RESERVED)
        seen = set(words)
        for tok in tokens:
            if tok not in seen:
                words.append(tok)
                seen.add(tok)
        self.tokens = words
        self.index = {t: i for i, t in enumerate(words)}

    @classmethod
    def from_captions(cls, captions):
        toks = sorted({tok for cap in captions for tok in cap})
        return cls(toks)

    @classmethod
    def from_token_list(cls, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        return cls(tokens[4:])

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def encode(self, tokens):
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids, strip=True):
        words = [self.tokens[i] for i in ids]
        if strip:
            words = [w for w in words if w not in RESERVED]
        return words

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens


def visual_dim(variant, feature_dim, context_dim, proj_dim):
    if variant == "H":
        return context_dim
    if variant == "E":
        return feature_dim
    if variant in ("E+H", "TDA"):
        return feature_dim + context_dim
    if variant == "TDA+CG":
        return 2 * proj_dim
    raise ValueError(f"unknown fusion variant {variant!r}")


def _weight(name, shape, seed):
    return tn.parameter(tn.init_parameters(shape, tn.derived_seed(seed, name)).data, name)


def init_decoder_params(variant, vocab_size, feature_dim, context_dim,
                        embed_dim, hidden, att_dim, proj_dim, seed):
    F = visual_dim(variant, feature_dim, context_dim, proj_dim)
    p = {"dec.embed": _weight("dec.embed", (vocab_size, embed_dim), seed)}
    p.update(init_lstm("dec.l1", embed_dim + F, hidden, seed))
    p.update(init_lstm("dec.l2", hidden, hidden, seed))
    p["dec.out.W"] = _weight("dec.out.W", (vocab_size, hidden), seed)
    p["dec.out.b"] = tn.parameter(np.zeros(vocab_size), "dec.out.b")
    if variant.startswith("TDA"):
        p["att.W_v"] = _weight("att.W_v", (att_dim, feature_dim), seed)
        p["att.W_h"] = _weight("att.W_h", (att_dim, context_dim), seed)
        p["att.W_H"] = _weight("att.W_H", (att_dim, hidden), seed)
        p["att.b"] = tn.parameter(np.zeros(att_dim), "att.b")
        p["att.w_a"] = _weight("att.w_a", (att_dim,), seed)
    if variant == "TDA+CG":
        p["cg.W_tilde"] = _weight("cg.W_tilde", (proj_dim, feature_dim), seed)
        p["cg.W_ctx"] = _weight("cg.W_ctx", (proj_dim, context_dim), seed)
        p["cg.W_g"] = _weight("cg.W_g", (proj_dim, 2 * proj_dim + embed_dim + hidden), seed)
    return p


@dataclass
class EventInputs:
    """Per-event quantities that stay fixed across decode steps."""

    clip: tn.Tensor
    context: tn.Tensor
    h_fwd: tn.Tensor = None
    h_bwd: tn.Tensor = None
    clip_mean: tn.Tensor = None
    clip_proj: tn.Tensor = None
    ctx_proj: tn.Tensor = None
    ctx_gate: tn.Tensor = None


def context_vector(h_fwd, h_bwd):
    parts = [h for h in (h_fwd, h_bwd) if h is not None]
    if not parts:
        raise ContractError("an event needs at least one context vector")
    return parts[0] if len(parts) == 1 else tn.concat(parts)


def prepare_event(variant, clip, h_fwd, h_bwd, params):
    clip = tn.as_tensor(clip)
    if clip.ndim != 2 or clip.shape[0] == 0:
        raise ContractError("event clip must contain at least one timestep")
    ev = EventInputs(clip, context_vector(h_fwd, h_bwd), h_fwd, h_bwd)
    if variant in ("E", "E+H"):
        ev.clip_mean = _mean_rows(clip)
    if variant.startswith("TDA"):
        # Clip and context terms of the attention logits do not depend on the step.
        ev.clip_proj = tn.matmul(clip, tn.transpose(params["att.W_v"]))
        ev.ctx_proj = tn.affine(ev.context, params["att.W_h"], params["att.b"])
    if variant == "TDA+CG":
        ev.ctx_gate = tn.tanh(tn.matmul(params["cg.W_ctx"], ev.context))
    return ev


def _mean_rows(x):
    n = x.shape[0]
    return tn.matmul(tn.Tensor(np.full(n, 1.0 / n)), x)


def visual_input_simple(variant, clip, h_fwd, h_bwd):
    """Step-independent visual input for the H, E and E+H variants."""
    if variant == "H":
        return context_vector(h_fwd, h_bwd)
    clip = tn.as_tensor(clip)
    if clip.ndim != 2 or clip.shape[0] == 0:
        raise ContractError("E variants need a non-empty clip")
    m = _mean_rows(clip)
    if variant == "E":
        return m
    if variant == "E+H":
        return tn.concat([m, context_vector(h_fwd, h_bwd)])
    raise ValueError(f"{variant!r} is not a simple fusion variant")


def tda_attend(ev, H_prev, params):
    """Attended clip feature and the attention weights for one decode step."""
    step_term = ev.ctx_proj + tn.matmul(params["att.W_H"], H_prev)
    z = tn.matmul(tn.tanh(ev.clip_proj + step_term), params["att.w_a"])
    alpha = tn.softmax(z)
    return tn.matmul(alpha, ev.clip), alpha


def context_gate(v_att, ev, E_t, H_prev, params):
    """Gated fusion of the attended feature and projected context; returns ``(F, gate)``."""
    v_dot = tn.tanh(tn.matmul(params["cg.W_tilde"], v_att))
    h_ctx = ev.ctx_gate
    if h_ctx is None:
        h_ctx = tn.tanh(tn.matmul(params["cg.W_ctx"], ev.context))
    gate = tn.sigmoid(tn.matmul(params["cg.W_g"], tn.concat([v_dot, h_ctx, E_t, H_prev])))
    F = tn.concat([(1.0 - gate) * v_dot, gate * h_ctx])
    return F, gate


def visual_input(variant, ev, E_t, H_prev, params):
    """Decoder visual input at one step: ``(F, alpha, gate)``; alpha/gate may be None."""
    if variant == "H":
        return ev.context, None, None
    if variant == "E":
        return ev.clip_mean, None, None
    if variant == "E+H":
        return tn.concat([ev.clip_mean, ev.context]), None, None
    v_att, alpha = tda_attend(ev, H_prev, params)
    if variant == "TDA":
        return tn.concat([v_att, ev.context]), alpha, None
    F, gate = context_gate(v_att, ev, E_t, H_prev, params)
    return F, alpha, gate


def initial_state(params):
    hidden = params["dec.l1.b"].shape[0] // 4
    z = tn.Tensor(np.zeros(hidden))
    return [(z, z), (z, z)]


def lstm_step(E_t, F_t, state, params):
    """Two stacked LSTM layers; layer 1 sees ``[E_t, F_t, H1_prev]``."""
    (h1, c1), (h2, c2) = state
    x = tn.concat([E_t, F_t])
    if params["dec.l1.W"].shape[1] != x.shape[0] + h1.shape[0]:
        raise ShapeError("decoder input dimension does not match layer-1 weights")
    h1, c1 = lstm_cell(x, h1, c1, params["dec.l1.W"], params["dec.l1.b"])
    h2, c2 = lstm_cell(h1, h2, c2, params["dec.l2.W"], params["dec.l2.b"])
    return [(h1, c1), (h2, c2)]


def decode_logits(H, params):
    return tn.affine(H, params["dec.out.W"], params["dec.out.b"])


def decode_distribution(H, params):
    return tn.softmax(decode_logits(H, params))


def _step(variant, ev, token_id, state, params, trace=None):
    E_t = params["dec.embed"][token_id]
    H_prev = state[1][0]
    F, alpha, gate = visual_input(variant, ev, E_t, H_prev, params)
    if trace is not None:
        trace.append((alpha, gate, F))
    state = lstm_step(E_t, F, state, params)
    return state


def caption_loss(ev, target_ids, params, variant):
    """Teacher-forced negative log likelihood of ``target_ids`` followed by <eos>."""
    if len(target_ids) == 0:
        raise ContractError("reference caption is empty")
    vocab_size = params["dec.out.b"].shape[0]
    target_ids = [t if 0 <= t < vocab_size else UNK_ID for t in target_ids]
    inputs = [BOS_ID] + list(target_ids)
    targets = list(target_ids) + [EOS_ID]
    state = initial_state(params)
    terms = []
    for tok_in, tok_out in zip(inputs, targets):
        state = _step(variant, ev, tok_in, state, params)
        logp = tn.log_softmax(decode_logits(state[1][0], params))
        terms.append(logp[tok_out])
    return -tn.reduce_sum(tn.stack(terms))


def greedy_decode(ev, params, variant, max_len=20, trace=None):
    """Argmax decoding from <bos>; returns ``(token_ids, token_probs)``.

    Ties go to the lowest index.  Decoding stops after <eos> or ``max_len``
    tokens.
    """
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    state = initial_state(params)
    token = BOS_ID
    ids, probs = [], []
    for _ in range(max_len):
        state = _step(variant, ev, token, state, params, trace)
        p = decode_distribution(state[1][0], params).data
        token = int(np.argmax(p))
        ids.append(token)
        probs.append(float(p[token]))
        if token == EOS_ID:
            break
    return ids, probs


@dataclass(frozen=True)
class CaptionedEvent:
    proposal: object
    tokens: tuple
    token_probs: tuple
    caption_confidence: float
    joint_score: float = field(default=float("nan"))

    @classmethod
    def build(cls, proposal, tokens, token_probs):
        conf = 0.0
        for p in token_probs:
            conf += math.log(p)
        return cls(proposal, tuple(tokens), tuple(token_probs), conf)

    @property
    def interval(self):
        return self.proposal.interval


def joint_rank(events, gamma=10.0, k=None):
    """Rank by ``gamma * proposal_score + caption_confidence``; top ``k`` (all if None)."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    scored = [
        replace(e, joint_score=gamma * e.proposal.fused_score + e.caption_confidence)
        for e in events
    ]
    scored.sort(key=lambda e: (-e.joint_score, -e.proposal.fused_score, e.interval.start))
    return scored if k is None else scored[:k]
