"""Bidirectional single-stream proposal network.

Each direction runs its own LSTM stack over the feature sequence and scores
K anchors per step with a shared sigmoid layer.  Forward step ``t`` scores
intervals ending at ``t``; backward step ``j`` scores intervals starting at
``T - j + 1``.  The two scores of an interval are fused by multiplication.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ContractError, ShapeError
from .geometry import BACKWARD, FORWARD, Interval
from .lstm import init_lstm, lstm_cell

SCORE_CLAMP = 1e-12


@dataclass(frozen=True)
class ProposalCandidate:
    interval: Interval
    anchor_index: int
    forward_score: float
    backward_score: float
    fused_score: float

    @property
    def start(self):
        return self.interval.start

    @property
    def end(self):
        return self.interval.end


def init_encoder_params(direction, input_dim, hidden, layers, K, seed):
    params = {}
    dim = input_dim
    for layer in range(layers):
        params.update(init_lstm(f"enc_{direction}.l{layer}", dim, hidden, seed))
        dim = hidden
    name = f"score_{direction}"
    W = tn.init_parameters((K, hidden), tn.derived_seed(seed, name + ".W"))
    params[name + ".W"] = tn.parameter(W.data, name + ".W")
    params[name + ".b"] = tn.parameter(np.zeros(K), name + ".b")
    return params


def encoder_layers(params, direction):
    n = 0
    while f"enc_{direction}.l{n}.W" in params:
        n += 1
    return n


def encode_pass(features, direction, params):
    """Top-layer hidden states in consumption order.

    ``features`` is a T x D array or tensor; the backward pass consumes it
    from ``v_T`` down to ``v_1``.  Initial states are zero.
    """
    feats = tn.as_tensor(features)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ShapeError(f"features must be a non-empty T x D matrix, got {feats.shape}")
    layers = encoder_layers(params, direction)
    if layers == 0:
        raise ContractError(f"no encoder parameters for direction {direction!r}")
    W0 = params[f"enc_{direction}.l0.W"]
    hidden = params[f"enc_{direction}.l0.b"].shape[0] // 4
    if W0.shape[1] != feats.shape[1] + hidden:
        raise ShapeError(
            f"encoder expects feature dim {W0.shape[1] - hidden}, got {feats.shape[1]}"
        )
    T = feats.shape[0]
    order = range(T) if direction == FORWARD else range(T - 1, -1, -1)
    zeros = tn.Tensor(np.zeros(hidden))
    h = [zeros] * layers
    c = [zeros] * layers
    states = []
    for t in order:
        x = feats[t]
        for layer in range(layers):
            h[layer], c[layer] = lstm_cell(
                x, h[layer], c[layer],
                params[f"enc_{direction}.l{layer}.W"],
                params[f"enc_{direction}.l{layer}.b"],
            )
            x = h[layer]
        states.append(x)
    return states


def score_step(h, params, direction):
    """K anchor confidences for one hidden state."""
    return tn.sigmoid(tn.affine(h, params[f"score_{direction}.W"], params[f"score_{direction}.b"]))


def score_sequence(states, params, direction):
    """T x K confidences; the same weights score every step."""
    H = tn.stack(states)
    return tn.sigmoid(tn.affine(H, params[f"score_{direction}.W"], params[f"score_{direction}.b"]))


def fuse_candidates(fwd_scores, bwd_scores, anchors, T):
    """All in-bounds (interval, anchor) candidates with fused scores.

    Score arrays are T x K (rows in consumption order).  Passing ``None`` for
    one direction gives a unidirectional model whose missing score is 1, so
    the fused score equals the single directional score.
    """
    fwd = None if fwd_scores is None else np.asarray(getattr(fwd_scores, "data", fwd_scores))
    bwd = None if bwd_scores is None else np.asarray(getattr(bwd_scores, "data", bwd_scores))
    if fwd is None and bwd is None:
        raise ContractError("at least one direction must be scored")
    for arr in (fwd, bwd):
        if arr is not None and arr.shape != (T, len(anchors)):
            raise ContractError(f"score matrix shape {arr.shape} does not match T={T}, K={len(anchors)}")
    out = []
    for end in range(1, T + 1):
        for j, length in enumerate(anchors):
            start = end - length + 1
            if start < 1:
                continue
            fs = 1.0 if fwd is None else float(fwd[end - 1, j])
            bs = 1.0 if bwd is None else float(bwd[T - start, j])
            out.append(ProposalCandidate(Interval(start, end), j, fs, bs, fs * bs))
    return out


def select_proposals(candidates, tau):
    """Candidates with fused score above ``tau``, best first (no NMS)."""
    kept = [c for c in candidates if c.fused_score > tau]
    kept.sort(key=lambda c: (-c.fused_score, c.interval.start, c.interval.length))
    return kept


def anchor_class_weights(label_tensors):
    """Per-anchor ``(w0, w1)`` from positive/negative counts over a training set.

    ``w0`` multiplies the positive term and equals the negative fraction;
    ``w1`` multiplies the negative term and equals the positive fraction.
    Anchors with no positives get ``w0 = 1`` and ``w1 = 1/K``.
    """
    labels = [np.asarray(y) for y in label_tensors]
    K = labels[0].shape[1]
    pos = sum(y.sum(axis=0) for y in labels)
    total = sum(y.shape[0] for y in labels)
    neg = total - pos
    w0 = np.where(pos > 0, neg / np.maximum(total, 1), 1.0)
    w1 = np.where(pos > 0, pos / np.maximum(total, 1), 1.0 / K)
    return w0.astype(np.float64), w1.astype(np.float64)


def proposal_loss(scores, labels, w0, w1):
    """Weighted multi-label cross entropy, summed over anchors, averaged over steps."""
    scores = tn.as_tensor(scores)
    y = np.asarray(labels, dtype=np.float64)
    if scores.shape != y.shape:
        raise ShapeError(f"scores {scores.shape} and labels {y.shape} differ")
    c = tn.clip(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    pos = tn.log(c) * (np.asarray(w0) * y)
    neg = tn.log(1.0 - c) * (np.asarray(w1) * (1.0 - y))
    return -tn.reduce_sum(pos + neg) / y.shape[0]
