"""Model container and the inference pipeline built on it."""

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as tn
from .decoder import (
    VARIANTS,
    CaptionedEvent,
    greedy_decode,
    init_decoder_params,
    joint_rank,
    prepare_event,
)
from .geometry import BACKWARD, FORWARD
from .proposal import (
    encode_pass,
    fuse_candidates,
    init_encoder_params,
    score_sequence,
    select_proposals,
)

DIRECTIONS = ("bi", "fwd", "bwd")


@dataclass
class ModelConfig:
    feature_dim: int
    vocab_size: int
    num_anchors: int
    direction: str = "bi"
    variant: str = "TDA+CG"
    enc_hidden: int = 128
    enc_layers: int = 0  # 0 selects 1 layer for "bi" and 2 for unidirectional
    embed_dim: int = 64
    dec_hidden: int = 128
    att_dim: int = 64
    proj_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.enc_layers == 0:
            self.enc_layers = 1 if self.direction == "bi" else 2

    @property
    def passes(self):
        return {"bi": (FORWARD, BACKWARD), "fwd": (FORWARD,), "bwd": (BACKWARD,)}[self.direction]

    @property
    def context_dim(self):
        return self.enc_hidden * len(self.passes)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        types = {f.name: f.type for f in fields(cls)}
        return cls(**{k: types[k](v) for k, v in d.items() if k in types})


class Model:
    """Parameters plus everything needed to run them: config, anchors, vocabulary."""

    def __init__(self, config, anchors, vocab, params):
        self.config = config
        self.anchors = anchors
        self.vocab = vocab
        self.params = params

    @classmethod
    def create(cls, config, anchors, vocab):
        params = {}
        for d in config.passes:
            params.update(init_encoder_params(
                d, config.feature_dim, config.enc_hidden, config.enc_layers,
                config.num_anchors, config.seed))
        params.update(init_decoder_params(
            config.variant, config.vocab_size, config.feature_dim, config.context_dim,
            config.embed_dim, config.dec_hidden, config.att_dim, config.proj_dim, config.seed))
        return cls(config, anchors, vocab, params)

    def proposal_params(self):
        return {k: v for k, v in self.params.items() if k.startswith(("enc_", "score_"))}

    def caption_params(self):
        return {k: v for k, v in self.params.items() if not k.startswith(("enc_", "score_"))}


@dataclass
class EncodedVideo:
    features: tn.Tensor
    states: dict  # direction -> list of hidden states
    scores: dict  # direction -> T x K tensor

    @property
    def T(self):
        return self.features.shape[0]


def encode_video(model, features):
    feats = tn.as_tensor(features)
    states, scores = {}, {}
    for d in model.config.passes:
        states[d] = encode_pass(feats, d, model.params)
        scores[d] = score_sequence(states[d], model.params, d)
    return EncodedVideo(feats, states, scores)


def candidates_for(model, enc):
    return fuse_candidates(
        enc.scores.get(FORWARD), enc.scores.get(BACKWARD), model.anchors.lengths, enc.T)


def event_inputs(model, enc, interval):
    """Clip features and context vectors for interval ``[m, n]``."""
    m, n = interval.start, interval.end
    h_fwd = enc.states[FORWARD][n - 1] if FORWARD in enc.states else None
    h_bwd = enc.states[BACKWARD][enc.T - m] if BACKWARD in enc.states else None
    clip = enc.features[m - 1:n]
    return prepare_event(model.config.variant, clip, h_fwd, h_bwd, model.params)


def propose(model, features, tau=0.25):
    enc = encode_video(model, features)
    return select_proposals(candidates_for(model, enc), tau), enc


def caption_proposals(model, enc, proposals, max_len=20):
    out = []
    for prop in proposals:
        ev = event_inputs(model, enc, prop.interval)
        ids, probs = greedy_decode(ev, model.params, model.config.variant, max_len)
        out.append(CaptionedEvent.build(prop, ids, probs))
    return out


def dense_caption(model, features, tau=0.25, gamma=10.0, k=None, max_len=20, max_proposals=None):
    """Propose, caption every selected proposal, then joint-rank; returns top ``k``."""
    proposals, enc = propose(model, features, tau)
    if max_proposals is not None:
        proposals = proposals[:max_proposals]
    events = caption_proposals(model, enc, proposals, max_len)
    return joint_rank(events, gamma, k)


def parameter_count(model):
    return int(sum(np.prod(p.shape) for p in model.params.values()))
