"""Two-phase training: proposal pretraining, then joint proposal + caption loss."""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tn
from .decoder import Vocabulary, caption_loss
from .geometry import Interval, cluster_anchors, label_anchors, tiou
from .model import Model, ModelConfig, encode_video, event_inputs
from .proposal import anchor_class_weights, proposal_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lam: float = 0.5
    tau: float = 0.25
    gamma: float = 10.0
    theta_label: float = 0.5
    theta_caption_train: float = 0.8
    lr: float = 1e-3
    batch_size: int = 1
    pretrain_epochs: int = 5
    epochs: int = 20
    num_anchors: int = 3
    direction: str = "bi"
    variant: str = "TDA+CG"
    enc_hidden: int = 128
    enc_layers: int = 0
    embed_dim: int = 64
    dec_hidden: int = 128
    att_dim: int = 64
    proj_dim: int = 64
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        for name in ("theta_label", "theta_caption_train"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")
        if self.pretrain_epochs > self.epochs:
            raise ValueError("pretrain_epochs cannot exceed epochs")

    def to_dict(self):
        return asdict(self)


def total_loss(proposal_loss_value, caption_loss_value, lam):
    return lam * proposal_loss_value + caption_loss_value


@dataclass
class TrainingExample:
    video: object
    labels: dict  # direction -> T x K array
    caption_targets: list  # (interval, token ids) pairs


def build_examples(dataset, model, theta_label, theta_caption_train):
    examples = []
    lengths = model.anchors.lengths
    for video in dataset:
        gts = video.intervals
        labels = {
            d: label_anchors(video.T, lengths, gts, d, theta_label) for d in model.config.passes
        }
        targets = []
        if gts:
            for end in range(1, video.T + 1):
                for length in lengths:
                    if end - length + 1 < 1:
                        continue
                    iv = Interval(end - length + 1, end)
                    ious = [tiou(iv, g) for g in gts]
                    best = int(np.argmax(ious))
                    if ious[best] > theta_caption_train:
                        targets.append((iv, model.vocab.encode(video.events[best].caption)))
        examples.append(TrainingExample(video, labels, targets))
    return examples


def proposal_objective(model, enc, example, weights):
    loss = None
    for d in model.config.passes:
        w0, w1 = weights[d]
        term = proposal_loss(enc.scores[d], example.labels[d], w0, w1)
        loss = term if loss is None else loss + term
    return loss


def caption_objective(model, enc, targets):
    """Mean caption NLL over ``targets`` and the number of scored tokens."""
    losses, tokens = [], 0
    for iv, ids in targets:
        ev = event_inputs(model, enc, iv)
        losses.append(caption_loss(ev, ids, model.params, model.config.variant))
        tokens += len(ids) + 1
    if not losses:
        return None, 0
    return tn.reduce_sum(tn.stack(losses)) / len(losses), tokens


def new_model(dataset, config, anchors=None, vocab=None):
    if anchors is None:
        lengths = [ev.interval.length for v in dataset for ev in v.events]
        anchors = cluster_anchors(lengths, config.num_anchors)
    if vocab is None:
        vocab = Vocabulary.from_captions(ev.caption for v in dataset for ev in v.events)
    mc = ModelConfig(
        feature_dim=dataset[0].D, vocab_size=len(vocab), num_anchors=len(anchors),
        direction=config.direction, variant=config.variant,
        enc_hidden=config.enc_hidden, enc_layers=config.enc_layers,
        embed_dim=config.embed_dim, dec_hidden=config.dec_hidden,
        att_dim=config.att_dim, proj_dim=config.proj_dim, seed=config.seed,
    )
    return Model.create(mc, anchors, vocab)


def train(dataset, config, anchors=None, vocab=None, model=None, on_epoch=None):
    """Train a model; returns ``(model, history)``.

    The first ``pretrain_epochs`` epochs minimise the proposal loss alone and
    update only encoder and scoring parameters.  Later epochs minimise
    ``lam * L_p + L_c`` where ``L_c`` averages over proposals whose tIoU with
    a ground truth exceeds ``theta_caption_train``.  ``history`` holds one
    dict per epoch.
    """
    if not dataset:
        raise ValueError("training needs a non-empty dataset")
    if model is None:
        model = new_model(dataset, config, anchors, vocab)
    examples = build_examples(dataset, model, config.theta_label, config.theta_caption_train)
    weights = {
        d: anchor_class_weights([ex.labels[d] for ex in examples]) for d in model.config.passes
    }
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7A1]))
    state = tn.AdamState(model.params)
    prop_params = model.proposal_params()
    history = []
    for epoch in range(1, config.epochs + 1):
        joint = epoch > config.pretrain_epochs
        active = model.params if joint else prop_params
        lp_sum = lc_sum = tot_sum = 0.0
        tok_sum = n_cap = 0
        for idx in rng.permutation(len(examples)):
            ex = examples[idx]
            with tn.Tape():
                enc = encode_video(model, ex.video.features)
                lp = proposal_objective(model, enc, ex, weights)
                lc, ntok = (None, 0)
                if joint:
                    lc, ntok = caption_objective(model, enc, ex.caption_targets)
                    if lc is None:
                        log.debug("video %s has no proposal above tIoU %.2f",
                                  ex.video.video_id, config.theta_caption_train)
                if not joint:
                    loss = lp
                else:
                    loss = total_loss(lp, 0.0 if lc is None else lc, config.lam)
            grads = tn.backprop(loss, active)
            grads, _ = tn.clip_grad_norm(grads, config.clip_norm)
            tn.adam_step(active, grads, state, lr=config.lr)
            lp_sum += lp.item()
            tot_sum += loss.item()
            if lc is not None:
                lc_sum += lc.item() * len(ex.caption_targets)
                n_cap += len(ex.caption_targets)
                tok_sum += ntok
        rec = {
            "epoch": epoch,
            "phase": "joint" if joint else "pretrain",
            "proposal_loss": lp_sum / len(examples),
            "caption_loss": lc_sum / n_cap if n_cap else 0.0,
            "caption_nll_per_token": lc_sum / tok_sum if tok_sum else 0.0,
            "total_loss": tot_sum / len(examples),
        }
        history.append(rec)
        log.info("epoch %d %s Lp=%.4f Lc=%.4f", epoch, rec["phase"], rec["proposal_loss"], rec["caption_loss"])
        if on_epoch is not None:
            on_epoch(rec)
    return model, history


def caption_nll_per_token(model, videos):
    """Teacher-forced NLL per token on the ground-truth events of ``videos``."""
    total, tokens = 0.0, 0
    for v in videos:
        enc = encode_video(model, v.features)
        for ev in v.events:
            ids = model.vocab.encode(ev.caption)
            total += caption_loss(event_inputs(model, enc, ev.interval), ids,
                                  model.params, model.config.variant).item()
            tokens += len(ids) + 1
    return total / tokens


def write_history_csv(path, history):
    cols = ["epoch", "phase", "proposal_loss", "caption_loss", "caption_nll_per_token", "total_loss"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for rec in history:
            fh.write(",".join(str(rec[c]) for c in cols) + "\n")


def fit_captions(model, items, max_steps, lr=1e-3, clip_norm=5.0, target_nll=None):
    """Fit the caption loss on fixed ``(video, interval, caption)`` items.

    Each step is one Adam update on the mean teacher-forced NLL over all
    items, with the encoders trained end to end.  Stops early once the
    per-token NLL falls below ``target_nll``.  Returns the per-token NLL
    recorded before each update, plus the final value.
    """
    videos = {}
    for video, _, _ in items:
        videos.setdefault(video.video_id, video)
    targets = [(video.video_id, iv, model.vocab.encode(cap)) for video, iv, cap in items]
    state = tn.AdamState(model.params)
    curve = []

    def objective():
        enc = {vid: encode_video(model, v.features) for vid, v in videos.items()}
        total, tokens = None, 0
        for vid, iv, ids in targets:
            term = caption_loss(event_inputs(model, enc[vid], iv), ids,
                                model.params, model.config.variant)
            total = term if total is None else total + term
            tokens += len(ids) + 1
        return total, tokens

    for _ in range(max_steps):
        with tn.Tape():
            total, tokens = objective()
            loss = total / len(targets)
        curve.append(total.item() / tokens)
        if target_nll is not None and curve[-1] < target_nll:
            return curve
        grads = tn.backprop(loss, model.params)
        grads, _ = tn.clip_grad_norm(grads, clip_norm)
        tn.adam_step(model.params, grads, state, lr=lr)
    total, tokens = objective()
    curve.append(total.item() / tokens)
    return curve
