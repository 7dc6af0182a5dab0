"""Tiny end-to-end problems for finite-difference gradient checks.

A central difference at h = 1e-5 on a loss of size ~10 carries roundoff of
about 1e-10, so any entry with |g| below ~1e-6 fails a 1e-4 relative test
even when the analytic gradient is right.  The toy problem keeps that rare:
parameters are drawn at O(1) scale instead of with the training initialiser
(fan-scaled weights leave many gradients near 1e-9), and the network is as
narrow as the architecture allows so there are few entries to go wrong.
"""

import numpy as np

from .decoder import Vocabulary
from .geometry import AnchorSet, Interval
from .model import encode_video
from .proposal import anchor_class_weights
from .synthetic import Event, FeatureSequence
from .training import (
    TrainConfig,
    build_examples,
    caption_objective,
    new_model,
    proposal_objective,
    total_loss,
)

TOY_VOCAB = ("a", "b", "c", "d")


def toy_problem(seed=0, variant="TDA+CG", direction="bi", hidden=2, T=5, D=2,
                param_scale=1.5, lam=0.5):
    """``(scalar_fn, params, model)`` for one toy video with two captioned events."""
    rng = np.random.default_rng(seed)
    video = FeatureSequence(
        "toy", rng.standard_normal((T, D)),
        [Event(Interval(1, 3), ("a", "b")), Event(Interval(3, T), ("c", "a", "d"))],
    )
    vocab = Vocabulary(TOY_VOCAB)
    cfg = TrainConfig(direction=direction, variant=variant, enc_hidden=hidden,
                      embed_dim=hidden, dec_hidden=hidden, att_dim=hidden, proj_dim=hidden,
                      seed=seed)
    model = new_model([video], cfg, anchors=AnchorSet((2, 3, 4)), vocab=vocab)
    for p in model.params.values():
        p.data = rng.uniform(-param_scale, param_scale, size=p.shape)
    example = build_examples([video], model, 0.5, 0.8)[0]
    weights = {d: anchor_class_weights([example.labels[d]]) for d in model.config.passes}
    targets = [(ev.interval, vocab.encode(ev.caption)) for ev in video.events]

    def scalar_fn():
        enc = encode_video(model, video.features)
        lp = proposal_objective(model, enc, example, weights)
        lc, _ = caption_objective(model, enc, targets)
        return total_loss(lp, lc, lam)

    return scalar_fn, model.params, model
