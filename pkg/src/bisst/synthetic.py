"""Deterministic desk-scale datasets with planted events.

Every event type owns one direction of an orthonormal signature basis.  A
timestep inside an event of type k emits that unit vector (summed when events
overlap) plus Gaussian noise; background steps emit noise only.  Captions come
from per-type templates with one randomly filled synonym slot.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationError
from .geometry import Interval


@dataclass(frozen=True)
class Event:
    interval: Interval
    caption: tuple
    event_type: int = -1


@dataclass
class FeatureSequence:
    video_id: str
    features: np.ndarray
    events: list = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("features must be a non-empty T x D matrix")
        for ev in self.events:
            if ev.interval.end > self.T:
                raise ValueError(f"event {ev.interval} exceeds T={self.T}")
            if not ev.caption:
                raise ValueError("event captions must be non-empty")

    @property
    def T(self):
        return self.features.shape[0]

    @property
    def D(self):
        return self.features.shape[1]

    @property
    def intervals(self):
        return [ev.interval for ev in self.events]


@dataclass(frozen=True)
class GenConfig:
    num_videos: int = 50
    t_min: int = 24
    t_max: int = 40
    feature_dim: int = 16
    num_types: int = 3
    events_min: int = 1
    events_max: int = 2
    lengths: tuple = (4, 8, 12)
    noise: float = 0.1
    overlap_prob: float = 0.0
    min_gap: int = 1
    seed: int = 0


SUBJECTS = ("person", "man", "woman")
ACTIONS = (
    ("jumps", "over", "a", "hurdle"),
    ("plays", "the", "guitar"),
    ("rides", "a", "bike"),
    ("throws", "a", "ball"),
    ("cooks", "some", "food"),
    ("dances", "on", "stage"),
    ("swims", "in", "a", "pool"),
    ("paints", "a", "wall"),
)


def render_caption(event_type, slot_rng):
    """Template caption for ``event_type``; the subject word is drawn from ``slot_rng``."""
    if event_type < 0:
        raise ValueError("event type must be non-negative")
    subject = SUBJECTS[int(slot_rng.integers(len(SUBJECTS)))]
    return ("the", subject) + _action(event_type) + ("in", "the", "video")


def _action(event_type):
    if event_type < len(ACTIONS):
        return ACTIONS[event_type]
    return ("does", "action", str(event_type))


def caption_tokens(num_types):
    """Every token any template can produce for types ``0 .. num_types-1``."""
    toks = {"the", "in", "video"} | set(SUBJECTS)
    for k in range(num_types):
        toks |= set(_action(k))
    return sorted(toks)


def signatures(config):
    if config.feature_dim < config.num_types:
        raise GenerationError("feature_dim must be at least the number of event types")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5157]))
    q, _ = np.linalg.qr(rng.standard_normal((config.feature_dim, config.feature_dim)))
    return q[:, :config.num_types].T.copy()


def _check(config):
    if config.num_videos < 1 or config.num_types < 1:
        raise GenerationError("need at least one video and one event type")
    if not (1 <= config.t_min <= config.t_max):
        raise GenerationError("invalid T range")
    if not (1 <= config.events_min <= config.events_max):
        raise GenerationError("invalid events-per-video range")
    if config.noise < 0:
        raise GenerationError("noise level must be non-negative")
    need = config.events_min * min(config.lengths) + (config.events_min - 1) * config.min_gap
    if need > config.t_min:
        raise GenerationError(
            f"{config.events_min} events of length >= {min(config.lengths)} "
            f"do not fit in T={config.t_min}"
        )


def _place(rng, T, lengths, gap):
    """Non-overlapping starts for events of the given lengths, in order, or None."""
    slack = T - sum(lengths) - gap * (len(lengths) - 1)
    if slack < 0:
        return None
    # Split the slack over len+1 slots (before, between, after).
    cuts = np.sort(rng.integers(0, slack + 1, size=len(lengths)))
    extra = np.diff(np.concatenate([[0], cuts]))
    starts, pos = [], 1
    for i, L in enumerate(lengths):
        pos += int(extra[i])
        starts.append(pos)
        pos += L + gap
    return starts


def _video(config, index, sigs):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, index]))
    T = int(rng.integers(config.t_min, config.t_max + 1))
    for _ in range(100):
        n = int(rng.integers(config.events_min, config.events_max + 1))
        lengths = [int(x) for x in rng.choice(config.lengths, size=n)]
        starts = _place(rng, T, lengths, config.min_gap)
        if starts is not None:
            break
    else:
        raise GenerationError(f"could not pack events into video {index} (T={T})")
    types = [int(x) for x in rng.integers(config.num_types, size=n)]
    spans = [(Interval(s, s + L - 1), k) for s, L, k in zip(starts, lengths, types)]
    if n and rng.random() < config.overlap_prob:
        L = int(rng.choice(config.lengths))
        if L <= T:
            s = int(rng.integers(1, T - L + 2))
            iv = Interval(s, s + L - 1)
            if all(iv != other for other, _ in spans):
                spans.append((iv, int(rng.integers(config.num_types))))
                spans.sort(key=lambda x: (x[0].start, x[0].end))
    feats = config.noise * rng.standard_normal((T, config.feature_dim))
    events = []
    for iv, k in spans:
        feats[iv.start - 1:iv.end] += sigs[k]
        events.append(Event(iv, render_caption(k, rng), k))
    return FeatureSequence(f"v{index:04d}", feats, events)


def generate_dataset(config):
    _check(config)
    sigs = signatures(config)
    return [_video(config, i, sigs) for i in range(config.num_videos)]
