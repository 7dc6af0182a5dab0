"""Interval algebra over integer timesteps: tIoU, anchors, labels and NMS.

Intervals are 1-indexed and inclusive at both ends, so ``[3, 7]`` covers five
timesteps.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

FORWARD = "fwd"
BACKWARD = "bwd"


@dataclass(frozen=True, order=True)
class Interval:
    start: int
    end: int

    def __post_init__(self):
        if not (1 <= self.start <= self.end):
            raise ValueError(f"invalid interval [{self.start}, {self.end}]")

    @property
    def length(self):
        return self.end - self.start + 1

    def __iter__(self):
        yield self.start
        yield self.end


@dataclass(frozen=True)
class AnchorSet:
    lengths: tuple

    def __post_init__(self):
        lengths = tuple(int(x) for x in self.lengths)
        if not lengths:
            raise ValueError("an anchor set needs at least one length")
        if any(x < 1 for x in lengths):
            raise ValueError("anchor lengths must be positive")
        if any(b <= a for a, b in zip(lengths, lengths[1:])):
            raise ValueError("anchor lengths must be strictly increasing")
        object.__setattr__(self, "lengths", lengths)

    def __len__(self):
        return len(self.lengths)

    def __iter__(self):
        return iter(self.lengths)

    @property
    def K(self):
        return len(self.lengths)


def tiou(a, b):
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    union = a.length + b.length - inter
    return inter / union


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def cluster_anchors(gt_lengths, K, max_iter=300):
    """Cluster event lengths into at most ``K`` anchor lengths with 1-D k-means.

    Centres start at ``K`` evenly spaced quantiles of the data (of its distinct
    values if the plain quantiles collide) and Lloyd iterations run until the
    assignment stops changing.  Centres are rounded half-up to integers and
    deduplicated.
    """
    data = np.asarray(sorted(int(x) for x in gt_lengths), dtype=np.float64)
    if data.size == 0 or np.any(data < 1):
        raise ValueError("cluster_anchors needs positive lengths")
    distinct = np.unique(data)
    if distinct.size < K:
        warnings.warn(
            f"only {distinct.size} distinct lengths; reducing K from {K}", stacklevel=2
        )
        K = int(distinct.size)
    qs = (np.arange(K) + 0.5) / K
    centers = np.quantile(data, qs)
    if np.unique(centers).size < K:
        centers = np.quantile(distinct, qs)
    assign = None
    for _ in range(max_iter):
        new_assign = np.argmin(np.abs(data[:, None] - centers[None, :]), axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for k in range(K):
            members = data[assign == k]
            if members.size:
                centers[k] = members.mean()
    rounded = sorted({max(1, _round_half_up(c)) for c in centers})
    return AnchorSet(tuple(rounded))


def anchor_interval(direction, step, length, T):
    """Interval scored for anchor ``length`` at a given pass step, or None.

    Forward step ``t`` scores intervals ending at ``t``.  Backward step ``j``
    has consumed ``v_T .. v_{T-j+1}`` and scores intervals starting at
    ``T - j + 1``.
    """
    if direction == FORWARD:
        start, end = step - length + 1, step
    elif direction == BACKWARD:
        start = T - step + 1
        end = start + length - 1
    else:
        raise ValueError(f"unknown direction {direction!r}")
    if start < 1 or end > T:
        return None
    return Interval(start, end)


def label_anchors(T, anchors, gt_events, direction, threshold=0.5):
    """Binary T x K labels: 1 where the anchor interval's best tIoU exceeds ``threshold``."""
    labels = np.zeros((T, len(anchors)), dtype=np.float64)
    if not gt_events:
        return labels
    for step in range(1, T + 1):
        for j, length in enumerate(anchors):
            iv = anchor_interval(direction, step, length, T)
            if iv is None:
                continue
            if max(tiou(iv, g) for g in gt_events) > threshold:
                labels[step - 1, j] = 1.0
    return labels


def nms(candidates, threshold):
    """Greedy temporal NMS on ``fused_score``.

    Candidates are visited by score descending, then earlier start, then
    shorter length; one is kept when its tIoU with every kept candidate is at
    most ``threshold``.
    """
    if not (0.0 < threshold <= 1.0):
        raise ValueError("NMS threshold must lie in (0, 1]")
    ordered = sorted(
        candidates,
        key=lambda c: (-c.fused_score, c.interval.start, c.interval.length),
    )
    kept = []
    for cand in ordered:
        if all(tiou(cand.interval, k.interval) <= threshold for k in kept):
            kept.append(cand)
    return kept
