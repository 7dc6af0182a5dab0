"""Proposal and dense-captioning metrics.

Matching is many-to-one: a prediction matches a ground truth when their tIoU
is strictly greater than the threshold.  Counts are pooled over videos before
dividing (micro-averaging).
"""

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass

from .geometry import tiou

DETECTION_THRESHOLDS = (0.3, 0.5, 0.7, 0.9)
# 0.5, 0.55, ..., 1.0 written as exact decimals
AVG_RECALL_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(11))


def f1_score(precision, recall):
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _matches(iou, threshold):
    # A threshold of 1.0 cannot be exceeded, so it means an exact match.
    return iou > threshold or (threshold >= 1.0 and iou == 1.0)


def _interval(x):
    return getattr(x, "interval", x)


@dataclass
class DetectionReport:
    k: int
    thresholds: tuple
    precision: tuple  # per threshold
    recall: tuple
    avg_precision: float
    avg_recall: float

    @property
    def f1(self):
        return tuple(f1_score(p, r) for p, r in zip(self.precision, self.recall))

    @property
    def avg_f1(self):
        return f1_score(self.avg_precision, self.avg_recall)

    def rows(self):
        for th, p, r, f in zip(self.thresholds, self.precision, self.recall, self.f1):
            yield f"{th:g}", p, r, f
        yield "avg", self.avg_precision, self.avg_recall, self.avg_f1

    def to_table(self):
        lines = [f"Detection @{self.k}", f"{'tIoU':>6} {'precision':>10} {'recall':>10} {'f1':>10}"]
        for th, p, r, f in self.rows():
            lines.append(f"{th:>6} {p:>10.3f} {r:>10.3f} {f:>10.3f}")
        return "\n".join(lines)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tiou", "precision", "recall", "f1"])
        for th, p, r, f in self.rows():
            w.writerow([th, f"{p:.6f}", f"{r:.6f}", f"{f:.6f}"])
        return buf.getvalue()


def _match_counts(predictions, ground_truths, k, threshold):
    matched_pred = n_pred = matched_gt = n_gt = 0
    for vid in set(predictions) | set(ground_truths):
        preds = [_interval(p) for p in predictions.get(vid, [])][:k]
        gts = [_interval(g) for g in ground_truths.get(vid, [])]
        n_pred += len(preds)
        n_gt += len(gts)
        ious = [[tiou(p, g) for g in gts] for p in preds]
        matched_pred += sum(any(_matches(x, threshold) for x in row) for row in ious)
        matched_gt += sum(
            any(_matches(ious[i][j], threshold) for i in range(len(preds)))
            for j in range(len(gts))
        )
    return matched_pred, n_pred, matched_gt, n_gt


def precision_recall_f1_at_k(predictions, ground_truths, k, thresholds=DETECTION_THRESHOLDS):
    """Precision/recall of the top-``k`` predictions per video, averaged over thresholds.

    ``predictions`` and ``ground_truths`` map video ids to lists of intervals
    (or objects with an ``interval`` attribute); predictions must already be
    in descending score order.
    """
    if k < 1:
        raise ValueError("k must be positive")
    ps, rs = [], []
    for th in thresholds:
        mp, n_p, mg, n_g = _match_counts(predictions, ground_truths, k, th)
        ps.append(mp / n_p if n_p else 0.0)
        rs.append(mg / n_g if n_g else 0.0)
    return DetectionReport(
        k, tuple(thresholds), tuple(ps), tuple(rs),
        sum(ps) / len(ps), sum(rs) / len(rs),
    )


def recall_at_k_avg_tiou(predictions, ground_truths, k_list, thresholds=AVG_RECALL_THRESHOLDS):
    """Recall@k averaged over tIoU 0.5..1.0 for each k in ``k_list``."""
    out = {}
    for k in k_list:
        rs = []
        for th in thresholds:
            _, _, mg, n_g = _match_counts(predictions, ground_truths, k, th)
            rs.append(mg / n_g if n_g else 0.0)
        out[k] = sum(rs) / len(rs)
    return out


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidate, reference, n=4):
    """Single-reference sentence BLEU with uniform weights and no smoothing.

    Orders longer than the candidate are skipped; any order with zero clipped
    matches gives 0.
    """
    if n not in (1, 2, 3, 4):
        raise ValueError("n must be between 1 and 4")
    candidate, reference = list(candidate), list(reference)
    c, r = len(candidate), len(reference)
    if c == 0 or r == 0:
        return 0.0
    orders = min(n, c)
    log_sum = 0.0
    for i in range(1, orders + 1):
        cand = _ngrams(candidate, i)
        clipped = sum((cand & _ngrams(reference, i)).values())
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / sum(cand.values()))
    score = math.exp(log_sum / orders)
    if c < r:
        score *= math.exp(1.0 - r / c)
    return score


@dataclass
class CaptionReport:
    k: int
    thresholds: tuple
    bleu: dict  # n -> per-threshold tuple

    def joint(self, n):
        vals = self.bleu[n]
        return sum(vals) / len(vals)

    @property
    def bleu1(self):
        return self.joint(1)

    @property
    def bleu4(self):
        return self.joint(4)

    def rows(self):
        for i, th in enumerate(self.thresholds):
            yield (f"{th:g}",) + tuple(self.bleu[n][i] for n in (1, 2, 3, 4))
        yield ("avg",) + tuple(self.joint(n) for n in (1, 2, 3, 4))

    def to_table(self):
        lines = [f"Dense captioning @{self.k}",
                 f"{'tIoU':>6} {'bleu1':>8} {'bleu2':>8} {'bleu3':>8} {'bleu4':>8}"]
        for row in self.rows():
            lines.append(f"{row[0]:>6} " + " ".join(f"{v:>8.4f}" for v in row[1:]))
        return "\n".join(lines)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tiou", "bleu1", "bleu2", "bleu3", "bleu4"])
        for row in self.rows():
            w.writerow([row[0]] + [f"{v:.6f}" for v in row[1:]])
        return buf.getvalue()


def dense_caption_score(predictions, ground_truths, k, thresholds=DETECTION_THRESHOLDS):
    """BLEU-n of captioned predictions against overlapping references.

    ``predictions`` maps video ids to ranked ``(interval, tokens)`` pairs;
    ``ground_truths`` maps video ids to ``(interval, reference_tokens)``
    pairs.  At each threshold every top-``k`` prediction contributes one score
    per matched reference, or a single 0 when nothing matches; the scores are
    averaged, then the per-threshold values are averaged.
    """
    bleu = {n: [] for n in (1, 2, 3, 4)}
    for th in thresholds:
        scores = {n: [] for n in (1, 2, 3, 4)}
        for vid, preds in predictions.items():
            gts = ground_truths.get(vid, [])
            for iv, toks in list(preds)[:k]:
                refs = [ref for g, ref in gts if _matches(tiou(iv, g), th)]
                for n in scores:
                    if refs:
                        scores[n].extend(bleu_n(toks, ref, n) for ref in refs)
                    else:
                        scores[n].append(0.0)
        for n in bleu:
            bleu[n].append(sum(scores[n]) / len(scores[n]) if scores[n] else 0.0)
    return CaptionReport(k, tuple(thresholds), {n: tuple(v) for n, v in bleu.items()})
