"""JSON-lines dataset files and the proposal/caption CSV formats.

Dataset: one UTF-8 JSON object per line with ``id``, ``T``, ``D``,
``features`` (T lists of D floats) and ``events``, each ``{"start", "end",
"caption"}`` with 1-indexed inclusive timesteps and a space-separated
lowercase caption.  Floats are written with ``repr`` precision, so a dataset
round-trips bit-exactly.

Proposal CSV columns: ``video_id,start,end,fwd,bwd,fused``.
Caption CSV columns: ``video_id,start,end,fused,caption_confidence,joint_score,tokens``.
"""

import csv
import json

import numpy as np

from .errors import DatasetError
from .geometry import Interval
from .proposal import ProposalCandidate
from .synthetic import Event, FeatureSequence

PROPOSAL_COLUMNS = ["video_id", "start", "end", "fwd", "bwd", "fused"]
CAPTION_COLUMNS = ["video_id", "start", "end", "fused", "caption_confidence", "joint_score", "tokens"]


def video_to_record(video):
    return {
        "id": video.video_id,
        "T": video.T,
        "D": video.D,
        "features": video.features.tolist(),
        "events": [
            {"start": ev.interval.start, "end": ev.interval.end, "caption": " ".join(ev.caption)}
            for ev in video.events
        ],
    }


def record_to_video(rec, where="record"):
    try:
        T, D = int(rec["T"]), int(rec["D"])
        feats = np.asarray(rec["features"], dtype=np.float64)
        if feats.shape != (T, D):
            raise DatasetError(f"{where}: features have shape {feats.shape}, header says ({T}, {D})")
        events = []
        for ev in rec["events"]:
            caption = tuple(str(ev["caption"]).split())
            events.append(Event(Interval(int(ev["start"]), int(ev["end"])), caption))
        return FeatureSequence(str(rec["id"]), feats, events)
    except DatasetError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{where}: {exc}") from exc


def write_dataset(path, videos):
    with open(path, "w", encoding="utf-8") as fh:
        for v in videos:
            fh.write(json.dumps(video_to_record(v)) + "\n")


def read_dataset(path):
    videos = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            videos.append(record_to_video(rec, f"{path}:{lineno}"))
    return videos


def write_proposals(path, per_video):
    """``per_video`` maps video ids to ranked ``ProposalCandidate`` lists."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PROPOSAL_COLUMNS)
        for vid, cands in per_video.items():
            for c in cands:
                w.writerow([vid, c.interval.start, c.interval.end,
                            repr(c.forward_score), repr(c.backward_score), repr(c.fused_score)])


def write_captions(path, per_video, vocab):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CAPTION_COLUMNS)
        for vid, events in per_video.items():
            for e in events:
                w.writerow([vid, e.interval.start, e.interval.end, repr(e.proposal.fused_score),
                            repr(e.caption_confidence), repr(e.joint_score),
                            " ".join(vocab.decode(e.tokens))])


def read_predictions(path):
    """Ranked predictions from a proposal or caption CSV.

    Returns ``(intervals, captions)``: both map video ids to lists in file
    order; ``captions`` is None for proposal files.
    """
    rows, captions = read_prediction_rows(path)
    intervals = {vid: [c.interval for c in cands] for vid, cands in rows.items()}
    return intervals, captions


def _score(row, key):
    value = row.get(key)
    return float(value) if value not in (None, "") else float("nan")


def read_prediction_rows(path):
    """Like ``read_predictions``, but rows come back as ``ProposalCandidate``
    objects carrying the scores present in the file (absent ones are NaN)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if not {"video_id", "start", "end"} <= set(cols):
            raise DatasetError(f"{path}: missing video_id/start/end columns")
        has_caps = "tokens" in cols
        rows, captions = {}, ({} if has_caps else None)
        for lineno, row in enumerate(reader, 2):
            try:
                iv = Interval(int(row["start"]), int(row["end"]))
                cand = ProposalCandidate(iv, -1, _score(row, "fwd"), _score(row, "bwd"),
                                         _score(row, "fused"))
            except (TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            rows.setdefault(row["video_id"], []).append(cand)
            if has_caps:
                captions.setdefault(row["video_id"], []).append((iv, tuple(row["tokens"].split())))
    return rows, captions
