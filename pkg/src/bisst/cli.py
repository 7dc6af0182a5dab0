"""Command-line interface.

Subcommands: gen-data, train, propose, caption, eval, gradcheck.  Settings
resolve as CLI flag, then ``--config`` JSON entry, then built-in default.
"""

import argparse
import json
import logging
import sys
from dataclasses import fields

from . import dataio
from .checkpoint import load_checkpoint, save_checkpoint
from .decoder import VARIANTS, joint_rank
from .errors import ContractError, DatasetError, FormatError, GenerationError
from .evaluation import dense_caption_score, precision_recall_f1_at_k
from .geometry import nms
from .model import caption_proposals, propose
from .synthetic import GenConfig, generate_dataset
from .training import TrainConfig, train, write_history_csv
from .gradcheck import toy_problem
from . import tensor as tn

DIRECTION_FLAGS = ("fwd", "bwd", "bi")

# CLI dest -> TrainConfig field
TRAIN_FLAGS = {
    "seed": "seed", "variant": "variant", "direction": "direction", "k": "num_anchors",
    "tau": "tau", "gamma": "gamma", "lam": "lam", "epochs": "epochs",
    "pretrain_epochs": "pretrain_epochs", "lr": "lr", "enc_hidden": "enc_hidden",
    "dec_hidden": "dec_hidden", "embed_dim": "embed_dim", "att_dim": "att_dim",
    "proj_dim": "proj_dim",
}

GEN_FLAGS = {
    "seed": "seed", "num_videos": "num_videos", "t_min": "t_min", "t_max": "t_max",
    "dim": "feature_dim", "types": "num_types", "events_min": "events_min",
    "events_max": "events_max", "noise": "noise", "overlap": "overlap_prob",
}


class UsageError(Exception):
    pass


def _common(p):
    p.add_argument("--config", metavar="PATH", help="JSON file of default settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="PATH")


def build_parser():
    parser = argparse.ArgumentParser(prog="bisst", description="Dense event captioning engine")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="{gen-data,train,propose,caption,eval,gradcheck}")
    sub.required = True

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    _common(p)
    p.add_argument("--num-videos", type=int)
    p.add_argument("--t-min", type=int)
    p.add_argument("--t-max", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--types", type=int)
    p.add_argument("--events-min", type=int)
    p.add_argument("--events-max", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--overlap", type=float)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _common(p)
    p.add_argument("--data", required=True, metavar="PATH")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--direction", choices=DIRECTION_FLAGS)
    p.add_argument("--k", type=int, help="number of anchors")
    p.add_argument("--tau", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--enc-hidden", type=int)
    p.add_argument("--dec-hidden", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--att-dim", type=int)
    p.add_argument("--proj-dim", type=int)
    p.add_argument("--loss-csv", metavar="PATH", help="default: <out>.loss.csv")

    for name, help_ in (("propose", "score proposals per video"),
                        ("caption", "caption and joint-rank proposals")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--model", required=True, metavar="PATH")
        p.add_argument("--data", required=True, metavar="PATH")
        p.add_argument("--tau", type=float)
        p.add_argument("--topk", type=int)
        if name == "caption":
            p.add_argument("--gamma", type=float)
            p.add_argument("--max-len", type=int, default=20)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _common(p)
    p.add_argument("--pred", required=True, metavar="PATH")
    p.add_argument("--data", required=True, metavar="PATH")
    p.add_argument("--topk", type=int)
    p.add_argument("--nms", type=float, help="NMS threshold (off by default)")

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny model")
    _common(p)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--direction", choices=DIRECTION_FLAGS)
    p.add_argument("--h", type=float, default=1e-5)
    return parser


def _load_config(path):
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _resolve(args, config, mapping, cls):
    """Build ``cls`` from defaults, then the config file, then CLI flags."""
    valid = {f.name for f in fields(cls)}
    values = {}
    for key, value in config.items():
        field_name = mapping.get(key, key)
        if field_name in valid:
            values[field_name] = value
    for dest, field_name in mapping.items():
        value = getattr(args, dest, None)
        if value is not None:
            values[field_name] = value
    if "lengths" in values:
        values["lengths"] = tuple(values["lengths"])
    return cls(**values)


def _setting(args, config, name, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return config.get(name, default)


def _require_out(args):
    if not args.out:
        raise UsageError("--out is required")
    return args.out


def cmd_gen_data(args, config):
    gen = _resolve(args, config, GEN_FLAGS, GenConfig)
    videos = generate_dataset(gen)
    dataio.write_dataset(_require_out(args), videos)
    print(f"wrote {len(videos)} videos to {args.out}")


def cmd_train(args, config):
    out = _require_out(args)
    cfg = _resolve(args, config, TRAIN_FLAGS, TrainConfig)
    dataset = dataio.read_dataset(args.data)
    if not dataset:
        raise DatasetError(f"{args.data}: no videos")
    model, history = train(dataset, cfg,
                           on_epoch=lambda r: print(
                               f"epoch {r['epoch']:3d} {r['phase']:8s} "
                               f"Lp={r['proposal_loss']:.4f} Lc={r['caption_loss']:.4f}"))
    save_checkpoint(model, out)
    loss_csv = args.loss_csv or out + ".loss.csv"
    write_history_csv(loss_csv, history)
    print(f"wrote checkpoint {out} and loss log {loss_csv}")


def cmd_propose(args, config):
    out = _require_out(args)
    model = load_checkpoint(args.model)
    tau = _setting(args, config, "tau", 0.25)
    topk = _setting(args, config, "topk", None)
    per_video = {}
    for v in dataio.read_dataset(args.data):
        props, _ = propose(model, v.features, tau)
        per_video[v.video_id] = props[:topk] if topk else props
    dataio.write_proposals(out, per_video)
    print(f"wrote proposals for {len(per_video)} videos to {out}")


def cmd_caption(args, config):
    out = _require_out(args)
    model = load_checkpoint(args.model)
    tau = _setting(args, config, "tau", 0.25)
    gamma = _setting(args, config, "gamma", 10.0)
    topk = _setting(args, config, "topk", None)
    per_video = {}
    for v in dataio.read_dataset(args.data):
        props, enc = propose(model, v.features, tau)
        events = caption_proposals(model, enc, props, args.max_len)
        per_video[v.video_id] = joint_rank(events, gamma, topk)
    dataio.write_captions(out, per_video, model.vocab)
    print(f"wrote captions for {len(per_video)} videos to {out}")


def _nms_in_file_order(cands, threshold):
    """NMS on fused scores, returning survivors in their original rank order."""
    if any(c.fused_score != c.fused_score for c in cands):
        raise ValueError("NMS needs a fused score column")
    kept = {id(c) for c in nms(cands, threshold)}
    return [c for c in cands if id(c) in kept]


def cmd_eval(args, config):
    topk = _setting(args, config, "topk", 1000)
    nms_th = _setting(args, config, "nms", None)
    rows, captions = dataio.read_prediction_rows(args.pred)
    if nms_th is not None:
        rows = {vid: _nms_in_file_order(cands, nms_th) for vid, cands in rows.items()}
        if captions is not None:
            keep = {vid: {c.interval for c in cands} for vid, cands in rows.items()}
            captions = {vid: [x for x in caps if x[0] in keep.get(vid, ())]
                        for vid, caps in captions.items()}
    videos = dataio.read_dataset(args.data)
    gts = {v.video_id: v.intervals for v in videos}
    preds = {vid: [c.interval for c in cands] for vid, cands in rows.items()}
    det = precision_recall_f1_at_k(preds, gts, topk)
    print(det.to_table())
    csv_text = det.to_csv()
    if captions is not None:
        refs = {v.video_id: [(ev.interval, ev.caption) for ev in v.events] for v in videos}
        cap = dense_caption_score(captions, refs, topk)
        print(cap.to_table())
        csv_text += "\n" + cap.to_csv()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)


def cmd_gradcheck(args, config):
    seed = _setting(args, config, "seed", 0)
    variant = _setting(args, config, "variant", "TDA+CG")
    direction = _setting(args, config, "direction", "bi")
    fn, params, _ = toy_problem(seed=seed, variant=variant, direction=direction)
    err = tn.finite_diff_check(fn, params, args.h)
    print(f"max relative error {err:.3e} ({variant}, {direction}, seed {seed})")
    return 0 if err < 1e-4 else 1


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "propose": cmd_propose,
    "caption": cmd_caption, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
}


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _load_config(args.config)
        code = COMMANDS[args.command](args, config)
        return 0 if code is None else code
    except UsageError as exc:
        print(f"bisst {args.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, DatasetError, FormatError, GenerationError, ContractError,
            ValueError, json.JSONDecodeError) as exc:
        print(f"bisst {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli())
