import json

import pytest

from bisst.checkpoint import load_checkpoint
from bisst.cli import run_cli
from bisst.dataio import read_dataset, read_predictions

SMALL = ["--enc-hidden", "6", "--dec-hidden", "6", "--embed-dim", "4",
         "--att-dim", "4", "--proj-dim", "4"]


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "d.jsonl"
    assert run_cli(["gen-data", "--num-videos", "4", "--t-min", "14", "--t-max", "16",
                    "--dim", "4", "--seed", "3", "--out", str(path)]) == 0
    return path


def test_gradcheck_seed_one(capsys):
    assert run_cli(["gradcheck", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    err = float(out.split("max relative error")[1].split()[0])
    assert err < 1e-4


def test_unknown_subcommand(capsys):
    assert run_cli(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag(capsys, dataset):
    assert run_cli(["eval", "--pred", str(dataset), "--data", str(dataset), "--bogus"]) == 2


def test_missing_file(capsys, tmp_path):
    code = run_cli(["eval", "--pred", str(tmp_path / "nope.csv"), "--data", str(tmp_path / "x")])
    assert code == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("bisst eval: error:") and "\n" not in err


def test_malformed_dataset(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("not json\n")
    assert run_cli(["train", "--data", str(bad), "--out", str(tmp_path / "m")]) == 1
    assert "bad.jsonl:1" in capsys.readouterr().err


def test_eval_on_ground_truth_gives_perfect_f1(tmp_path, dataset, capsys):
    pred = tmp_path / "p.csv"
    with open(pred, "w") as fh:
        fh.write("video_id,start,end,fused,caption_confidence,joint_score,tokens\n")
        for v in read_dataset(dataset):
            for ev in v.events:
                fh.write(f"{v.video_id},{ev.interval.start},{ev.interval.end},1,0,10,{' '.join(ev.caption)}\n")
    out_csv = tmp_path / "report.csv"
    assert run_cli(["eval", "--pred", str(pred), "--data", str(dataset), "--out", str(out_csv)]) == 0
    table = capsys.readouterr().out
    avg = [line for line in table.splitlines() if line.strip().startswith("avg")][0]
    assert avg.split()[1:] == ["1.000", "1.000", "1.000"]
    assert "avg,1.000000,1.000000,1.000000" in out_csv.read_text()


def test_full_pipeline(tmp_path, dataset, capsys):
    model = tmp_path / "m.bsst"
    assert run_cli(["train", "--data", str(dataset), "--epochs", "2", "--pretrain-epochs", "1",
                    "--k", "2", "--out", str(model)] + SMALL) == 0
    loss_csv = tmp_path / "m.bsst.loss.csv"
    assert loss_csv.read_text().splitlines()[0].startswith("epoch,phase,proposal_loss")
    assert load_checkpoint(model).anchors.K == 2
    props = tmp_path / "p.csv"
    caps = tmp_path / "c.csv"
    assert run_cli(["propose", "--model", str(model), "--data", str(dataset), "--tau", "0",
                    "--topk", "5", "--out", str(props)]) == 0
    assert run_cli(["caption", "--model", str(model), "--data", str(dataset), "--tau", "0",
                    "--topk", "5", "--max-len", "4", "--out", str(caps)]) == 0
    header = props.read_text().splitlines()[0]
    assert header == "video_id,start,end,fwd,bwd,fused"
    assert caps.read_text().splitlines()[0] == \
        "video_id,start,end,fused,caption_confidence,joint_score,tokens"
    intervals, captions = read_predictions(caps)
    assert captions is not None and all(len(v) <= 5 for v in intervals.values())
    for pred in (props, caps):
        assert run_cli(["eval", "--pred", str(pred), "--data", str(dataset), "--topk", "5",
                        "--nms", "0.8"]) == 0
    assert "Dense captioning @5" in capsys.readouterr().out


def test_config_file_precedence(tmp_path, dataset):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 1, "pretrain_epochs": 1, "num_anchors": 1,
                               "enc_hidden": 3, "dec_hidden": 3, "embed_dim": 2,
                               "att_dim": 2, "proj_dim": 2, "variant": "H"}))
    model = tmp_path / "m.bsst"
    assert run_cli(["train", "--config", str(cfg), "--data", str(dataset),
                    "--k", "2", "--out", str(model)]) == 0
    m = load_checkpoint(model)
    assert m.config.variant == "H" and m.config.enc_hidden == 3
    assert m.anchors.K == 2  # flag beats file


def test_gen_data_is_reproducible(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for p in (a, b):
        assert run_cli(["gen-data", "--num-videos", "3", "--seed", "9", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
