import json

import numpy as np
import pytest

from cdnmedal.cli import cli_main, run_bench, sample_histories
from cdnmedal.io import codecs


@pytest.fixture(scope="module")
def seq(tmp_path_factory):
    root = tmp_path_factory.mktemp("seq")
    assert cli_main(["synth", "--H", "16", "--W", "16", "--frames", "40", "--seed", "2", "--out", str(root)]) == 0
    return root


def test_synth_layout(seq):
    assert len(list((seq / "input").glob("in*.png"))) == 40
    assert len(list((seq / "groundtruth").glob("gt*.png"))) == 40
    assert (seq / "GT" / "background.png").exists()


def test_end_to_end(seq, tmp_path, capsys):
    common = ["--data", str(seq), "--layout", "cdnet", "--T", "16", "--epochs", "2", "--out", str(tmp_path)]
    assert cli_main(["train-bg", *common, "--set", "train_histories=256"]) == 0
    rec = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert rec["type"] == "train" and rec["network"] == "cdn_gm"
    w = ["--set", f"cdn_weights={tmp_path / 'cdn_gm.cdnm'}"]
    assert cli_main(["extract-bg", *common, *w, "--hop", "8"]) == 0
    assert len(list((tmp_path / "backgrounds").glob("bg*.png"))) == 4     # frames 15, 23, 31, 39
    assert cli_main(["train-fg", *common, *w, "--set", "train_pairs=8"]) == 0
    w += ["--set", f"medal_weights={tmp_path / 'medal_net.cdnm'}"]
    assert cli_main(["infer", *common, *w]) == 0
    masks = sorted((tmp_path / "masks").glob("bin*.png"))
    assert len(masks) == 40 and masks[0].name == "bin000001.png"
    lines = (tmp_path / "report.jsonl").read_text().splitlines()
    assert len(lines) == 40
    assert [json.loads(x)["refreshed"] for x in lines].count(True) == 2
    capsys.readouterr()

    man = tmp_path / "bg.txt"
    man.write_text(f"synthetic s1 {tmp_path / 'background.png'} {seq / 'GT' / 'background.png'}\n")
    assert cli_main(["eval-bg", str(man), "--out", str(tmp_path)]) == 0
    rows = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert rows[0]["sequence"] == "s1" and rows[-1]["group"] == "overall"
    man = tmp_path / "fg.txt"
    man.write_text(f"synthetic s1 {tmp_path / 'masks'} {seq}\n")
    assert cli_main(["eval-fg", str(man), "--out", str(tmp_path)]) == 0
    rows = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert 0 <= rows[0]["fmeasure"] <= 1


def test_gradcheck_command(capsys):
    assert cli_main(["gradcheck"]) == 0
    rows = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert {r["network"] for r in rows} == {"cdn_gm", "medal_net"} and all(r["ok"] for r in rows)


def test_usage_errors(tmp_path, capsys):
    assert cli_main(["gradcheck", "--set", "nope=1"]) == 1
    assert cli_main(["gradcheck", "--set", "cdn.T=abc"]) == 1
    assert cli_main(["frobnicate"]) == 1
    assert cli_main(["infer", "--out", str(tmp_path)]) == 1          # no data
    assert cli_main(["infer", "--data", str(tmp_path / "missing")]) == 2
    assert cli_main(["eval-bg", str(tmp_path / "none.txt")]) == 1


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("cdn.T = 32\nbogus = 1\n")
    assert cli_main(["gradcheck", "--config", str(cfg)]) == 1
    assert "bogus" in capsys.readouterr().err


def test_sample_histories_shape_and_determinism():
    frames = (np.arange(40 * 8 * 8 * 3) % 256).astype(np.uint8).reshape(40, 8, 8, 3)
    a = sample_histories(frames, 16, 50, 1)
    assert a.shape == (50, 16, 3) and a.dtype == np.float32
    assert np.array_equal(a, sample_histories(frames, 16, 50, 1))


def test_bench_record(tmp_path, capsys):
    rep = run_bench(H=32, W=32, frames=96)
    assert rep["end_to_end_fps"] > 0 and rep["pixels"] == 1024
