import json

import pytest

from odn.cli import main
from odn.config import SessionConfig, read_config_file, resolve, write_config_file
from odn.dataset import load_csv, save_csv, synth_blobs
from odn.errors import ConfigError

SMALL = ["--classes", "8", "--dim", "8", "--per-class", "20", "--known", "4", "--epochs", "10", "--finetune-epochs", "10"]


def test_synth_writes_rows(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["synth", "--classes", "20", "--per-class", "60", "--dim", "32", "--seed", "7", "--out", str(out), "--quiet"]) == 0
    assert len(out.read_text().splitlines()) == 1 + 1200
    assert read_config_file(f"{out}.config")["data_seed"] == 7
    again = tmp_path / "e.csv"
    main(["synth", "--classes", "20", "--per-class", "60", "--dim", "32", "--seed", "7", "--out", str(again), "--quiet"])
    assert out.read_bytes() == again.read_bytes()


def test_synth_requires_out(capsys):
    assert main(["synth", "--classes", "4", "--dim", "4"]) == 2
    assert "--out" in capsys.readouterr().err


def test_usage_errors_exit_2(capsys):
    assert main([]) == 2
    assert main(["nonsense"]) == 2
    assert main(["run", "--epsilon", "2.0", "--quiet"]) == 2
    assert main(["run", "--epochs", "many"]) == 2


def test_stage_error_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("label,f0\n1,abc\n")
    assert main(["run", "--data", str(bad), "--out", str(tmp_path / "o"), "--quiet"]) == 1
    err = capsys.readouterr().err
    assert "load stage failed" in err and "line 2" in err


def test_run_deterministic_and_echoes_config(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", *SMALL, "--out", str(a), "--quiet"]) == 0
    assert main(["run", *SMALL, "--out", str(b), "--quiet"]) == 0
    assert (a / "session.json").read_bytes() == (b / "session.json").read_bytes()
    log = json.loads((a / "session.json").read_text())
    assert log["config"]["classes"] == 8 and len(log["iterations"]) == 4
    assert (a / "metrics.csv").read_text().startswith("# config ")
    assert json.loads((a / "model.json").read_text())["config"]["n_known"] == 4


def test_run_zero_unknowns(tmp_path):
    data = tmp_path / "d.csv"
    save_csv(synth_blobs(4, 20, 4, 0.1, 10.0, 1), data)
    assert main(["run", "--data", str(data), "--known", "4", "--out", str(tmp_path / "o"), "--quiet"]) == 0
    log = json.loads((tmp_path / "o" / "session.json").read_text())
    assert log["iterations"] == [] and log["initial"]["unknown_total"] == 0


def test_config_file_and_flag_precedence(tmp_path):
    cfg_file = tmp_path / "s.cfg"
    cfg_file.write_text("# session\nclasses = 8\ndim = 8\nper_class = 20\nn_known = 4\nepochs = 10 # inline\nallometry = true\n")
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg_file), "--no-allometry", "--no-emphasis", "--epochs", "12", "--out", str(out), "--quiet"]) == 0
    echo = json.loads((out / "session.json").read_text())["config"]
    assert echo["classes"] == 8 and echo["epochs"] == 12
    assert echo["allometry"] is False and echo["emphasis"] is False


def test_config_helpers(tmp_path):
    cfg = SessionConfig(epsilon=0.25, allometry=False)
    write_config_file(cfg, tmp_path / "c.cfg")
    assert resolve(read_config_file(tmp_path / "c.cfg")) == cfg
    (tmp_path / "x.cfg").write_text("bogus = 1\n")
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "x.cfg")
    (tmp_path / "y.cfg").write_text("no equals sign\n")
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "y.cfg")
    assert SessionConfig().with_seed(5).train_seed == 7


def test_split_train_calibrate_eval_pipeline(tmp_path, capsys):
    d = tmp_path / "s"
    assert main(["split", *SMALL, "--out", str(d), "--quiet"]) == 0
    meta = json.loads((d / "split.json").read_text())
    assert meta["known_labels"] == [1, 2, 3, 4]
    assert main(["train", *SMALL, "--train", str(d / "train.csv"), "--out", str(d), "--quiet"]) == 0
    assert main(["calibrate", "--model", str(d / "model.json"), "--train", str(d / "train.csv"), "--out", str(d), "--quiet"]) == 0
    assert main(["eval", "--model", str(d / "model.json"), "--test", str(d / "known_test.csv"), "--closed", "--out", str(d / "closed"), "--quiet"]) == 0
    closed = (d / "closed" / "metrics.csv").read_text().splitlines()
    assert closed[1] == "scope,category,correct,total,accuracy" and closed[2].startswith("overall,,")
    capsys.readouterr()
    assert main(["eval", "--model", str(d / "model.json"), "--thresholds", str(d / "thresholds.json"),
                 "--test", str(d / "unknown_pool.csv")]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert printed[0].startswith("overall,,0,")  # unincorporated unknowns are always wrong
    assert main(["eval", "--model", str(d / "model.json"), "--test", str(d / "known_test.csv")]) == 2


def test_sweep_rows(tmp_path):
    out = tmp_path / "o"
    assert main(["sweep", *SMALL, "--unknowns", "1,2,4", "--out", str(out), "--quiet"]) == 0
    lines = [l for l in (out / "sweep.csv").read_text().splitlines() if not l.startswith("#")]
    assert lines[0] == "unknown_count,overall,known,unknown" and len(lines) == 4
    assert [int(l.split(",")[0]) for l in lines[1:]] == [1, 2, 4]


def test_compare_and_ablate(tmp_path):
    out = tmp_path / "o"
    assert main(["compare", *SMALL, "--seeds", "2", "--format", "json", "--out", str(out), "--quiet"]) == 0
    doc = json.loads((out / "compare.json").read_text())
    assert doc["columns"] == ["iteration", "arm", "accuracy"]
    assert {r["arm"] for r in doc["rows"]} == {"mean", "stochastic"}
    assert main(["ablate", *SMALL, "--seeds", "1,2", "--out", str(out), "--quiet"]) == 0
    assert "allometry-only" in (out / "ablation.csv").read_text()
    assert main(["compare", *SMALL, "--seeds", "x,y", "--out", str(out), "--quiet"]) == 2
