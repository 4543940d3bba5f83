import json
import subprocess
import sys

import pytest

from cdsod.cli import build_parser, main

SCHEDULE = "2,5,10,100,500"


@pytest.fixture
def synth(tmp_path):
    path = tmp_path / "synth.csv"
    assert main(["prepare", "--synthetic", "1000:70", "--dims", "10", "--seed", "1", "--output", str(path)]) == 0
    return path


def _staged(tmp_path, synth, extra=()):
    out = tmp_path / "staged"
    assert main(["score", "--input", str(synth), "--k", SCHEDULE, "--out-dir", str(out), *extra]) == 0
    assert main(["split", "--input", str(synth), "--scores", str(out / "scores.csv"), "--theta", "auto", "--out-dir", str(out)]) == 0
    assert main(["detect", "--input", str(synth), "--pools", str(out / "pools.csv"), "--out-dir", str(out)]) == 0
    return out


def test_every_command_has_help(capsys):
    parser = build_parser()
    assert set(parser.subcommands) == {"prepare", "score", "split", "detect", "run"}
    for name in parser.subcommands:
        with pytest.raises(SystemExit) as exc:
            main([name, "--help"])
        assert exc.value.code == 0
        assert "usage:" in capsys.readouterr().out


def test_prepare_synthetic(synth):
    lines = synth.read_text().splitlines()
    assert len(lines) == 1071
    assert lines[0].split(",")[-1] == "label"
    assert sum(line.endswith(",0") for line in lines[1:]) == 70


def test_prepare_groups_rare_classes(tmp_path):
    raw = tmp_path / "raw.data"
    rows = [f"{i},{i % 7},?" if i % 5 == 0 else f"{i},{i % 7},{i}" for i in range(40)]
    labels = ["a"] * 37 + ["b"] * 3
    raw.write_text("\n".join(f"{r},{lab}" for r, lab in zip(rows, labels)) + "\n")
    out = tmp_path / "prep.csv"
    assert main(["prepare", "--input", str(raw), "--missing", "?", "--label-col", "last", "--group-threshold", "0.05", "--output", str(out)]) == 0
    lines = out.read_text().splitlines()[1:]
    assert sum(line.endswith(",0") for line in lines) == 3
    assert "?" not in out.read_text()


def test_score_file_descending(tmp_path, synth):
    out = tmp_path / "o"
    assert main(["score", "--k", SCHEDULE, "--input", str(synth), "--out-dir", str(out)]) == 0
    lines = (out / "scores.csv").read_text().splitlines()
    assert lines[0] == "id,avg_sim_score"
    values = [float(line.split(",")[1]) for line in lines[1:]]
    assert len(values) == 1070 and values == sorted(values, reverse=True)


def test_run_equals_staged_commands(tmp_path, synth):
    staged = _staged(tmp_path, synth)
    run = tmp_path / "run"
    assert main(["run", "--input", str(synth), "--k", SCHEDULE, "--theta", "auto", "--out-dir", str(run)]) == 0
    for name in ("scores.csv", "pools.csv", "pools.json", "histogram.csv", "report.txt", "report.csv"):
        assert (run / name).read_bytes() == (staged / name).read_bytes(), name


def test_commands_are_idempotent(tmp_path, synth):
    a = _staged(tmp_path / "a", synth)
    b = _staged(tmp_path / "b", synth, extra=("--threads", "2"))
    for name in ("scores.csv", "pools.csv", "histogram.csv", "report.csv", "report.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_config_file_and_flag_precedence(tmp_path, synth):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": SCHEDULE, "theta": "0.5", "classifier": "gaussian"}))
    out = tmp_path / "cfgrun"
    assert main(["run", "--config", str(cfg), "--input", str(synth), "--out-dir", str(out)]) == 0
    assert json.loads((out / "pools.json").read_text())["theta"] == 0.5
    assert "classifier: gaussian" in (out / "report.txt").read_text()
    assert main(["run", "--config", str(cfg), "--input", str(synth), "--theta", "0.6", "--out-dir", str(out)]) == 0
    assert json.loads((out / "pools.json").read_text())["theta"] == 0.6
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["run", "--config", str(cfg), "--input", str(synth)]) == 2


def test_env_overrides(tmp_path, synth, monkeypatch):
    out = tmp_path / "envout"
    monkeypatch.setenv("CDS_OUTPUT_DIR", str(out))
    monkeypatch.setenv("CDS_THREADS", "2")
    assert main(["score", "--k", "2,5", "--input", str(synth)]) == 0
    assert (out / "scores.csv").exists()
    monkeypatch.setenv("CDS_THREADS", "zero")
    assert main(["score", "--k", "2,5", "--input", str(synth)]) == 2


@pytest.mark.parametrize(
    "argv, code",
    [
        (["split", "--scores", "x.csv", "--theta", "1.1"], 2),
        (["score", "--k", "5", "--input", "{synth}"], 2),
        (["score", "--k", "2,5000", "--input", "{synth}"], 2),
        (["score", "--input", "{synth}"], 2),
        (["run", "--k", "2,5", "--theta", "1.0", "--input", "{synth}"], 3),
        (["prepare", "--input", "{tmp}/absent.data"], 3),
        (["score", "--k", "2,5", "--input", "{tmp}/absent.csv"], 3),
        (["run", "--k", "2,5", "--theta", "-1", "--comparator", "ge", "--kernel", "rbf", "--gamma", "100", "--svm-tol", "1e-9", "--max-passes", "1", "--input", "{synth}"], 4),
    ],
)
def test_exit_codes(tmp_path, synth, argv, code, capsys):
    argv = [a.format(synth=synth, tmp=tmp_path) for a in argv]
    assert main([*argv, "--out-dir", str(tmp_path / "err")]) == code
    assert capsys.readouterr().err.startswith("error:")


def test_detect_needs_split_metadata(tmp_path, synth):
    out = _staged(tmp_path, synth)
    (out / "pools.json").unlink()
    assert main(["detect", "--input", str(synth), "--pools", str(out / "pools.csv"), "--out-dir", str(out)]) == 3


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cdsod", "split", "--scores", "x", "--theta", "2"], capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 2
    assert "theta" in proc.stderr
