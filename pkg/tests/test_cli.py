from __future__ import annotations

import json
import subprocess
import sys

import pytest

from betsim.cli import main
from betsim.datagen import TrainingSample, read_records, write_samples

SCENARIO = """\
version: 1
races: {races}
seed: 3
race: {{track_length: 60, n_competitors: 4}}
population:
  - {{strategy: ZI, count: 6}}
  - {{strategy: LW, count: 3}}
  - {{strategy: UD, count: 3}}
  - {{strategy: BTF, count: 3}}
  - {{strategy: LinEx, count: 3}}
{extra}"""

GRID = """\
version: 1
folds: 3
grid:
  max_depth: [2, 3]
base:
  n_estimators: 30
  early_stopping_rounds: 5
validation_fraction: 0.1
"""


def _scenario(tmp_path, races=6, extra="", name="sc.cfg"):
    path = tmp_path / name
    path.write_text(SCENARIO.format(races=races, extra=extra))
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Small simulate -> extract -> train run shared by several tests."""
    d = tmp_path_factory.mktemp("pipe")
    cfg = _scenario(d, races=12)
    (d / "grid.cfg").write_text(GRID)
    assert main(["simulate", "--config", str(cfg), "--out", str(d / "rec.jsonl"), "--jobs", "1"]) == 0
    assert main(["extract", "--in", str(d / "rec.jsonl"), "--quantile", "0.5", "--out", str(d / "data")]) == 0
    assert main(["train", "--in", str(d / "data"), "--grid", str(d / "grid.cfg"), "--out", str(d / "model.json"),
                 "--report", str(d / "report.txt"), "--jobs", "1"]) == 0
    return d


def test_pipeline_outputs(pipeline):
    d = pipeline
    assert (d / "data" / "train.csv").exists() and (d / "data" / "holdout.csv").exists()
    meta = json.loads((d / "data" / "meta.json").read_text())
    assert meta["samples"] == meta["train"] + meta["holdout"] == meta["backs"] + meta["lays"]
    text = (d / "report.txt").read_text()
    assert "Confusion matrix" in text and "Feature F-scores" in text
    info = json.loads((d / "report.txt.json").read_text())
    assert info["selected"]["max_depth"] in (2, 3)
    assert len(info["grid"]) == 2
    assert not list(d.glob("*.partial"))


def test_simulate_is_deterministic_across_jobs(tmp_path):
    cfg = _scenario(tmp_path, races=4)
    outs = []
    for jobs in ("1", "2"):
        out = tmp_path / f"rec{jobs}.jsonl"
        assert main(["simulate", "--config", str(cfg), "--seed", "7", "--out", str(out), "--jobs", jobs]) == 0
        outs.append(out.read_bytes())
    again = tmp_path / "again.jsonl"
    main(["simulate", "--config", str(cfg), "--seed", "7", "--out", str(again)])
    assert outs[0] == outs[1] == again.read_bytes()


def test_resume_completes_a_truncated_run(tmp_path):
    cfg = _scenario(tmp_path, races=5)
    full = tmp_path / "full.jsonl"
    main(["simulate", "--config", str(cfg), "--out", str(full)])
    lines = full.read_bytes().split(b"\n")
    # keep the header, the first two races and half a line of the third
    settled = [i for i, raw in enumerate(lines) if b'"kind":"settled"' in raw]
    partial_bytes = b"\n".join(lines[:settled[1] + 1]) + b"\n" + lines[settled[1] + 1][:10]
    out = tmp_path / "resumed.jsonl"
    (tmp_path / "resumed.jsonl.partial").write_bytes(partial_bytes)
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--resume"]) == 0
    assert out.read_bytes() == full.read_bytes()
    assert not (tmp_path / "resumed.jsonl.partial").exists()


def test_resume_with_different_settings_is_data_error(tmp_path):
    cfg = _scenario(tmp_path, races=3)
    (tmp_path / "r.jsonl.partial").write_text('{"not": "this header"}\n')
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "r.jsonl"), "--resume"]) == 3


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("version: 1\nraces: 2\nseed: 1\npopulation: [{strategy: ZI, count: 3, colour: 1}]\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o.jsonl")]) == 2
    err = capsys.readouterr().err
    assert "population[0].colour" in err
    assert not (tmp_path / "o.jsonl").exists()


def test_model_population_needs_model(tmp_path):
    cfg = _scenario(tmp_path, races=2, extra="  - {strategy: MODEL, count: 2}\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o.jsonl")]) == 2


def test_data_error_exit_code(tmp_path):
    assert main(["extract", "--in", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "d")]) == 3
    assert not (tmp_path / "d").exists()


def test_bad_flags_are_config_errors(tmp_path):
    assert main(["extract", "--in", "x", "--quantile", "0", "--out", str(tmp_path / "d")]) == 2
    assert main(["simulate", "--config", "x", "--out", "y", "--jobs", "0"]) == 2


def test_training_error_exit_code_and_no_outputs(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    rows = [TrainingSample(float(i), float(i), 1, 10.0, 1) for i in range(30)]
    write_samples(data / "train.csv", rows)
    write_samples(data / "holdout.csv", rows[:5])
    (tmp_path / "grid.cfg").write_text(GRID)
    code = main(["train", "--in", str(data), "--grid", str(tmp_path / "grid.cfg"), "--out", str(tmp_path / "m.json"),
                 "--report", str(tmp_path / "r.txt")])
    assert code == 4
    assert not list(tmp_path.glob("m.json*")) and not list(tmp_path.glob("r.txt*"))


def test_grid_file_validation(tmp_path):
    bad = tmp_path / "g.cfg"
    bad.write_text("version: 1\ngrid: {max_depth: [2]}\ncv: {rows: 5}\n")
    assert main(["train", "--in", str(tmp_path), "--grid", str(bad), "--out", "m", "--report", "r"]) == 2


def test_evaluate_writes_statistics_and_keeps_model(pipeline, tmp_path):
    model = pipeline / "model.json"
    before = model.read_bytes()
    cfg = _scenario(tmp_path, races=4, extra="  - {strategy: MODEL, count: 3, params: {threshold: 0.05}}\n")
    out = tmp_path / "eval"
    assert main(["evaluate", "--scenario", str(cfg), "--model", str(model), "--out", str(out)]) == 0
    for name in ("profit_series.csv", "kde.csv", "box.csv", "normality.csv", "tests.csv", "summary.txt"):
        assert (out / name).exists()
    assert "MODEL > ZI" in (out / "summary.txt").read_text()
    assert model.read_bytes() == before


def test_evaluate_needs_three_races(pipeline, tmp_path):
    cfg = _scenario(tmp_path, races=2, extra="  - {strategy: MODEL, count: 3}\n")
    assert main(["evaluate", "--scenario", str(cfg), "--model", str(pipeline / "model.json"),
                 "--out", str(tmp_path / "e")]) == 2


def test_simulate_with_model_population(pipeline, tmp_path):
    cfg = _scenario(tmp_path, races=2, extra="  - {strategy: MODEL, count: 2}\n")
    out = tmp_path / "m.jsonl"
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--model", str(pipeline / "model.json")]) == 0
    recs = list(read_records(out))
    assert len(recs) == 2 and "MODEL" in recs[0].bettors.values()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "betsim", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simulate" in res.stdout
