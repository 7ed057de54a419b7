import json
import subprocess
import sys

import pytest

from imdpsynth.cli import main, scenario_config
from imdpsynth.config import ConfigError, RunConfig, defaults


def _small_config(tmp_path, **over):
    cfg = scenario_config("linear3")
    cfg.update(domain={"lower": [-1, -1], "upper": [1, 1]}, grid_step=0.25, samples_per_mode=40, trials=50,
               validate_cells=2, max_steps=30)
    cfg.update(over)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_example_config_round_trips(capsys):
    assert main(["example-config", "--scenario", "nonlin4"]) == 0
    cfg = RunConfig.loads(capsys.readouterr().out)
    assert cfg.formula == "F des" and cfg.known == "identity"


def test_unknown_key_is_a_config_error(tmp_path, capsys):
    path = _small_config(tmp_path, colour="blue")
    assert main(["gen-data", "--config", str(path), "--out", str(tmp_path / "d.csv")]) == 2
    assert "colour" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["gen-data", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "d.csv")]) == 2


def test_help_lists_config_keys():
    out = subprocess.run([sys.executable, "-m", "imdpsynth", "abstract", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for key in defaults():
        assert key in out.stdout


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**scenario_config("linear3"), "formula": "F goal"}).validate()
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**scenario_config("linear3"), "formula": "F des"}).validate()
    cfg = RunConfig.from_dict({**scenario_config("linear3"), "formula": "F des", "unused_labels": ["obs"]})
    cfg.validate()
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**scenario_config("linear3"), "formula": "F (des"}).formula_ast()


def test_config_dump_is_stable():
    cfg = RunConfig.from_dict(scenario_config("linear3"))
    assert RunConfig.loads(cfg.dumps()).dumps() == cfg.dumps()


def test_zero_samples_give_header_only(tmp_path):
    path = _small_config(tmp_path)
    out = tmp_path / "d.csv"
    assert main(["gen-data", "--config", str(path), "--out", str(out), "--samples", "0"]) == 0
    assert out.read_text() == "u,x1,x2,xp1,xp2\n"
    assert main(["learn", "--config", str(path), "--data", str(out), "--out", str(tmp_path / "l.json")]) == 2


def _pipeline(tmp_path, path, threads):
    d = tmp_path / "data.csv"
    if not d.exists():
        assert main(["gen-data", "--config", str(path), "--out", str(d)]) == 0
    tag = f"t{threads}"
    steps = [
        ["learn", "--data", str(d), "--out", str(tmp_path / tag / "learned.json")],
        ["abstract", "--learned", str(tmp_path / tag / "learned.json"), "--out", str(tmp_path / tag / "abs")],
        ["synthesize", "--abstraction", str(tmp_path / tag / "abs"), "--out", str(tmp_path / tag / "syn")],
    ]
    for s in steps:
        extra = ["--threads", str(threads)]
        assert main([s[0], "--config", str(path), *s[1:], *extra]) == 0
    return tmp_path / tag


@pytest.mark.slow
def test_pipeline_end_to_end_and_thread_independent(tmp_path):
    path = _small_config(tmp_path)
    a = _pipeline(tmp_path, path, 1)
    b = _pipeline(tmp_path, path, 3)
    files = ["learned.json", "abs/partition.json", "abs/imdp.txt", "abs/abstraction.json", "syn/dfa.txt",
             "syn/result.txt", "syn/heatmap.csv", "syn/summary.json"]
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    summary = json.loads((a / "syn/summary.json").read_text())
    assert sum(summary["counts"].values()) == 64
    assert summary["counts"]["yes"] > 0

    out = tmp_path / "validation.json"
    assert main(["validate", "--config", str(path), "--abstraction", str(a / "abs"), "--result", str(a / "syn"),
                 "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["checked"] == 2 and doc["passed"] == 2


def test_scenario_is_needed_for_data(tmp_path):
    path = _small_config(tmp_path, scenario=None)
    assert main(["gen-data", "--config", str(path), "--out", str(tmp_path / "d.csv")]) == 2


def test_kernel_grid_search(tmp_path):
    grid = [{"signal_variance": 1.0, "length_scale": 0.05}, {"signal_variance": 100.0, "length_scale": 3.0}]
    path = _small_config(tmp_path, kernel_grid=grid, kernels={"2": {"signal_variance": 4.0, "length_scale": 1.0}})
    d, out = tmp_path / "d.csv", tmp_path / "l.json"
    assert main(["gen-data", "--config", str(path), "--out", str(d)]) == 0
    assert main(["learn", "--config", str(path), "--data", str(d), "--out", str(out)]) == 0
    modes = {m["mode"]: m for m in json.loads(out.read_text())["modes"]}
    assert modes[1]["gps"][0]["kernel"]["length_scale"] == 3.0
    assert modes[2]["gps"][0]["kernel"]["length_scale"] == 1.0
