import json
from pathlib import Path

import pytest

from filterlab.errors import ConfigurationError
from filterlab.lab.cli import main
from filterlab.lab.config import load_config
from filterlab.lab.experiments import exp_noise_audit

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_config_layering(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('experiment = "stability"\nn_members = 4\n[forward]\nresolutions = [16]\n')
    cfg = load_config("stability", p, {"seed": 3})
    assert cfg["n_members"] == 4 and cfg.seed == 3
    assert cfg["forward"]["viscosities"] == [0.01, 0.001]


def test_config_errors(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('experiment = "claw"\n')
    with pytest.raises(ConfigurationError):
        load_config("stability", p)
    with pytest.raises(ConfigurationError):
        load_config("stability", tmp_path / "missing.toml")
    with pytest.raises(ConfigurationError):
        load_config("consistency", overrides={"forward": {"reference": 32}})
    with pytest.raises(ConfigurationError):
        load_config("stability", overrides={"perturbation": {"radii": [0.1]}})


def test_config_hash():
    a = load_config("filter")
    assert a.config_hash() == load_config("filter", overrides={"threads": 4}).config_hash()
    assert a.config_hash() != load_config("filter", overrides={"seed": 1}).config_hash()
    assert a.config_hash() != load_config("filter", overrides={"noise": {"p": 0.7}}).config_hash()


def test_noise_audit_record(tmp_path):
    rec = exp_noise_audit(load_config("noise-audit"), tmp_path)
    assert rec.passed and set(rec.criteria) == {"8"}
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert sorted(summary["artifacts"]) == sorted(p.name for p in tmp_path.iterdir()
                                                  if p.name != "timings.log")


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["noise-audit", "--out", str(tmp_path / "a")]) == 0
    assert "[PASS]" in capsys.readouterr().out
    bad = tmp_path / "bad.toml"
    bad.write_text('model = "heat"\n')
    assert main(["filter", "--config", str(bad)]) == 2


def test_filter_resample_demo(tmp_path):
    out = tmp_path / "f"
    assert main(["filter", "--resample", "--out", str(out)]) == 0
    assert (out / "resampled_ess.csv").exists()


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_example_configs_load(path):
    experiment = path.read_text().split('experiment = "')[1].split('"')[0]
    cfg = load_config(experiment, path)
    if experiment == "filter":
        obs = cfg.observables(cfg["forward"]["t_end"])
        cfg.noise_model(obs[0].d_obs)
