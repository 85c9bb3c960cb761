import json

import numpy as np
import pytest

from phasicpg import cli
from phasicpg.config import build_config, load_config, parse_overrides, read_sections
from phasicpg.harness import SUITES, run_experiment, run_seed, run_sweep, suite_configs
from phasicpg.nn import ConfigurationError
from phasicpg.phasic import read_metrics
from phasicpg.plotting import ema, plot_runs

TINY = {
    "num_envs": "4", "n_steps": "16", "n_pi": "2", "minibatches": "4",
    "aux_minibatches_per_n_pi": "4", "hidden": "8", "total_timesteps": "256",
}


@pytest.fixture
def ini(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(
        "[env]\nname = chain\nlength = 5\n\n"
        "[phasic]\nvariant = ppg-single-net\nn_pi = 4\nlr = 1e-3\n\n"
        "[rollout]\nnum_envs = 8\n\n[nn]\nhidden = 32, 32\n\n"
        "[harness]\nseeds = 1, 2\nlabel = demo\n"
    )
    return path


def test_config_parses_typed_values(ini):
    cfg = load_config(ini)
    assert cfg.env == "chain" and cfg.env_params == {"length": 5}
    assert cfg.hp.variant == "ppg-single-net" and cfg.hp.n_pi == 4 and cfg.hp.lr == 1e-3
    assert cfg.hp.hidden == (32, 32) and cfg.seeds == (1, 2) and cfg.name == "demo"
    assert cfg.hp.e_aux == 6  # untouched default


def test_config_roundtrips_through_ini(ini, tmp_path):
    cfg = load_config(ini, {"phasic.beta_clone": "0.5", "e_pi": "2"})
    again = tmp_path / "again.ini"
    again.write_text(cfg.to_ini())
    assert load_config(again) == cfg


def test_override_is_recorded_in_snapshot(ini, tmp_path):
    cfg = load_config(ini, {**TINY, "n_pi": "2"})
    run_seed(cfg, 1, tmp_path / "run")
    snap = read_sections(tmp_path / "run" / "config.ini")
    assert snap["phasic"]["n_pi"] == "2"
    assert snap["harness"]["seeds"] == "1"


@pytest.mark.parametrize(
    "sections, overrides, message",
    [
        ({"phasic": {"n_pie": "3"}}, {}, "phasic.n_pie: unknown key"),
        ({"physics": {"g": "9.8"}}, {}, "unknown section"),
        ({"env": {"name": "chain", "size": "9"}}, {}, "env.size: not a parameter"),
        ({"env": {"name": "nethack"}}, {}, "unknown env"),
        ({"phasic": {"n_pi": "four"}}, {}, "phasic.n_pi"),
        ({}, {"minibatches": "7"}, "does not divide"),
        ({}, {"bogus": "1"}, "unknown override key"),
    ],
)
def test_config_errors_name_the_field(sections, overrides, message):
    with pytest.raises(ConfigurationError, match=message):
        build_config(sections, overrides)


def test_parse_overrides():
    assert parse_overrides(["a.b=1", " c = x=y "]) == {"a.b": "1", "c": "x=y"}
    with pytest.raises(ConfigurationError):
        parse_overrides(["novalue"])


def test_missing_config_file():
    with pytest.raises(ConfigurationError, match="cannot read"):
        read_sections("/nonexistent/x.ini")


def test_cli_exit_codes(ini, tmp_path, capsys):
    assert cli.main(["validate-config", str(ini)]) == 0
    assert "[phasic]" in capsys.readouterr().out
    assert cli.main(["validate-config", str(ini), "--set", "phasic.zzz=1"]) == 1
    assert "phasic.zzz" in capsys.readouterr().err
    assert cli.main(["sweep", "no-such-suite"]) == 1
    err = capsys.readouterr().err
    assert "available suites" in err and "ppg-vs-ppo" in err
    assert cli.main(["plot", str(tmp_path / "missing"), "-o", str(tmp_path / "x.svg")]) == 2


def test_cli_run_reuses_finished_seeds(ini, tmp_path, capsys):
    args = ["run", str(ini), "--out-dir", str(tmp_path)] + [a for k, v in TINY.items() for a in ("--set", f"{k}={v}")]
    assert cli.main(args) == 0
    csv = tmp_path / "demo" / "seed_1" / "metrics.csv"
    stamp = csv.stat().st_mtime_ns
    assert cli.main(args) == 0
    assert csv.stat().st_mtime_ns == stamp
    assert "demo: final return" in capsys.readouterr().out


def test_three_seed_chain_run(tmp_path):
    cfg = build_config(overrides={"env": "chain", "seeds": "0, 1, 2", "total_timesteps": "512000", "out_dir": str(tmp_path)})
    summary = run_experiment(cfg)
    base = tmp_path / "ppg-dual"
    assert summary["seeds"] == [0, 1, 2]
    for s in range(3):
        rows = read_metrics(base / f"seed_{s}" / "metrics.csv")
        assert rows[-1].env_steps >= 512_000
        assert json.loads((base / f"seed_{s}" / "result.json").read_text())["seed"] == s
    on_disk = json.loads((base / "summary.json").read_text())
    assert on_disk["median"] == pytest.approx(np.median(on_disk["final_returns"]))


def test_sweep_writes_plot_and_summary(tmp_path):
    configs = suite_configs("ppg-vs-ppo", None, {**TINY, "env": "chain", "seeds": "0, 1"})
    assert [c.name for c in configs] == ["ppg", "ppo"]
    summaries = run_sweep("ppg-vs-ppo", configs, tmp_path, window=3)
    root = tmp_path / "ppg-vs-ppo"
    assert set(summaries) == {"ppg", "ppo"}
    assert (root / "comparison.svg").read_text().lstrip().startswith("<?xml")
    assert (root / "ppo" / "seed_1" / "metrics.csv").exists()
    assert json.loads((root / "summary.json").read_text())["ppg"]["seeds"] == [0, 1]


def test_every_suite_builds():
    for name in SUITES:
        assert suite_configs(name, None, {"num_envs": "16"})
    with pytest.raises(KeyError):
        suite_configs("nope")


def test_plot_is_deterministic(tmp_path):
    cfg = build_config(overrides={**TINY, "env": "chain", "label": "a"})
    run_seed(cfg, 0, tmp_path / "r0")
    run_seed(cfg, 1, tmp_path / "r1")
    a = plot_runs([tmp_path / "r0", tmp_path / "r1"], tmp_path / "a.svg")
    b = plot_runs([tmp_path / "r0", tmp_path / "r1"], tmp_path / "b.svg")
    assert a.read_bytes() == b.read_bytes()


def test_ema():
    np.testing.assert_allclose(ema([1.0, 1.0, 1.0], 5), [1.0, 1.0, 1.0])
    out = ema([np.nan, 2.0, np.nan, 4.0], 3)
    assert np.isnan(out[0]) and out[1] == 2.0 and out[2] == 2.0 and out[3] == pytest.approx(3.0)
