import csv
import json
import subprocess
import sys

import pytest
import yaml
from hypothesis import given, settings, strategies as st

from anderson_msa import cli
from anderson_msa.config import (DEFAULT_SEED, EXPERIMENTS, ConfigError, RunConfig, default_config,
                                 parse_config, parse_config_text, resolve_seed)
from anderson_msa.runner import RESULT_COLUMNS, trend


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


DS_SMALL = """\
schema_version: 1
experiment: ds-estimate
params: {N: 2, n: 2, d: 1, p: 13, L0: 6, m: 0.5, E_star: 2.0}
ensemble: {kind: scaled_uniform, a: 20.0}
interaction: [1.0, 0.5]
trials: 12
settings: {k_list: [0]}
"""


# --------------------------------------------------------------------------- configuration

def test_every_experiment_has_default_config():
    for name in EXPERIMENTS:
        assert default_config(name).experiment == name


def test_shipped_configs_parse(pytestconfig):
    root = pytestconfig.rootpath / "configs"
    files = sorted(root.glob("*.yaml"))
    assert len(files) >= len(EXPERIMENTS)
    for f in files:
        assert parse_config(f).experiment in EXPERIMENTS


def test_error_reports_line_number():
    text = DS_SMALL.replace("trials: 12", "trials: -3")
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text, "x.yaml")
    assert "x.yaml:6: trials" in str(exc.value)


def test_settings_error_reports_line_number():
    text = DS_SMALL.replace("settings: {k_list: [0]}", "settings:\n  k_list: [0]\n  bogus: 1")
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text, "x.yaml")
    assert "x.yaml:9: settings.bogus" in str(exc.value)


@pytest.mark.parametrize("bad", [
    "experiment: nope\n",
    "experiment: wegner\nschema_version: 2\n",
    "experiment: wegner\nparams: {mode: paper, p: 5}\n",
    "experiment: wegner\nensemble: {kind: scaled_uniform}\n",
    "experiment: wegner\ninteraction: [-1]\n",
    "experiment: wegner\nseed: -1\n",
    "- just a list\n",
    "trials: 5\n",
    "experiment: [unclosed\n",
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        parse_config_text(bad)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(EXPERIMENTS), st.integers(1, 10 ** 6), st.integers(0, 2 ** 64 - 1),
       st.sampled_from(["uniform01", "zero"]), st.lists(st.floats(0, 5), max_size=3),
       st.integers(1, 3), st.integers(4, 50))
def test_config_yaml_roundtrip(exp, trials, seed, kind, phi, n, L0):
    cfg = RunConfig.model_validate({"experiment": exp, "trials": trials, "seed": seed,
                                    "ensemble": {"kind": kind}, "interaction": phi,
                                    "params": {"N": 3, "n": n, "L0": L0, "p": 19}})
    back = parse_config_text(cfg.to_yaml())
    assert back == cfg and back.config_hash() == cfg.config_hash()


def test_seed_precedence(monkeypatch):
    cfg = default_config("wegner")
    monkeypatch.delenv("ANDERSON_SEED", raising=False)
    assert resolve_seed(None, cfg) == DEFAULT_SEED == 659918
    monkeypatch.setenv("ANDERSON_SEED", "0x10")
    assert resolve_seed(None, cfg) == 16
    cfg2 = cfg.model_copy(update={"seed": 7})
    assert resolve_seed(None, cfg2) == 7
    assert resolve_seed(3, cfg2) == 3


# --------------------------------------------------------------------------- runs

def _run(tmp_path, cfg_path, out, *extra):
    return cli.main(["ds-estimate", "--config", str(cfg_path), "--out", str(out), *extra])


def test_run_writes_artifacts(tmp_path, capsys):
    cfg = _write(tmp_path, DS_SMALL)
    out = tmp_path / "r"
    assert _run(tmp_path, cfg, out, "--seed", "5", "--emit-reports") == 0
    for f in ("results.csv", "summary.json", "manifest.json", "resolved_config.yaml", "reports.jsonl"):
        assert (out / f).is_file()
    rows = list(csv.DictReader((out / "results.csv").open()))
    assert list(rows[0]) == RESULT_COLUMNS and rows[0]["seed"] == "5"
    assert b"\r\n" not in (out / "results.csv").read_bytes()
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 5 and "paper_claim" in man and len(man["config_hash"]) == 64
    resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
    assert resolved["seed"] == 5
    assert "experiment: ds-estimate" in capsys.readouterr().out


def test_results_identical_across_worker_counts(tmp_path):
    cfg = _write(tmp_path, DS_SMALL)
    assert _run(tmp_path, cfg, tmp_path / "w1", "--workers", "1") == 0
    assert _run(tmp_path, cfg, tmp_path / "w2", "--workers", "2") == 0
    assert (tmp_path / "w1" / "results.csv").read_bytes() == (tmp_path / "w2" / "results.csv").read_bytes()


def test_same_seed_same_bytes_and_env_seed(tmp_path, monkeypatch):
    cfg = _write(tmp_path, DS_SMALL)
    monkeypatch.setenv("ANDERSON_SEED", "99")
    assert _run(tmp_path, cfg, tmp_path / "a") == 0
    assert _run(tmp_path, cfg, tmp_path / "b") == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seed"] == 99


def test_invariant_violation_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, "experiment: ct-check\ntrials: 3\nsettings: {max_L: 2, max_ratio: -1.0}\n")
    code = cli.main(["ct-check", "--config", str(cfg), "--out", str(tmp_path / "ct")])
    assert code == 2
    assert "invariant violated" in capsys.readouterr().err


def test_operational_errors_exit_one(tmp_path, capsys):
    assert cli.main(["report", str(tmp_path)]) == 1
    assert cli.main(["wegner", "--config", str(tmp_path / "missing.yaml")]) == 1
    bad = _write(tmp_path, "experiment: wegner\ntrials: 0\n")
    assert cli.main(["wegner", "--config", str(bad)]) == 1
    other = _write(tmp_path, "experiment: decay\n", "other.yaml")
    assert cli.main(["wegner", "--config", str(other)]) == 1
    assert cli.main(["wegner", "--workers", "0"]) == 1
    err = capsys.readouterr().err
    assert "config error" in err and "not 'wegner'" in err


def test_report_subcommand_and_trend(tmp_path, capsys):
    cfg = _write(tmp_path, DS_SMALL.replace("k_list: [0]", "k_list: [0, 1]").replace("trials: 12", "trials: 4"))
    out = tmp_path / "t"
    assert _run(tmp_path, cfg, out) == 0
    capsys.readouterr()
    assert cli.main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "trend k=0 -> k=1" in text and "(vacuous)" not in text.splitlines()[0]


def test_trend_rules():
    a = {"point": 0.5, "ci_low": 0.4, "ci_high": 0.6}
    b = {"point": 0.1, "ci_low": 0.05, "ci_high": 0.2}
    t = trend(a, b)
    assert t["arrow"] == "down" and t["ci_separated"]
    z = {"point": 0.0, "ci_low": 0.0, "ci_high": 0.0018}
    assert trend(z, z)["both_upper_below_0.02"]


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "anderson_msa.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "ds-estimate" in proc.stdout
