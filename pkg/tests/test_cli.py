import json
import re
import subprocess
import sys

import pytest

from flowuap.cli import COMMANDS, main


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    csv = str(d / "flows.csv")
    assert main(["synth", "--out", csv, "--n-benign", "600", "--n-attack", "400", "--seed", "4"]) == 0
    assert main(["preprocess", "--input", csv, "--out", str(d / "data")]) == 0
    assert main(["train", "--data", str(d / "data"), "--out", str(d / "agents"),
                 "--runs", "2", "--episodes", "1"]) == 0
    return d


def _hashes(manifest):
    return sorted(json.loads(open(manifest).read())["outputs"].values())


def test_pipeline_outputs(pipeline):
    for name in ("train", "balanced", "test"):
        assert (pipeline / "data" / f"{name}.npz").exists()
    assert (pipeline / "data" / "schema.json").exists()
    assert (pipeline / "agents" / "median.npz").exists()
    ledger = (pipeline / "agents" / "run_ledger.csv").read_text().splitlines()
    assert ledger[0] == "run,episode,train_acc,test_acc,seed" and len(ledger) == 3


def test_attack_eps_zero_matches_clean(pipeline, capsys, tmp_path):
    out = tmp_path / "rows.csv"
    rc = main(["attack", "--agent", str(pipeline / "agents" / "median.npz"), "--data",
               str(pipeline / "data"), "--method", "bim", "--eps", "0", "--out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    nums = re.findall(r"accuracy (\S+)  FNR (\S+)", text)
    assert len(nums) == 2 and nums[0] == nums[1]
    assert out.read_text().startswith("sample_id,")


def test_uap_and_sweep_commands(pipeline, tmp_path):
    agent, data = str(pipeline / "agents" / "median.npz"), str(pipeline / "data")
    assert main(["uap", "--agent", agent, "--data", data, "--eps", "0.02", "--loss", "pd_mean",
                 "--runs", "2", "--out", str(tmp_path / "u")]) == 0
    assert len(list((tmp_path / "u").glob("uap_pd_mean_*.npz"))) == 2
    args = ["sweep", "--agent", agent, "--data", data, "--grid", "0,0.04", "--runs", "2",
            "--losses", "ce", "--attacks", "fgsm"]
    assert main(args + ["--out", str(tmp_path / "a" / "s")]) == 0
    assert main(args + ["--out", str(tmp_path / "b" / "s"), "--jobs", "2"]) == 0
    for suffix in (".csv", "_long.csv", "_summary.json"):
        assert (tmp_path / "a" / f"s{suffix}").read_bytes() == (tmp_path / "b" / f"s{suffix}").read_bytes()


def test_rerun_gives_identical_artifacts(pipeline, tmp_path):
    csv = str(pipeline / "flows.csv")
    assert main(["preprocess", "--input", csv, "--out", str(tmp_path / "d")]) == 0
    assert _hashes(tmp_path / "d" / "manifest.json") == _hashes(pipeline / "data" / "manifest.json")
    assert main(["train", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "g"),
                 "--runs", "2", "--episodes", "1"]) == 0
    assert _hashes(tmp_path / "g" / "manifest.json") == _hashes(pipeline / "agents" / "manifest.json")


def test_config_file_defaults_and_flag_override(pipeline, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"agent": str(pipeline / "agents" / "median.npz"),
                               "data": str(pipeline / "data"), "method": "fgsm", "eps": 0.04}))
    assert main(["attack", "--config", str(cfg), "--eps", "0"]) == 0
    out = capsys.readouterr().out
    assert "eps 0.0" in out and "fgsm" in out
    cfg.write_text(json.dumps({"bogus_key": 1}))
    assert main(["attack", "--config", str(cfg)]) == 2
    cfg.write_text("{not json")
    assert main(["attack", "--config", str(cfg)]) == 2


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 2
    assert main(["preprocess", "--input", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 2
    assert main(["attack", "--frobnicate"]) == 2
    assert main([]) == 2
    assert main(["attack", "--agent", "a", "--data", str(tmp_path), "--method", "fgsm", "--eps", "0.5"]) == 2


@pytest.mark.parametrize("cmd", sorted(COMMANDS))
def test_help_for_each_command(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    assert "usage: flowuap " + cmd in capsys.readouterr().out


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "flowuap.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("flowuap ")
