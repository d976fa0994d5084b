import json

import pytest

from delaysplit.cli import main


def test_constants_block(capsys):
    assert main(["constants", "--M", "1", "--r", "0.1", "--K-f", "1"]) == 0
    out = capsys.readouterr().out
    assert "lambda_r" in out and "1.11832559159" in out and "gap_condition  fails" in out


def test_constants_hypothesis_error_exits_two(capsys):
    assert main(["constants", "--M", "5", "--r", "0.1"]) == 2
    assert "M e r" in capsys.readouterr().err


def test_sweep_csv(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--r", "0.1", "0.01", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "r,lambda_r,mu_r,alpha,beta,K1,K2,gamma,K,proj_bound,gap,L_r" and len(lines) == 3


def test_special_split_verify(tmp_path, capsys):
    assert main(["special", "--kernel", "rotation", "--out", str(tmp_path / "p.csv")]) == 0
    assert (tmp_path / "p.csv").exists()
    assert main(["split", "--kernel", "scalar", "--samples", "80", "--pairs", "200",
                 "--out", str(tmp_path / "l.csv")]) == 0
    assert main(["verify", "--kernel", "zero", "--samples", "3"]) == 0
    out = capsys.readouterr().out
    assert "norm_P_lower" in out and "commutation" in out


def test_gronwall_and_growth(tmp_path):
    assert main(["gronwall", "--instances", "6", "--out", str(tmp_path / "g.csv")]) == 0
    assert main(["growth", "--pairs", "2", "--out", str(tmp_path / "h.csv")]) == 0
    assert len((tmp_path / "g.csv").read_text().splitlines()) == 1 + 18


def test_run_from_yaml_and_bad_config(tmp_path, capsys):
    cfg = tmp_path / "scen.yaml"
    cfg.write_text("kernel: {dim: 1, r: 0.1, M: 1.0, terms: [{lag_frac: 1.0, matrix: [[-1.0]]}]}\n"
                   "r_list: [0.1, 0.01]\nsuites: [constants, gronwall]\ngronwall_instances: 3\n")
    assert main(["run", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
    assert "overall: PASS" in capsys.readouterr().out
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"kernel": {"dim": 1, "r": 0.1, "M": 1.0, "terms": []}, "r_list": [1.0],
                               "suites": ["constants"]}))
    assert main(["run", str(bad)]) == 2
    with pytest.raises(SystemExit):
        main(["nonsense"])


def test_shipped_scenario_config_is_valid():
    from pathlib import Path

    from delaysplit.harness import ScenarioConfig
    from delaysplit.model import kernel_from_config, require_hypothesis

    cfg = ScenarioConfig.load(Path(__file__).parents[1] / "configs" / "scenario.yaml")
    cfg.validate()
    for r in cfg.r_list:
        require_hypothesis(kernel_from_config(cfg.kernel_config(), r=r))
