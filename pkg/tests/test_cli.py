import json
import math

import pytest

from frlab.cli import compare_ternary, main, restriction_table, ternary_stage
from frlab.cantor import load_stage, unit_stage
from frlab.config import ConfigError, ExperimentConfig, build_config, read_config_file

SMALL = ["--alpha", "0.5", "--d", "1", "--n1", "4", "--depth", "2"]


def run(tmp_path, *argv, sub="out"):
    return main([*argv, "--output-dir", str(tmp_path / sub)])


def manifest(tmp_path, cmd, sub="out"):
    return json.loads((tmp_path / sub / f"manifest-{cmd}.json").read_text())


# -- configuration ------------------------------------------------------------------------


def test_defaults():
    cfg = build_config({}, {}, env={})
    assert cfg.p == pytest.approx(4.0) and cfg.search_p == pytest.approx(4.0)
    assert cfg.seed == 0


def test_precedence_flag_over_env_over_file(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[experiment]\nalpha = 0.75\nseed = 3\nn1 = 5\n")
    file_values = read_config_file(path)
    cfg = build_config(file_values, {"n1": 6}, env={})
    assert (cfg.alpha, cfg.seed, cfg.n1) == (0.75, 3, 6)
    assert build_config(file_values, {}, env={"FRL_SEED": "11"}).seed == 11
    assert build_config(file_values, {"seed": 2}, env={"FRL_SEED": "11"}).seed == 2


def test_json_and_toml_agree(tmp_path):
    (tmp_path / "a.toml").write_text("alpha = 0.6\nR_list = [4, 8]\n")
    (tmp_path / "a.json").write_text(json.dumps({"alpha": 0.6, "R_list": [4, 8]}))
    a = build_config(read_config_file(tmp_path / "a.toml"), {}, env={})
    b = build_config(read_config_file(tmp_path / "a.json"), {}, env={})
    assert a.hash() == b.hash()


def test_hash_ignores_output_location():
    a = build_config({}, {"output_dir": "x", "threads": 4}, env={})
    b = build_config({}, {}, env={})
    assert a.hash() == b.hash() and a.stage_key() == b.stage_key()
    assert build_config({}, {"per_annulus": 32}, env={}).stage_key() == b.stage_key()
    assert build_config({}, {"seed": 1}, env={}).stage_key() != b.stage_key()


@pytest.mark.parametrize(
    "bad",
    [{"alpha": 1.5}, {"d": 0}, {"p": 2.0}, {"n1": 1}, {"strategies": ["x"]}, {"R_list": [8, 4]}, {"colour": 1}],
)
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        build_config({}, bad, env={})


def test_bad_seed_env():
    with pytest.raises(ConfigError):
        build_config({}, {}, env={"FRL_SEED": "abc"})


def test_below_critical_warning():
    assert build_config({}, {"p": 3.0}, env={}).warnings()
    assert not ExperimentConfig().warnings()


# -- commands -------------------------------------------------------------------------------


def test_exit_code_validation(tmp_path):
    assert run(tmp_path, "build", "--alpha", "3.0") == 2


def test_exit_code_budget(tmp_path):
    assert run(tmp_path, "build", *SMALL, "--node-budget", "3") == 3


def test_exit_code_search_failure(tmp_path):
    code = run(tmp_path, "search-alphabet", "--N", "8", "--size", "8", "--constant-cap", "1.05")
    assert code == 4
    doc = json.loads((tmp_path / "out" / "alphabets.json").read_text())
    assert "failed" in doc and doc["levels"][0]["alphabet"]["size"] == 8


def test_search_single_alphabet(tmp_path, capsys):
    assert run(tmp_path, "search-alphabet", "--N", "5", "--size", "1") == 0
    assert "constant=1.000000" in capsys.readouterr().out
    assert run(tmp_path, "search-alphabet", "--N", "16", "--size", "4", "--search-p", "4", "--constant-cap", "2") == 0
    doc = json.loads((tmp_path / "out" / "alphabets.json").read_text())
    assert doc["levels"][0]["alphabet"]["modulus"] == 16
    assert doc["levels"][0]["certificate"]["constant_lower"] <= 2


def test_build_from_searched_alphabets(tmp_path, capsys):
    assert run(tmp_path, "search-alphabet", *SMALL) == 0
    alph = str(tmp_path / "out" / "alphabets.json")
    assert run(tmp_path, "build", *SMALL, "--alphabets", alph, sub="b") == 0
    out = capsys.readouterr().out
    stage = load_stage(tmp_path / "b" / "stage.json")
    assert stage.T_k == stage.plan.t_seq[0] * stage.plan.t_seq[1]
    assert f"T_k={stage.T_k}" in out
    assert "VIOLATED" not in out
    m = manifest(tmp_path, "build", sub="b")
    assert alph in m["inputs"]


def test_depth_zero_build(tmp_path, capsys):
    assert run(tmp_path, "build", "--depth", "0") == 0
    assert "k=0 N_k=1 T_k=1" in capsys.readouterr().out


def test_rerun_is_byte_identical(tmp_path):
    assert run(tmp_path, "build", *SMALL, sub="a") == 0
    assert run(tmp_path, "build", *SMALL, sub="b") == 0
    assert (tmp_path / "a" / "stage.json").read_bytes() == (tmp_path / "b" / "stage.json").read_bytes()
    stage = str(tmp_path / "a" / "stage.json")
    for sub in ("c", "d"):
        assert run(tmp_path, "decay", stage, *SMALL, "--r-max", "64", "--per-annulus", "16", sub=sub) == 0
    for name in ("decay.csv", "decay.json"):
        assert (tmp_path / "c" / name).read_bytes() == (tmp_path / "d" / name).read_bytes()
    mc, md = manifest(tmp_path, "decay", sub="c"), manifest(tmp_path, "decay", sub="d")
    assert list(mc["outputs"].values()) == list(md["outputs"].values())
    assert mc["config_hash"] == md["config_hash"]


def test_stage_mismatch_is_rejected(tmp_path):
    assert run(tmp_path, "build", *SMALL, sub="a") == 0
    stage = str(tmp_path / "a" / "stage.json")
    assert run(tmp_path, "decay", stage, *SMALL, "--seed", "1") == 2
    assert run(tmp_path, "sharpness", stage, *SMALL, "--seed", "1") == 2


def test_env_seed_reaches_the_stage(tmp_path, monkeypatch):
    monkeypatch.setenv("FRL_SEED", "5")
    assert run(tmp_path, "build", *SMALL, sub="a") == 0
    monkeypatch.delenv("FRL_SEED")
    assert run(tmp_path, "build", *SMALL, "--seed", "5", sub="b") == 0
    assert (tmp_path / "a" / "stage.json").read_bytes() == (tmp_path / "b" / "stage.json").read_bytes()


def test_restrict_and_sharpness_outputs(tmp_path, capsys):
    assert run(tmp_path, "build", *SMALL) == 0
    stage = str(tmp_path / "out" / "stage.json")
    assert run(tmp_path, "restrict", stage, *SMALL, "--strategies", "ones", "power_iterated") == 0
    rows = (tmp_path / "out" / "restriction-growth.csv").read_text().splitlines()
    assert len(rows) == 1 + 3 * 2
    assert run(tmp_path, "sharpness", stage, *SMALL, "--R", "4", "8") == 0
    out = capsys.readouterr().out
    assert "p=3 slope=" in out and "p=5 slope=" in out


def test_restrict_warns_below_critical(tmp_path, caplog):
    assert run(tmp_path, "build", *SMALL) == 0
    stage = str(tmp_path / "out" / "stage.json")
    assert run(tmp_path, "restrict", stage, *SMALL, "--p", "3", "--strategies", "ones") == 0
    assert any("below 2d/alpha" in r.message for r in caplog.records)


def test_restriction_table_at_depth_zero():
    cfg = build_config({}, {"depth": 0}, env={})
    reports, rows = restriction_table(unit_stage(1), cfg, C0=2.0)
    assert {r[0] for r in rows} == {0}
    assert all(r.measured_ratio <= 1 + 1e-12 for r in reports)
    assert all(math.isnan(r[4]) for r in rows)


def test_compare_ternary(tmp_path, capsys):
    assert run(tmp_path, "compare-ternary", "--depth", "2", "--n1", "3", "--R", "4", "8") == 0
    out = capsys.readouterr().out
    first = out.splitlines()[0]
    a, b = (float(x.split("=")[1]) for x in first.split()[1:])
    assert a == pytest.approx(b)
    cfg = build_config({}, {"depth": 2, "n1": 3, "R_list": [4, 8]}, env={})
    res = compare_ternary(cfg, p_values=(6.0,))
    assert res["alpha_ternary"] == pytest.approx(math.log(2) / math.log(3))
    assert ternary_stage(2).T_k == 4


def test_ternary_is_steeper_than_random_at_depth_three():
    for seed in range(10):
        cfg = build_config({}, {"depth": 3, "n1": 3, "seed": seed, "R_list": [8, 16, 32, 64]}, env={})
        res = compare_ternary(cfg, p_values=(6.0,))
        assert res["ternary"][6.0][1] > res["random"][6.0][1]
