import json
import subprocess
import sys

import pytest

from tlml.cli import KEY_HELP, SCENARIO_KEYS, ConfigError, build_config, main, make_parser, parse_config

SMALL = {"T": 180, "t_min": 150, "schemes": [0.5, 0.9]}


def _write_config(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_minimal_scenario_config_fills_defaults(tmp_path):
    cfg = parse_config(["scenario", "--config", _write_config(tmp_path, {"design": "constant", "seed": 1}),
                        "--out", str(tmp_path / "o")])
    sc = cfg.scenario
    assert (sc.n, sc.T, sc.N2_0, sc.a_star, sc.law, sc.t_min) == (5000, 600, 85, 0.2, "binomial", 100)
    assert [s.rho for s in sc.schemes] == [0.1, 0.5, 0.9]
    assert sc.c_value == pytest.approx(0.196)


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="foo"):
        build_config("scenario", {"seed": 1, "out": "x", "foo": 3})


def test_scheme_range_error_carries_key_path():
    with pytest.raises(ConfigError, match=r"schemes\[1\].*rho"):
        build_config("scenario", {"seed": 1, "out": "x", "schemes": [0.5, 1.5]})
    with pytest.raises(ConfigError, match=r"schemes\[0\]"):
        build_config("scenario", {"seed": 1, "out": "x", "schemes": [{"type": "geometric", "rho": 1.5}]})


@pytest.mark.parametrize("doc, match", [
    ({"out": "x"}, "seed"),
    ({"seed": 1}, "out"),
    ({"seed": "one", "out": "x"}, "seed"),
    ({"seed": 1, "out": "x", "T": 2.5}, "T"),
    ({"seed": 1, "out": "x", "design": "weekly"}, "design"),
    ({"seed": 1, "out": "x", "trim": [0.1]}, "trim"),
])
def test_schema_violations(doc, match):
    with pytest.raises(ConfigError, match=match):
        build_config("scenario", doc)


def test_estimate_requires_path_but_not_seed():
    with pytest.raises(ConfigError, match="path"):
        build_config("estimate", {"out": "x"})
    cfg = build_config("estimate", {"out": "x", "path": "p.csv"})
    assert not cfg.seed_given


def test_flags_and_set_override_file(tmp_path):
    conf = _write_config(tmp_path, {"seed": 1, "T": 300, "out": "a"})
    cfg = parse_config(["scenario", "--config", conf, "--seed", "9", "--set", "sigma=0.02",
                        "--set", "schemes=[0.3]", "--out", "b"])
    assert cfg.scenario.seed == 9 and cfg.scenario.T == 300 and cfg.scenario.sigma == 0.02
    assert cfg.out == "b" and [s.rho for s in cfg.scenario.schemes] == [0.3]


def test_help_documents_every_key(capsys):
    assert set(KEY_HELP) >= SCENARIO_KEYS
    with pytest.raises(SystemExit) as info:
        make_parser().parse_args(["scenario", "--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    for key in KEY_HELP:
        assert key in text


def test_config_errors_exit_two(tmp_path, capsys):
    assert main(["scenario", "--config", _write_config(tmp_path, {"seed": 1, "foo": 2}), "--out", "x"]) == 2
    assert "foo" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["scenario", "--config", str(bad), "--out", "x"]) == 2


def test_empty_input_csv_exits_two(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["estimate", "--path", str(empty), "--out", str(tmp_path / "o")]) == 2
    assert "empty" in capsys.readouterr().err


def test_missing_input_csv_exits_two(tmp_path):
    assert main(["estimate", "--path", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 2


def test_simulate_then_estimate_reproduces_scenario(tmp_path):
    doc = dict(SMALL, seed=4)
    conf = _write_config(tmp_path, doc)
    assert main(["scenario", "--config", conf, "--out", str(tmp_path / "scen")]) == 0
    assert main(["simulate", "--config", conf, "--out", str(tmp_path / "sim")]) == 0
    assert (tmp_path / "sim" / "path.csv").read_bytes() == (tmp_path / "scen" / "path.csv").read_bytes()
    assert main(["estimate", "--config", conf, "--path", str(tmp_path / "sim" / "path.csv"),
                 "--out", str(tmp_path / "est")]) == 0
    for label in ("geometric_0.5", "geometric_0.9"):
        name = f"estimates_{label}.csv"
        assert (tmp_path / "est" / name).read_bytes() == (tmp_path / "scen" / name).read_bytes()


def test_same_config_twice_is_identical(tmp_path):
    conf = _write_config(tmp_path, dict(SMALL, seed=2, replications=2))
    for out in ("a", "b"):
        assert main(["scenario", "--config", conf, "--out", str(tmp_path / out)]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    assert files
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    text = (tmp_path / "a" / "stats.csv").read_bytes()
    assert b"\r" not in text


def test_diagnose_writes_blocks(tmp_path):
    conf = _write_config(tmp_path, {"seed": 0, "replication": 1, "T": 220, "t_min": 200, "schemes": [0.9]})
    assert main(["simulate", "--config", conf, "--out", str(tmp_path / "sim")]) == 0
    assert main(["diagnose", "--config", conf, "--path", str(tmp_path / "sim" / "path.csv"),
                 "--out", str(tmp_path / "d")]) == 0
    heads = {name: (tmp_path / "d" / name).read_text().splitlines() for name in
             ("ci.csv", "eigen.csv", "bias.csv", "residuals.csv")}
    assert heads["ci.csv"][0] == "scheme,t,a_hat,a_lower,a_upper,c_hat,c_lower,c_upper,available"
    assert heads["bias.csv"][0] == "scheme,t,bias_a,bias_c,ci_half_a,ci_half_c"
    assert len(heads["ci.csv"]) == 22 and len(heads["residuals.csv"]) == 21


def test_module_entry_point(tmp_path):
    argv = ["simulate", "--seed", "1", "--T", "30", "--set", "t_min=10", "--out", str(tmp_path)]
    proc = subprocess.run([sys.executable, "-m", "tlml", *argv], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "path.csv").read_text().startswith("t,N1,N2,N21,N12,a_t,c_t\n0,4915,85,0,0,")
