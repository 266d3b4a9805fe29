import json
import os

import numpy as np
import pytest

from tailsim import cli
from tailsim.config import ExperimentConfig, sweep_children, validate
from tailsim.simcore import ConfigurationError, make_rng


def write(path, obj):
    path.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return str(path)


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# ---------------------------------------------------------------- validation

def test_minimal_fed_config_gets_defaults():
    exp = validate({"scenario": "fed-evt"})
    assert exp.params["round_slots"] == 100
    assert exp.params["p_min"] == pytest.approx(0.1 * exp.params["p_max"])


def test_epsilon_out_of_range_names_the_constraint():
    with pytest.raises(ConfigurationError, match=r"epsilon must lie in \(0,1\)"):
        validate({"scenario": "extreme-mec", "params": {"epsilon": 1.5}})


@pytest.mark.parametrize("raw, key", [
    ({"scenario": "fed-evt", "colour": 1}, "colour"),
    ({"scenario": "fed-evt", "params": {"colour": 1}}, "params.colour"),
    ({"scenario": "rl-offload", "params": {"dqn": {"width": 3}}}, "params.dqn.width"),
    ({"scenario": "vr-arcade", "params": {"players": [0]}}, "params.players"),
    ({"scenario": "fed-evt", "horizon": -1}, "horizon"),
])
def test_unknown_or_bad_keys_are_named(raw, key):
    with pytest.raises(ConfigurationError, match=key.replace(".", r"\.")):
        validate(raw)


def test_bad_sweep_point_fails_before_running():
    raw = {"scenario": "extreme-mec", "sweep": {"param": "epsilon", "values": [0.01, 2.0]}}
    with pytest.raises(ConfigurationError, match="epsilon"):
        validate(raw)


def test_kappa_sweep_children_differ_only_in_kappa():
    exp = validate({"scenario": "extreme-mec", "sweep": {"param": "kappa", "values": [800, 900, 1000, 1100, 1200]}})
    kids = sweep_children(exp)
    assert [k.params["kappa"] for k in kids] == [800, 900, 1000, 1100, 1200]
    for k in kids:
        other = {p: v for p, v in k.params.items() if p != "kappa"}
        assert other == {p: v for p, v in exp.params.items() if p != "kappa"}
        assert k.sweep is None and k.seed == exp.seed


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv("TAILSIM_SEED", raising=False)
    assert validate({"scenario": "fed-evt", "seed": 3}).seed == 3
    monkeypatch.setenv("TAILSIM_SEED", "11")
    assert validate({"scenario": "fed-evt", "seed": 3}).seed == 11
    assert validate({"scenario": "fed-evt", "seed": 3}, seed=5).seed == 5


def test_config_hash_is_canonical():
    a = ExperimentConfig("fed-evt", 1, 10, {"b": 1, "a": [1, 2]})
    b = ExperimentConfig("fed-evt", 1, 10, {"a": [1, 2], "b": 1})
    assert a.config_hash() == b.config_hash()
    assert len(a.config_hash()) == 64
    assert a.config_hash() != ExperimentConfig("fed-evt", 2, 10, {"a": [1, 2], "b": 1}).config_hash()


# ---------------------------------------------------------------- exit codes

def test_parse_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", "{not json")
    code, out, err = run(capsys, "sim", "fed-evt", "--config", cfg)
    assert code == 2 and out == "" and "parse error" in err


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["sim", "no-such-scenario"])
    assert exc.value.code == 2


def test_validation_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"params": {"epsilon": 1.5}})
    code, out, err = run(capsys, "sim", "extreme-mec", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == 3 and out == ""
    assert "epsilon must lie in (0,1)" in err
    assert not (tmp_path / "o").exists()  # nothing ran


def test_invariant_exit_code(tmp_path, capsys, monkeypatch):
    def broken(cfg, extras):
        raise cli.InvariantViolation("queue backlogs stay non-negative")

    monkeypatch.setitem(cli.RUNNERS, "fed-evt", broken)
    code, out, err = run(capsys, "sim", "fed-evt", "--out", str(tmp_path))
    assert code == 4 and out == ""
    assert "queue backlogs stay non-negative" in err


def test_sweep_command_requires_sweep_block(tmp_path, capsys):
    code, _, err = run(capsys, "sweep", "fed-evt", "--out", str(tmp_path))
    assert code == 3 and "sweep" in err


# ---------------------------------------------------------------- runs

def test_sim_writes_csv_and_manifest(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"horizon": 1000, "params": {"n_vues": 3}})
    out_dir = tmp_path / "o"
    code, out, err = run(capsys, "sim", "fed-evt", "--config", cfg, "--out", str(out_dir), "--seed", "4")
    assert code == 0
    assert out.strip() == str(out_dir / "manifest.json")
    man = json.loads((out_dir / "manifest.json").read_text())
    assert man["seed"] == 4 and man["outputs"] == ["fed-evt.csv"]
    assert man["config_hash"] == validate(json.loads(open(cfg).read()), "fed-evt", 4, str(out_dir)).config_hash()
    header = (out_dir / "fed-evt.csv").read_text().splitlines()[0]
    assert header.startswith("round,scheme,uplink_units,downlink_units")


def test_same_config_twice_gives_identical_csv(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"horizon": 800, "params": {"players": [2, 3]}})
    for d in ("a", "b"):
        assert run(capsys, "sim", "vr-arcade", "--config", cfg, "--out", str(tmp_path / d))[0] == 0
    assert (tmp_path / "a" / "vr-arcade.csv").read_bytes() == (tmp_path / "b" / "vr-arcade.csv").read_bytes()


def test_sweep_writes_children_and_sorted_merge(tmp_path, capsys):
    raw = {"horizon": 600, "params": {"players": [2]},
           "sweep": {"param": "p_hit", "values": [0.9, 0.5, 0.7, 1.0, 0.6]}}
    cfg = write(tmp_path / "c.json", raw)
    code, _, _ = run(capsys, "sweep", "vr-arcade", "--config", cfg, "--out", str(tmp_path / "s"), "--jobs", "2")
    assert code == 0
    files = sorted(os.listdir(tmp_path / "s"))
    assert len([f for f in files if "p_hit=" in f]) == 5
    assert "vr-arcade__sweep.csv" in files
    merged = (tmp_path / "s" / "vr-arcade__sweep.csv").read_text().splitlines()
    vals = [line.split(",")[0] for line in merged[1:]]
    assert vals == sorted(vals, key=float)
    # the merge does not depend on worker count
    run(capsys, "sweep", "vr-arcade", "--config", cfg, "--out", str(tmp_path / "t"), "--jobs", "1")
    assert (tmp_path / "t" / "vr-arcade__sweep.csv").read_text().splitlines() == merged


def test_fit_on_exponential_fixture(tmp_path, capsys):
    x = make_rng(0, 0).exponential(0.5, 10 ** 6)
    data = tmp_path / "exp.csv"
    np.savetxt(data, x, header="value", comments="")
    cfg = write(tmp_path / "c.json", {"params": {"threshold": 1.0}})
    code, out, _ = run(capsys, "fit", str(data), "--config", cfg, "--out", str(tmp_path / "f"))
    assert code == 0
    res = json.loads((tmp_path / "f" / "fit.json").read_text())
    assert set(res) == {"sigma_tilde", "xi", "threshold", "n_exceedances", "loglik"}
    assert abs(res["xi"]) <= 0.05
    assert res["sigma_tilde"] == pytest.approx(0.5, rel=0.05)


def test_fit_rejects_missing_file(tmp_path, capsys):
    code, _, err = run(capsys, "fit", str(tmp_path / "nope.csv"), "--out", str(tmp_path))
    assert code == 3 and "input" in err


def test_fit_rejects_garbage_rows(tmp_path, capsys):
    data = tmp_path / "x.csv"
    data.write_text("value\n1.0\nabc\n")
    code, _, err = run(capsys, "fit", str(data), "--out", str(tmp_path / "f"))
    assert code == 2
