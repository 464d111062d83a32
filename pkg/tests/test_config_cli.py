import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matgmc import cli, config

SMALL = """\
[model]
d = 1
N = 2
gamma2 = 0.25
epsilon = 0.03125

[grid]
n_per_side = 32
spacing = 0.03125

[run]
seed = 17
replicas = 64
renorm_samples = 2000

[moments]
scales = 0.4 0.2 0.1 0.05
orders = 1 2

[cauchy]
epsilon_list = 0.25 0.125 0.0625

[pair_correlation]
r_values = 0.3 0.01

[angular]
n_samples = 2000
r_values = 0.3
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run_cli(tmp_path, command, text=SMALL, extra=(), out="out"):
    cfg = write(tmp_path, text)
    return cli.main([command, "--config", str(cfg), "--out", str(tmp_path / out), *extra])


def test_defaults_round_trip():
    cfg = config.RunConfig()
    again = config.parse_text(cfg.serialize())
    assert again == cfg and again.hash() == cfg.hash()


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 3),
    st.integers(1, 5),
    st.floats(0.01, 0.99),
    st.integers(0, 2**64 - 1),
    st.lists(st.floats(1e-6, 0.99), min_size=1, max_size=4, unique=True),
)
def test_serialize_round_trip(d, N, gamma2, seed, scales):
    cfg = config.RunConfig(
        model=config.ModelSection(d=d, N=N, gamma2=gamma2),
        run=config.RunSection(seed=seed),
        moments=config.MomentsSection(scales=tuple(scales)),
        angular=config.AngularSection(D=(1.0,) * N, Dp=(0.5,) * N),
    )
    assert config.parse_text(cfg.serialize()) == cfg


def test_unknown_key_reports_file_and_line(tmp_path):
    p = write(tmp_path, "[model]\nd = 1\nN = 2\nsigma = 3\n")
    with pytest.raises(config.ConfigError, match=r"run\.ini:4: unknown key 'sigma'"):
        config.load(p)
    with pytest.raises(config.ConfigError, match=r":2: unknown section"):
        config.parse_text("[model]\n[extras]\nx = 1\n", "cfg")


def test_bad_values_rejected():
    with pytest.raises(config.ConfigError, match=r"cfg:3: \[model\] c"):
        config.parse_text("[model]\nN = 3\nc = 0.6\n", "cfg")
    with pytest.raises(config.ConfigError, match="cannot parse"):
        config.parse_text("[grid]\nn_per_side = many\n", "cfg")
    with pytest.raises(config.ConfigError, match="seed"):
        config.parse_text(f"[run]\nseed = {2**64}\n", "cfg")


def test_chaos_hypothesis_messages():
    cfg = config.parse_text("[model]\ngamma2 = 1.0\n", "cfg")
    with pytest.raises(config.ConfigError, match="0<γ²<d"):
        config.check_chaos_hypothesis(cfg)
    cfg = config.parse_text("[model]\ngamma2 = 0.5\n[moments]\norders = 1 4\n", "cfg")
    with pytest.raises(config.ConfigError, match="2d/γ²"):
        config.check_chaos_hypothesis(cfg)


def test_override_precedence():
    cfg = config.parse_text("[run]\nseed = 3\nworkers = 2\n")
    o = cfg.override(seed=9, output_dir="elsewhere")
    assert (o.run.seed, o.run.workers, o.run.output_dir) == (9, 2, "elsewhere")
    assert o.hash() != cfg.hash()


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0], lines[1].split(","), [l.split(",") for l in lines[2:]]


def test_pair_correlation_command(tmp_path):
    assert run_cli(tmp_path, "pair-correlation") == 0
    head, cols, rows = read_csv(tmp_path / "out" / "paircorr.csv")
    assert head.startswith("# config_hash=") and "seed=17" in head
    assert cols == ["r", "exact", "asymptotic", "ratio"]
    assert len(rows) == 2
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["status"] == "ok" and man["seed"] == 17 and "paircorr.csv" in man["outputs"]


def test_moments_and_cauchy_commands(tmp_path):
    assert run_cli(tmp_path, "moments") == 0
    _, cols, rows = read_csv(tmp_path / "out" / "moments.csv")
    assert cols[:4] == ["scale", "order", "estimate", "std_error"] and len(rows) == 8
    _, cols, rows = read_csv(tmp_path / "out" / "zeta.csv")
    assert [r[0] for r in rows] == ["1", "2"]
    assert run_cli(tmp_path, "cauchy") == 0
    _, cols, rows = read_csv(tmp_path / "out" / "cauchy.csv")
    assert cols[:3] == ["epsilon", "epsilon_prime", "l2_diff"] and len(rows) == 2


def test_synth_and_angular_commands(tmp_path):
    assert run_cli(tmp_path, "synth") == 0
    assert (tmp_path / "out" / "field.mgmc").exists() and (tmp_path / "out" / "field.mgmc.json").exists()
    assert run_cli(tmp_path, "angular") == 0
    _, cols, rows = read_csv(tmp_path / "out" / "angular.csv")
    assert cols[0] == "integral_kind" and [r[0] for r in rows] == ["hciz", "morozov", "kpoint_sum"]


def test_exit_code_for_supercritical(tmp_path, capsys):
    text = SMALL.replace("gamma2 = 0.25", "gamma2 = 1.0")
    assert run_cli(tmp_path, "moments", text) == 2
    assert "0<γ²<d" in capsys.readouterr().err
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["status"] == "config_error"


def test_exit_code_for_config_errors(tmp_path):
    assert run_cli(tmp_path, "synth", SMALL + "\n[extra]\n") == 2
    assert run_cli(tmp_path, "synth", SMALL.replace("N = 2", "N = 3\nc = 0.9")) == 2
    assert cli.main(["synth", "--config", str(tmp_path / "missing.ini")]) == 2
    assert run_cli(tmp_path, "synth", extra=("--workers", "0")) == 2


def test_exit_code_for_runtime_error(tmp_path):
    text = SMALL.replace("[run]\n", "[run]\nbackend = circulant\n").replace("d = 1", "d = 3")
    text = text.replace("n_per_side = 32", "n_per_side = 4").replace("epsilon = 0.03125", "epsilon = 0.2")
    text = text.replace("spacing = 0.03125", "spacing = 0.1")
    assert run_cli(tmp_path, "synth", text) == 3


def test_validate_command(tmp_path):
    assert run_cli(tmp_path, "validate") == 0
    report = json.loads((tmp_path / "out" / "oracle_report.json").read_text())
    assert all(r["passed"] for r in report)


def test_workers_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("MGMC_WORKERS", "3")
    assert run_cli(tmp_path, "pair-correlation") == 0
    assert json.loads((tmp_path / "out" / "manifest.json").read_text())["workers"] == 3
