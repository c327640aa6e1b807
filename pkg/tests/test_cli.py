import json
from pathlib import Path

import pytest

from dronesense.cli import main
from dronesense.config import ConfigError, load, loads
from dronesense.signal import DrawRule

BASE = """\
[model]
noise_power = 1.0
authorized_power = 2.0
unauthorized_power_min = 0.5
unauthorized_power_max = 6.5
samples_per_block = 16

[network]
sensor_count = 1
gains = 1.0

[constraints]
alpha = 0.1
beta = 0.1

[detector]
scheme = glrt

[experiment]
trials = 4000
seed = 7
alpha_beta_grid = 0.05, 0.1, 0.2
tradeoff_samples = 16, 64
grid_sensors = 1, 2
grid_samples = 8, 16

[quickest]
thresholds = 2, 4
trials = 500
"""


def write_config(tmp_path, text=BASE, **replace):
    for old, new in replace.items():
        text = text.replace(old, new)
    p = tmp_path / "scenario.ini"
    p.write_text(text)
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# ----------------------------------------------------------------------------
# configuration


def test_config_defaults():
    cfg = loads(BASE)
    assert cfg.model.samples_per_block == 16
    assert cfg.network.coverage_radius_m == 10_000
    assert cfg.rule.label == "soft"
    assert cfg.truth.draw_rule is DrawRule.FIXED and cfg.truth.true_unauthorized_power == 3.5
    assert cfg.quickest.change_time == 1


def test_shipped_config_loads():
    cfg = load(Path(__file__).parents[1] / "configs" / "scenario.ini")
    assert cfg.constraints.alpha == 0.2 and cfg.grid_samples == (8, 16, 32, 64)


@pytest.mark.parametrize(
    "old, new, key, line",
    [
        ("noise_power = 1.0", "noise_power = -1", "model.noise_power", 2),
        ("samples_per_block = 16", "samples_per_block = 2.5", "model.samples_per_block", 6),
        ("gains = 1.0", "gains = 1.0, 2.0", "network.gains", 10),
        ("alpha = 0.1", "alpha = 1.5", "constraints.alpha", 13),
        ("scheme = glrt", "scheme = bayes", "detector.scheme", 17),
        ("gains = 1.0", "gains = 1.0\nbogus = 3", "network.bogus", 11),
        ("alpha_beta_grid = 0.05, 0.1, 0.2", "alpha_beta_grid = 0.2, 0.1", "experiment.alpha_beta_grid", 22),
    ],
)
def test_config_errors_name_line_and_key(old, new, key, line):
    with pytest.raises(ConfigError) as exc:
        loads(BASE.replace(old, new), source="s.ini")
    assert exc.value.key == key
    assert exc.value.line == line
    assert f"s.ini:{line}: {key}" in str(exc.value)


def test_config_structure_errors():
    with pytest.raises(ConfigError, match="duplicate key"):
        loads(BASE.replace("alpha = 0.1", "alpha = 0.1\nalpha = 0.2"))
    with pytest.raises(ConfigError, match="unknown section"):
        loads(BASE + "\n[extra]\nx = 1\n")
    with pytest.raises(ConfigError, match="missing required key"):
        loads(BASE.replace("beta = 0.1\n", ""))
    with pytest.raises(ConfigError, match="k only applies"):
        loads(BASE + "\n[fusion]\nrule = soft\nk = 2\n")
    with pytest.raises(ConfigError, match="uniform draw rule"):
        loads(BASE + "\n[truth]\ndraw_rule = uniform\nunauthorized_power = 2\n")


# ----------------------------------------------------------------------------
# calibrate


def test_cli_validation_exit(tmp_path, capsys):
    cfg = write_config(tmp_path, **{"noise_power = 1.0": "noise_power = -1"})
    code, out, err = run(capsys, "calibrate", cfg)
    assert code == 1 and "model.noise_power" in err and out == ""


def test_cli_usage_error_exit(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["sweep"])
    assert exc.value.code == 1


def test_cli_unconstrained(tmp_path, capsys):
    cfg = write_config(tmp_path, **{"alpha = 0.1": "alpha = 1", "beta = 0.1": "beta = 1"})
    code, out, _ = run(capsys, "calibrate", cfg)
    rep = json.loads(out)
    assert code == 0
    assert rep["p_h2_given_h2"] == 1.0
    assert rep["offset_h0"] == "-inf" and rep["offset_h1"] == "-inf"


def test_cli_infeasible(tmp_path, capsys):
    cfg = write_config(tmp_path, **{"samples_per_block = 16": "samples_per_block = 2",
                                    "alpha = 0.1": "alpha = 0.005", "beta = 0.1": "beta = 0.005"})
    code, _, err = run(capsys, "calibrate", cfg)
    assert code == 2 and "infeasible" in err


@pytest.mark.parametrize("fusion", ["", "\n[fusion]\nrule = hard_k_out_of_m\nk = 2\n"])
@pytest.mark.parametrize("scheme", ["glrt", "genie"])
def test_calibrate_round_trip(tmp_path, capsys, fusion, scheme):
    text = BASE.replace("scheme = glrt", f"scheme = {scheme}") + fusion
    if fusion:
        text = text.replace("sensor_count = 1", "sensor_count = 3")
    cfg = write_config(tmp_path, text)
    _, out, _ = run(capsys, "calibrate", cfg)
    first = json.loads(out)
    code, out, _ = run(capsys, "calibrate", cfg, f"--offset-h0={first['offset_h0']}",
                       f"--offset-h1={first['offset_h1']}")
    again = json.loads(out)
    assert code == 0
    key = "local_regions" if fusion else "regions"
    assert again[key] == first[key]
    assert again["achieved_fa_h0"] == pytest.approx(first["achieved_fa_h0"], abs=1e-12)


def test_round_trip_with_sentinels(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, out, _ = run(capsys, "calibrate", cfg, "--offset-h0", "+inf", "--offset-h1=-inf")
    rep = json.loads(out)
    assert code == 0 and [r["hypothesis"] for r in rep["regions"]] == ["H0"]
    code, _, _ = run(capsys, "calibrate", cfg, "--offset-h0", "1.0")
    assert code == 1


# ----------------------------------------------------------------------------
# emitting commands


def test_sweep_outputs_deterministic_and_checkable(tmp_path, capsys):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        code, out, _ = run(capsys, "sweep", cfg, "--out", d)
        assert code == 0 and json.loads(out)["points"] == 12
    assert (a / "tradeoff.csv").read_bytes() == (b / "tradeoff.csv").read_bytes()
    assert (a / "tradeoff.manifest.json").read_bytes() == (b / "tradeoff.manifest.json").read_bytes()
    header = (a / "tradeoff.csv").read_text().splitlines()[0]
    assert header == "scheme,alpha_beta,n_samples,p_h2_given_h2,half_width,achieved_fa_h0,achieved_fa_h1"
    code, out, _ = run(capsys, "check", a / "tradeoff.csv")
    assert code == 0 and json.loads(out)["passed"]


def test_trials_override(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run(capsys, "sweep", cfg, "--out", tmp_path / "full")
    run(capsys, "sweep", cfg, "--out", tmp_path / "small", "--trials", 100, "--seed", 3)
    man = json.loads((tmp_path / "small" / "tradeoff.manifest.json").read_text())
    assert man["trials"] == 100 and man["seed"] == 3

    def widths(d):
        rows = (tmp_path / d / "tradeoff.csv").read_text().splitlines()[1:]
        return [float(r.split(",")[4]) for r in rows]

    assert all(s > f for s, f in zip(widths("small"), widths("full")))


def test_grid_sweep(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, _, _ = run(capsys, "sweep", cfg, "--sweep", "grid", "--out", tmp_path)
    rows = (tmp_path / "grid.csv").read_text().splitlines()
    assert code == 0
    assert rows[0] == "m_sensors,n_samples,fusion_rule,p_h2_given_h2,half_width,achieved_fa_h0,achieved_fa_h1"
    assert [r.split(",")[:2] for r in rows[1:]] == [["1", "8"], ["1", "16"], ["2", "8"], ["2", "16"]]


def test_simulate_and_quickest(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DRONESENSE_OUT", str(tmp_path / "env"))
    cfg = write_config(tmp_path)
    code, out, _ = run(capsys, "simulate", cfg)
    assert code == 0
    rep = json.loads(out)
    assert abs(sum(rep["entries"][0]) - 1) < 1e-12
    code, _, _ = run(capsys, "quickest", cfg, "--threads", 2)
    assert code == 0
    rows = (tmp_path / "env" / "quickest.csv").read_text().splitlines()
    assert rows[0] == "threshold_h,arl,arl_half_width,delay,delay_half_width" and len(rows) == 3
    code, out, _ = run(capsys, "check", tmp_path / "env")
    assert code == 0, out
    kinds = {f["kind"] for f in json.loads(out)["files"]}
    assert kinds == {"confusion", "quickest"}


def test_io_error_exit(tmp_path, capsys):
    cfg = write_config(tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = run(capsys, "sweep", cfg, "--out", blocker / "sub")
    assert code == 3 and "I/O" in err
    code, _, _ = run(capsys, "calibrate", tmp_path / "missing.ini")
    assert code == 3


def test_check_rejects_bad_files(tmp_path, capsys):
    bad = tmp_path / "confusion.csv"
    bad.write_text("true_hypothesis,trials,p_decide_h0,p_decide_h1,p_decide_h2,half_width_h0,half_width_h1,"
                   "half_width_h2\nH0,100,0.5,0.2,0.2,0.1,0.1,0.1\n")
    code, out, _ = run(capsys, "check", bad)
    assert code == 1 and not json.loads(out)["passed"]
    other = tmp_path / "other.csv"
    other.write_text("a,b\n1,2\n")
    code, _, _ = run(capsys, "check", other)
    assert code == 1
