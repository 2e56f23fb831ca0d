import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from monitored_lmg.cli import main
from monitored_lmg.config import WORKERS_ENV, RunConfig, parse_config, parse_grid
from monitored_lmg.errors import ConfigError
from monitored_lmg.io import format_value, read_csv, read_manifest, write_csv
from monitored_lmg.runner import chunks


# --- configuration ----------------------------------------------------------


def test_empty_file_gives_documented_defaults(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# nothing here\n\n")
    assert parse_config(f) == RunConfig()


def test_negative_gamma_names_the_key(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("gamma = -1\n")
    with pytest.raises(ConfigError) as info:
        parse_config(f)
    assert info.value.key == "gamma"
    assert "gamma" in str(info.value)


def test_flag_overrides_file(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("gamma = 0.1  # comment\nh=0.4\n")
    cfg = parse_config(f, {"gamma": "0.25"})
    assert cfg.gamma == 0.25 and cfg.h == 0.4


@pytest.mark.parametrize(
    "text,key",
    [("gamm = 0.1", "gamm"), ("dt = 0", "dt"), ("M = 0", "M"), ("N = 0", "N"), ("dt_record = 1e-4", "dt_record"),
     ("theta = 4", "theta"), ("h = nan", "h"), ("method = rk4", "method"), ("h_grid = lin:0:1", "h_grid"),
     ("gamma", "gamma"), ("t_final = 0.01\ndt_record = 0.1", "dt_record")],
)
def test_invalid_values_are_rejected_with_key(tmp_path, text, key):
    f = tmp_path / "bad.cfg"
    f.write_text(text + "\n")
    with pytest.raises(ConfigError) as info:
        parse_config(f)
    assert info.value.key == key


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.cfg")


def test_grid_syntax():
    assert parse_grid("0.1, 0.2,0.5") == [0.1, 0.2, 0.5]
    assert parse_grid("lin:0:1:5") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert parse_grid("log:0.01:1:3") == pytest.approx([0.01, 0.1, 1.0])
    assert parse_grid("") == []
    with pytest.raises(ConfigError):
        parse_grid("log:0:1:3")


def test_worker_env_override(monkeypatch):
    cfg = RunConfig(workers=3)
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert cfg.resolved_workers() == 3
    monkeypatch.setenv(WORKERS_ENV, "2")
    assert cfg.resolved_workers() == 2
    monkeypatch.setenv(WORKERS_ENV, "many")
    with pytest.raises(ConfigError):
        cfg.resolved_workers()


def test_config_dict_roundtrip():
    cfg = RunConfig(h=0.2, N="16", mz=0.3, formats="csv+png")
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_chunks_depend_only_on_size():
    parts = chunks(600)
    assert [len(p) for p in parts] == [256, 256, 88]
    assert np.array_equal(np.concatenate(parts), np.arange(600))


# --- io -----------------------------------------------------------------------


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_seventeen_digits_round_trip(x):
    assert float(format_value(x)) == x


def test_csv_roundtrip(tmp_path):
    cols = {"t": np.array([0.0, 0.1]), "v": np.array([1 / 3, math.nan])}
    write_csv(tmp_path / "a.csv", cols, {"seed": 4})
    back, meta = read_csv(tmp_path / "a.csv")
    assert meta["seed"] == "4"
    assert back["t"].tolist() == [0.0, 0.1]
    assert back["v"][0] == 1 / 3 and math.isnan(back["v"][1])


# --- command line -------------------------------------------------------------


def _run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--out_dir", str(out)])
    return code, out


def _manifest(out):
    return read_manifest(out / "manifest.json")


def test_trajectory_is_byte_identical_on_rerun(tmp_path):
    args = ["trajectory", "--N", "semiclassical", "--gamma", "0.5", "--t_final", "5", "--base_seed", "7"]
    c1, a = _run(tmp_path, "a", *args)
    c2, b = _run(tmp_path, "b", *args)
    assert c1 == c2 == 0
    assert (a / "semiclassical.csv").read_bytes() == (b / "semiclassical.csv").read_bytes()


@pytest.mark.parametrize("N", ["semiclassical", "4"])
def test_ensemble_independent_of_worker_count(tmp_path, monkeypatch, N):
    args = ["ensemble", "--N", N, "--M", "600", "--gamma", "2.0", "--h", "0.3", "--t_final", "2", "--dt", "1e-3",
            "--dt_record", "0.5", "--mz", "0.5"]
    monkeypatch.setenv(WORKERS_ENV, "1")
    c1, a = _run(tmp_path, "w1", *args)
    monkeypatch.setenv(WORKERS_ENV, "3")
    c2, b = _run(tmp_path, "w3", *args)
    assert c1 == c2
    for name in ("summary.csv", "histogram.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert [c["size"] for c in _manifest(a)["chunks"]] == [256, 256, 88]


def test_sweep_manifest_lists_cells(tmp_path, monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "2")
    code, out = _run(tmp_path, "sw", "sweep", "--h_grid", "0.1,0.5", "--gamma_grid", "0.3,2.0", "--M", "100",
                     "--dt", "1e-2")
    assert code == 0
    man = _manifest(out)
    assert [(c["M"], c["seed_offset"]) for c in man["cells"]] == [(100, 0), (100, 100), (100, 200), (100, 300)]
    cols, _ = read_csv(out / "phase_diagram.csv")
    assert list(cols) == ["h", "gamma", "p_plus", "p_plus_err", "unabsorbed_frac", "M"]
    assert np.all((cols["p_plus"] >= 0) & (cols["p_plus"] <= 1))


def test_manifest_roundtrip_and_file_list(tmp_path):
    code, out = _run(tmp_path, "lb", "lindblad", "--N", "6", "--t_final", "1", "--dt_record", "0.25")
    assert code == 0
    man = _manifest(out)
    assert man["status"] == "ok"
    assert RunConfig.from_dict(man["config"]) == parse_config(None, {"N": "6", "t_final": "1", "dt_record": "0.25",
                                                                     "out_dir": str(out)})
    written = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert written == set(man["files"])
    for key in ("seeds", "versions", "tolerances", "diagnostics", "wall_clock_s"):
        assert key in man
    assert man["diagnostics"]["max_trace_drift"] < 1e-8


def test_config_error_exit_code(tmp_path, capsys):
    code, out = _run(tmp_path, "bad", "trajectory", "--gamma", "-1")
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["key"] == "gamma"


def test_unknown_flag_exit_code(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["trajectory", "--gamm", "0.1"])
    assert info.value.code == 2


def test_solver_failure_exit_code_and_manifest(tmp_path):
    code, out = _run(tmp_path, "fl", "flow", "--h", "0.3", "--mz", "0.2", "--phi", "0.5", "--dt", "0.3",
                     "--dt_record", "0.6", "--t_final", "60")
    assert code == 3
    man = _manifest(out)
    assert man["status"] == "error"
    assert man["cause"]["kind"] == "solver"


def test_inconclusive_exit_code(tmp_path):
    code, out = _run(tmp_path, "inc", "ensemble", "--N", "semiclassical", "--gamma", "0.25", "--h", "0.3",
                     "--M", "50", "--t_final", "1", "--dt_record", "0.5")
    assert code == 4
    man = _manifest(out)
    assert man["status"] == "inconclusive"
    assert man["cause"]["unabsorbed_fraction"] > 0.05
    assert "summary.csv" in man["files"]


def test_flow_oracle_compare_ehrenfest(tmp_path):
    code, out = _run(tmp_path, "flow", "flow", "--h", "0.3", "--energies=-1.0,-0.3", "--t_final", "5")
    assert code == 0
    man = _manifest(out)
    assert [o["class"] for o in man["orbits"]] == ["libration", "rotation"]
    assert "separatrix.csv" in man["files"]

    code, out = _run(tmp_path, "or", "oracle", "--gamma", "50", "--mz", "0.5", "--M", "2000", "--dt", "1e-4",
                     "--taus", "0.5,1")
    assert code == 0
    cols, meta = read_csv(out / "oracle.csv")
    assert np.all(cols["ks_distance"] < 0.05)
    assert float(meta["p_plus_exact"]) == 0.75

    code, out = _run(tmp_path, "cmp", "compare", "--N", "8", "--h", "0.2", "--gamma", "0.1", "--M", "20",
                     "--t_final", "2", "--dt_record", "0.5")
    assert code == 0
    cols, _ = read_csv(out / "compare_gap.csv")
    assert np.all(np.isfinite(cols["gap_lindblad"]))

    code, out = _run(tmp_path, "eh", "ehrenfest", "--N", "8", "--h", "0.3", "--gamma", "0.25", "--dt_record", "0.05",
                     "--dt", "1e-3")
    assert code == 0
    assert _manifest(out)["diagnostics"]["t_star"] > 0


def test_report_renders_png(tmp_path):
    code, out = _run(tmp_path, "rep", "ensemble", "--N", "semiclassical", "--gamma", "2.0", "--h", "0.3", "--M", "50",
                     "--mz", "0.5", "--t_final", "4", "--dt_record", "0.5", "--dt", "1e-3")
    assert code in (0, 4)
    assert main(["report", str(out)]) == 0
    files = _manifest(out)["files"]
    assert "summary.png" in files and "histogram.png" in files
    assert (out / "histogram.png").read_bytes()[:4] == b"\x89PNG"


def test_plot_flag_renders_during_run(tmp_path):
    code, out = _run(tmp_path, "pl", "flow", "--h", "0.3", "--energies=-1.0", "--t_final", "3", "--plot")
    assert code == 0
    assert "flow.png" in _manifest(out)["files"]
    assert (out / "flow.png").exists()
