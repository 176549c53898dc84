import json
import subprocess
import sys
from datetime import datetime, timezone

import numpy as np
import pytest

from hokdv.cli import main
from hokdv.config import SCHEMAS, load_config, parse_override
from hokdv.errors import ConfigError
from hokdv.runner import exit_code, make_run_dir, report_bytes, run, thread_cap
from hokdv.spectral import FourierField, write_field_csv

FAST_SIM = ["--set", "T=0.1", "--set", "N=8", "--set", "store_every=10"]


def _run_dirs(root):
    return sorted(p for p in root.iterdir() if p.is_dir())


def _report(path):
    return json.loads((path / "report.json").read_text())


def test_negative_dt_names_field():
    with pytest.raises(ConfigError, match="'dt'"):
        load_config("simulate", "dt = -1\n", "c.toml")


def test_unknown_key_has_line(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("j = 1\nbogus = 3\n")
    with pytest.raises(ConfigError, match=r"bad.toml:2: unknown key 'bogus'"):
        load_config("simulate", cfg.read_text(), str(cfg))


def test_type_and_range_errors():
    with pytest.raises(ConfigError, match=r"c:1: field 'N' must be of type int"):
        load_config("simulate", "N = 1.5\n", "c")
    with pytest.raises(ConfigError, match="'j'"):
        load_config("simulate", "j = 7\n", "c")
    with pytest.raises(ConfigError, match="finite"):
        load_config("simulate", "T = inf\n", "c")
    with pytest.raises(ConfigError, match="syntax|Expected|Invalid"):
        load_config("simulate", "T = = 1\n", "c")


def test_seed_is_mandatory_for_random_suites():
    with pytest.raises(ConfigError, match="seed"):
        load_config("control")
    assert load_config("simulate")["seed"] == 0


def test_defaults_and_overrides():
    cfg = load_config("stabilize", "seed = 3\n", overrides=["lam=1", "nonlinear=true"])
    assert cfg["lam"] == 1.0 and isinstance(cfg["lam"], float) and cfg["nonlinear"] is True
    assert parse_override("profile_shape=constant") == ("profile_shape", "constant")
    with pytest.raises(ConfigError):
        parse_override("noequals")
    assert set(load_config("strichartz", "seed = 0\n")) == set(SCHEMAS["strichartz"])


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["simulate", "--set", "dt=-1", "--outdir", str(tmp_path)]) == 2
    assert "'dt'" in capsys.readouterr().err
    assert main(["control", "--outdir", str(tmp_path)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.toml"), "--outdir", str(tmp_path)]) == 2


def test_pass_exit_and_outputs(tmp_path):
    assert main(["simulate", *FAST_SIM, "--outdir", str(tmp_path)]) == 0
    (d,) = _run_dirs(tmp_path)
    assert d.name.startswith("simulate-")
    rep = _report(d)
    assert rep["status"] == "pass" and rep["version"].startswith("v")
    assert "wall_time" not in json.dumps(rep)
    assert (d / "invariants.csv").read_text().splitlines()[0] == "t,M,E,H,l2"
    assert (d / "final_field_field.csv").exists()


def test_fail_exit_code(tmp_path):
    code = main(["simulate", *FAST_SIM, "--set", "drift_tol=1e-30", "--outdir", str(tmp_path)])
    assert code == 1
    assert _report(_run_dirs(tmp_path)[0])["status"] == "fail"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_error_exit_code(tmp_path):
    code = main(["simulate", "--set", "amplitude=1e3", "--set", "T=5", "--set", "dt=0.1",
                 "--set", "N=16", "--outdir", str(tmp_path)])
    assert code == 3
    assert _report(_run_dirs(tmp_path)[0])["status"] == "numeric_error"


def test_reports_are_byte_identical(tmp_path):
    args = ["control", "--set", "seed=5", "--set", "N=8", "--set", "n_modes=4",
            "--set", "max_mode=4", "--set", "formula_tol=0.1", "--outdir", str(tmp_path)]
    assert main(args) == 0
    assert main(args) == 0
    a, b = _run_dirs(tmp_path)
    assert a != b
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()


def test_report_bytes_sorted_and_deterministic():
    cfg = load_config("verify-lemmas", "seed = 1\n", overrides=["j_max=2", "trials=200", "k_max=50"])
    r1, r2 = run("verify-lemmas", cfg), run("verify-lemmas", cfg)
    assert report_bytes(r1[0]) == report_bytes(r2[0])
    assert exit_code(r1[0]) == 0
    keys = list(json.loads(report_bytes(r1[0])))
    assert keys == sorted(keys)


def test_initial_from_file(tmp_path):
    u = FourierField.from_function(1, 8, lambda x: 0.5 * np.sin(2 * x))
    path = tmp_path / "u0.csv"
    write_field_csv(u, path)
    out = tmp_path / "runs"
    assert main(["simulate", *FAST_SIM, "--set", "initial=file", "--set", f"initial_file='{path}'",
                 "--outdir", str(out)]) == 0
    assert main(["simulate", *FAST_SIM, "--set", "N=9", "--set", "initial=file",
                 "--set", f"initial_file='{path}'", "--outdir", str(out)]) == 2


def test_sweep_runs_jobs_in_parallel(tmp_path, monkeypatch):
    monkeypatch.setenv("HOKDV_THREADS", "2")
    assert main(["simulate", *FAST_SIM, "--sweep", "j=1,2,3", "--outdir", str(tmp_path)]) == 0
    (d,) = _run_dirs(tmp_path)
    jobs = sorted(p.name for p in d.iterdir())
    assert jobs == ["job-000", "job-001", "job-002"]
    assert [_report(d / n)["config"]["j"] for n in jobs] == [1, 2, 3]


def test_thread_cap(monkeypatch):
    monkeypatch.delenv("HOKDV_THREADS", raising=False)
    assert thread_cap() == 1
    monkeypatch.setenv("HOKDV_THREADS", "zero")
    with pytest.raises(ConfigError):
        thread_cap()


def test_run_dir_collision(tmp_path):
    now = datetime(2024, 1, 2, 3, 4, 5, tzinfo=timezone.utc)
    a = make_run_dir(tmp_path, "simulate", now)
    b = make_run_dir(tmp_path, "simulate", now)
    assert a.name == "simulate-20240102T030405Z" and b.name == a.name + "-1"


@pytest.mark.parametrize("sub", list(SCHEMAS))
def test_help_lists_config_keys(sub):
    out = subprocess.run([sys.executable, "-m", "hokdv.cli", sub, "--help"],
                         capture_output=True, text=True, check=True).stdout
    for key in SCHEMAS[sub]:
        assert key in out
