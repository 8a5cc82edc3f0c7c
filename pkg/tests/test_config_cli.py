import json

import numpy as np
import pytest

from vnls.cli import EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_NUMERIC, EXIT_OK, main, run, spectrum_ledger, update_ledger
from vnls.config import DEFAULTS, ConfigError, config_hash, load_config, validate
from vnls.linearization import RadialMode, SpectralData, check_h6_h7_h8

SMALL = """
seed = 7
[grid]
n = 32
box_length = 25.132741228718345
[family_scan]
omega_min = 0.5
omega_max = 1.3
n_samples = 5
[evolution]
dt = 0.05
t_final = 1.0
output_every = 5
snapshot_every = 1
[perturbation]
kicks = [{mode = 3, re = 0.01, im = 0.0}]
[fgr]
n_theta = 8
"""


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.mark.parametrize("text, key", [
    ("[grid]\nn = 31\n", "grid.n"),
    ("[grid]\nn = 14\n", "grid.n"),
    ("[evolution]\ndt = -0.1\n", "evolution.dt"),
    ("[evolution]\ndt = 'fast'\n", "evolution.dt"),
    ("[soliton]\nomega0 = 0.0\n", "soliton.omega0"),
    ("[grid]\nspacing = 1.0\n", "grid.spacing"),
    ("[nonlinearity]\nkind = 'sine'\n", "nonlinearity.kind"),
    ("[nonlinearity]\nkind = 'cubic_quintic'\ngamma = -1.0\n", "nonlinearity.gamma"),
    ("[perturbation]\nkicks = [{mode = -1}]\n", "perturbation.kicks[0].mode"),
    ("[family_scan]\nomega_min = 2.0\nomega_max = 1.0\n", "family_scan.omega_max"),
])
def test_validation_names_key(tmp_path, text, key):
    with pytest.raises(ConfigError) as exc:
        load_config(_write(tmp_path, text))
    assert str(exc.value).startswith(key)


def test_validation_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, "[grid]\nn = 31\n")
    assert run("groundstate", cfg, tmp_path / "out") == EXIT_CONFIG
    assert "grid.n" in capsys.readouterr().err
    assert run("groundstate", tmp_path / "missing.toml", tmp_path / "out") == EXIT_CONFIG
    assert run("groundstate", _write(tmp_path, "[grid\n", "bad.toml"), tmp_path / "out") == EXIT_CONFIG


def test_defaults_valid_and_hash_stable(tmp_path):
    cfg = load_config(_write(tmp_path, ""))
    assert cfg["grid"]["n"] == DEFAULTS["grid"]["n"]
    h = config_hash(cfg)
    assert h == config_hash(validate(json.loads(json.dumps(cfg))))
    assert h == config_hash({**cfg, "output_dir": "elsewhere"})
    assert h != config_hash({**cfg, "seed": 1})


def test_numerical_failure_exit(tmp_path):
    # a defocusing nonlinearity has no ground state
    cfg = _write(tmp_path, "[nonlinearity]\nkind = 'polynomial'\ncoeffs = [0.0, 1.0]\n")
    out = tmp_path / "out"
    assert run("groundstate", cfg, out) == EXIT_NUMERIC
    assert json.loads((out / "groundstate.failed.json").read_text())["error"] == "NoGroundStateError"


def test_hypothesis_failure_exit(tmp_path):
    # the 3D cubic branch is mass-supercritical: the slope condition fails; its steeper
    # profile needs a finer radial grid than the default to meet the residual bound
    cfg = _write(tmp_path, "[nonlinearity]\nkind = 'cubic'\n[family_scan]\nomega_min = 0.5\nomega_max = 2.0\n"
                           "n_samples = 4\n[radial]\nn_points = 3000\n")
    out = tmp_path / "out"
    assert run("groundstate", cfg, out) == EXIT_HYPOTHESIS
    led = json.loads((out / "ledger.json").read_text())
    assert led["hypotheses"]["H4"]["status"] == "fail"
    assert led["hypotheses"]["H4"]["margins"]["slope_at_omega0"] < 0
    assert [h for h, e in led["hypotheses"].items() if e["status"] == "fail"] == ["H4"]


def test_idempotent_rerun(tmp_path, capsys):
    cfg = _write(tmp_path, "[family_scan]\nomega_min = 0.5\nomega_max = 1.3\nn_samples = 4\n")
    out = tmp_path / "out"
    assert run("groundstate", cfg, out) == EXIT_OK
    before = (out / "profile.csv").stat().st_mtime_ns
    capsys.readouterr()
    assert run("groundstate", cfg, out) == EXIT_OK
    assert "up to date" in capsys.readouterr().out
    assert (out / "profile.csv").stat().st_mtime_ns == before
    assert run("groundstate", cfg, out, force=True) == EXIT_OK
    assert (out / "profile.csv").stat().st_mtime_ns > before


def test_report_on_empty_dir(tmp_path):
    assert run("report", _write(tmp_path, ""), tmp_path / "empty") == EXIT_CONFIG


def test_track_without_trajectory(tmp_path):
    assert run("track", _write(tmp_path, ""), tmp_path / "empty") == EXIT_CONFIG


def test_ledger_vacuous_h9(tmp_path):
    header = {"config_hash": "abc", "vnls_version": "x"}
    entry = {"status": "pass", "evidence": [], "margins": {}}
    update_ledger(tmp_path, header, {"H7": {**entry, "margins": {"n_modes": 0}}, "H9": entry})
    led = json.loads((tmp_path / "ledger.json").read_text())
    assert "H9" not in led["hypotheses"]
    led = update_ledger(tmp_path, header, {}, vacuous=["H9"])
    assert led["vacuous"] == ["H9"]
    # a new configuration starts a fresh ledger
    led = update_ledger(tmp_path, {**header, "config_hash": "def"}, {"H1": entry})
    assert list(led["hypotheses"]) == ["H1"] and led["vacuous"] == []


def test_spectrum_ledger_commensurate():
    r = np.linspace(0.1, 1, 10)
    spec = SpectralData(1.0, [RadialMode(e, "first", 0, r, r, r, 0.5, 0.0) for e in (0.3, 0.6)])
    led = spectrum_ledger(spec, check_h6_h7_h8(spec), 10, {0: 1, 1: 0, 2: 0})
    assert led["H8"]["status"] == "fail" and led["H8"]["margins"]["offending_mu"] == [2, -1]
    assert led["H5"]["status"] == "pass" and led["H7"]["status"] == "pass"
    led = spectrum_ledger(spec, check_h6_h7_h8(spec), 9, {0: 1, 1: 0, 2: 0})
    assert led["H5"]["status"] == "fail"


def test_main_argparse(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["explode", "--config", "x.toml"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0 and "vnls" in capsys.readouterr().out


def test_end_to_end_small(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "run"
    for cmd in ("groundstate", "spectrum", "evolve", "track", "fgr", "report"):
        assert main([cmd, "--config", str(cfg), "--out", str(out)]) == EXIT_OK, cmd
    h = config_hash(load_config(cfg))
    for name in ("profile.csv", "mass_curve.csv", "h4.json", "spectrum.json", "eigenfunctions.csv",
                 "invariants.csv", "final.bin", "trajectory.json", "stability.csv", "track.json", "fgr.json",
                 "report.json", "report.md", "ledger.json"):
        assert (out / name).exists(), name
    for name in ("h4.json", "spectrum.json", "trajectory.json", "track.json", "fgr.json", "report.json"):
        assert json.loads((out / name).read_text())["config_hash"] == h, name
    led = json.loads((out / "ledger.json").read_text())
    assert {f"H{j}" for j in range(1, 10)} <= set(led["hypotheses"])
    assert led["hypotheses"]["H9"]["status"] == "pass"
    spec = json.loads((out / "spectrum.json").read_text())
    assert spec["kernel_dimension"] == 10 and spec["bigN"] == 1
    traj = json.loads((out / "trajectory.json").read_text())
    assert len(traj["times"]) == 5 and traj["drift"]["Pi4"] < 1e-10
    fgr = json.loads((out / "fgr.json").read_text())
    assert fgr["strict"] and fgr["prediction_d_dt_lyapunov"] < 0
    assert (out / "report.md").read_text().startswith("# vnls run report")
    # the same configuration reproduces the trajectory hash bit for bit
    out2 = tmp_path / "run2"
    assert main(["evolve", "--config", str(cfg), "--out", str(out2)]) == EXIT_OK
    assert json.loads((out2 / "trajectory.json").read_text())["final_sha256"] == traj["final_sha256"]
