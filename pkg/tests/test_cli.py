import json
import subprocess
import sys

import numpy as np
import pytest

from nopo_sim import cli

SMALL_QUANTUM = ["n_max1=6", "n_max2=6", "t_end=0.5", "n_traj=6", "record_stride=100",
                 "transient=0.2"]


def _run(tmp_path, *sets, config_text=None, name="out"):
    args = ["run", "--out", str(tmp_path / name)]
    if config_text is not None:
        cfg = tmp_path / "run.cfg"
        cfg.write_text(config_text)
        args += ["--config", str(cfg)]
    for s in sets:
        args += ["--set", s]
    return cli.main(args), tmp_path / name


def _table(path):
    lines = path.read_text().splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    data = np.array([[float(x) for x in ln.split(",")] for ln in body[1:]])
    return header, body[0].split(","), data


def test_config_parsing_and_comments():
    raw = cli.parse_config_text("# comment\nepsilon = 2.5  # pump\n\nchi=0.3\n")
    assert raw == {"epsilon": "2.5", "chi": "0.3"}
    with pytest.raises(cli.ConfigError, match="line 1"):
        cli.parse_config_text("epsilon 2.5")


def test_unknown_key_is_named():
    with pytest.raises(cli.ConfigError, match="unknown key: epsilonn"):
        cli.resolve({"epsilonn": "1"})


def test_unknown_key_exit_status(tmp_path, capsys):
    rc, _ = _run(tmp_path, config_text="epsilonn = 3\n")
    assert rc != 0
    assert "unknown key: epsilonn" in capsys.readouterr().err


def test_bad_values_are_rejected(capsys, tmp_path):
    for bad in ("gamma1=0", "epsilon=abc", "scenario=bogus", "n_traj=0", "strict=maybe"):
        rc, _ = _run(tmp_path, bad)
        assert rc == 2, bad
    err = capsys.readouterr().err
    assert "gamma1 must be positive" in err
    assert "epsilon" in err


def test_flags_override_file(tmp_path):
    text = "scenario = threshold\nepsilon = 1\nscan_points = 11\nscan_max = 2\n"
    rc, out = _run(tmp_path, "scan_max=4", config_text=text)
    assert rc == 0
    header, cols, data = _table(out / "threshold_scan.csv")
    assert cols == ["epsilon", "max_growth_rate"]
    assert "# scan_max = 4.0" in header
    np.testing.assert_allclose(data[:, 0], np.linspace(0, 4, 11))
    # plain NOPO: the growth rate is epsilon - gamma
    np.testing.assert_allclose(data[:, 1], data[:, 0] - 1, atol=1e-12)


def test_presets_listing(capsys):
    assert cli.main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in ("fig1", "fig2", "fig3", "fig4"):
        assert f"preset:{name}" in out


@pytest.mark.parametrize("name, expected", [
    ("fig1", dict(delta1=10, delta2=10, chi=0.1, epsilon=11, lam=0.1)),
    ("fig2", dict(delta1=10, delta2=-5, chi=0.1, epsilon=4, lam=0.1)),
    ("fig3", dict(delta1=0.1, delta2=-0.1, chi=0.5, epsilon=3, lam=0.1)),
    ("fig4", dict(delta1=10, delta2=-10, chi=0.1, lam=0.1)),
])
def test_preset_parameters(name, expected):
    cfg = cli.resolve({"scenario": f"preset:{name}"})
    p = cli.system_params(cfg)
    for key, value in expected.items():
        assert getattr(p, key) == value
    if name != "fig4":
        assert cli.system_params(cfg, quantum=True).lam == 0.5
        assert any("desk_scale" in ln for ln in cli.config_header(cfg))


def test_semiclassical_scenario(tmp_path):
    rc, out = _run(tmp_path, "scenario=semiclassical", "delta1=10", "delta2=-5", "chi=0.1",
                   "epsilon=4", "lambda=0.1", "classical_t_end=100")
    assert rc == 0
    header, cols, data = _table(out / "classical_traj.csv")
    assert cols == ["t", "re_a1", "im_a1", "re_a2", "im_a2", "n1", "n2"]
    np.testing.assert_allclose(data[:, 5], data[:, 1] ** 2 + data[:, 2] ** 2, rtol=1e-12)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["pulsing"]["is_pulsing"] is True
    assert summary["regime"]["is_stationary_regime"] is False
    assert summary["seeds"]["master"] == 0
    assert "semiclassical" in summary["runtimes"]


def test_qsd_scenario_columns_and_determinism(tmp_path):
    sets = ["scenario=qsd-ensemble", "epsilon=0.8", "lambda=0.5", "seed=17", *SMALL_QUANTUM]
    rc1, out1 = _run(tmp_path, *sets, name="a")
    rc2, out2 = _run(tmp_path, *sets, name="b")
    assert rc1 == rc2 == 0
    assert (out1 / "ensemble.csv").read_bytes() == (out2 / "ensemble.csv").read_bytes()
    header, cols, data = _table(out1 / "ensemble.csv")
    assert cols == ["t", "n1_mean", "n1_se", "n2_mean", "n2_se", "V", "V_se"]
    assert "# seed = 17" in header
    assert data[0, 5] == pytest.approx(1.0)
    summary = json.loads((out1 / "summary.json").read_text())
    assert summary["V"]["V_min"] < 1
    rc3, out3 = _run(tmp_path, *sets[:-1], "seed=18", name="c")
    assert (out1 / "ensemble.csv").read_bytes() != (out3 / "ensemble.csv").read_bytes()


def test_thread_count_does_not_change_output(tmp_path, monkeypatch):
    sets = ["scenario=qsd-ensemble", "epsilon=0.8", "lambda=0.5", *SMALL_QUANTUM, "n_traj=40"]
    monkeypatch.setenv("NOPO_SIM_THREADS", "1")
    _run(tmp_path, *sets, name="one")
    monkeypatch.setenv("NOPO_SIM_THREADS", "4")
    _run(tmp_path, *sets, name="four")
    a = (tmp_path / "one" / "ensemble.csv").read_bytes()
    assert a == (tmp_path / "four" / "ensemble.csv").read_bytes()


def test_wigner_scenario(tmp_path):
    rc, out = _run(tmp_path, "scenario=wigner", "epsilon=0.8", "lambda=0.5", *SMALL_QUANTUM,
                   "grid_points=31", "grid_extent=3", "snapshot_times=0.25 0.5")
    assert rc == 0
    header, cols, data = _table(out / "wigner.csv")
    assert cols == ["re_alpha", "im_alpha", "W"]
    assert data.shape == (31 * 31, 3)
    # row-major: the imaginary coordinate runs fastest
    assert data[0, 0] == data[1, 0] and data[0, 1] < data[1, 1]
    cell = (6 / 30) ** 2
    assert data[:, 2].sum() * cell == pytest.approx(1.0, abs=1e-2)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["peaks"]["peak_count"] >= 1


def test_entanglement_scan_scenario(tmp_path):
    rc, out = _run(tmp_path, "scenario=entanglement-scan", "delta1=2", "delta2=-2",
                   "chi=0.1", "lambda=0.3", "ratios=0.5 1.0", *SMALL_QUANTUM)
    assert rc == 0
    _, cols, data = _table(out / "entanglement_scan.csv")
    assert cols[:4] == ["ratio", "epsilon", "V_min", "V_min_se"]
    assert data.shape[0] == 2
    assert (out / "ensemble.csv").exists()


def test_numerical_failure_exit_status(tmp_path, capsys):
    rc, _ = _run(tmp_path, "scenario=semiclassical", "epsilon=60", "classical_t_end=50",
                 "seed_amplitude=1")
    assert rc == 1
    assert "scenario semiclassical failed" in capsys.readouterr().err


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nopo_sim.cli", "run", "--set", "foo=1"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "unknown key: foo" in proc.stderr
