from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from stationary_heston import cli, storage
from stationary_heston.calibration import synthetic_surface
from stationary_heston.errors import ConfigError
from stationary_heston.exotics import PriceReport
from stationary_heston.heston import HestonParams

PARAMS_TOML = """\
[params]
s0 = 100.0
r = -0.0032
q = 0.00225
theta = 0.02691
kappa = 19.28
xi = 1.15
rho = -0.99
"""

SMALL = ["--n", "6", "--n1", "8", "--n2", "3"]


@pytest.fixture()
def params_file(tmp_path):
    path = tmp_path / "params.toml"
    path.write_text(PARAMS_TOML)
    return path


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_price_european_quant_and_laguerre(capsys, params_file):
    code, out, _ = run(capsys, "price-european", "--params", params_file, *SMALL)
    assert code == cli.EXIT_OK
    rep = PriceReport.from_json(out)
    assert rep.method == "recursive_quantization" and rep.n == 6 and 2.0 < rep.price < 6.0
    code, out, _ = run(capsys, "price-european", "--params", params_file, "--method", "laguerre")
    assert json.loads(out)["price"] == pytest.approx(4.19608, abs=1e-4)


def test_undiscounted_flag(capsys, params_file):
    _, a, _ = run(capsys, "price-european", "--params", params_file, *SMALL)
    _, b, _ = run(capsys, "price-european", "--params", params_file, *SMALL,
                  "--discount", "undiscounted")
    ratio = json.loads(b)["price"] / json.loads(a)["price"]
    assert ratio == pytest.approx(np.exp(-0.0032 * 0.5))


def test_price_european_mc(capsys, params_file):
    code, out, _ = run(capsys, "price-european", "--params", params_file, "--method", "mc",
                       "--paths", 20000, "--n", 10)
    d = json.loads(out)
    assert code == 0 and d["diagnostics"]["standard_error"] > 0


def test_bermudan_and_barrier(capsys, params_file, tmp_path):
    out_file = tmp_path / "b.json"
    code, _, _ = run(capsys, "price-bermudan", "--params", params_file, *SMALL, "--kind", "put",
                     "--exercise-days", "60,120,182.5", "--out", out_file)
    assert code == 0
    rep = PriceReport.from_json(out_file.read_text())
    assert rep.price > 0 and rep.diagnostics["exercise_steps"][-1] == 6
    code, out, _ = run(capsys, "price-barrier", "--params", params_file, *SMALL,
                       "--barrier", 115)
    assert code == 0 and json.loads(out)["price"] >= 0


def test_exit_codes(capsys, params_file, tmp_path):
    code, _, err = run(capsys, "price-european", "--params", tmp_path / "missing.toml")
    assert code == cli.EXIT_IO and json.loads(err)["exit_code"] == cli.EXIT_IO
    code, _, err = run(capsys, "price-barrier", "--params", params_file)
    assert code == cli.EXIT_CONFIG and "barrier" in json.loads(err)["message"]
    bad = tmp_path / "bad.toml"
    bad.write_text(PARAMS_TOML.replace("xi = 1.15", "xi = 3.0"))
    code, _, err = run(capsys, "price-european", "--params", bad, *SMALL)
    assert code == cli.EXIT_FELLER and json.loads(err)["error"] == "FellerViolation"
    code, _, _ = run(capsys, "price-bermudan", "--params", params_file, *SMALL,
                     "--exercise-days", "400")
    assert code == cli.EXIT_DATES
    broken = tmp_path / "broken.toml"
    broken.write_text("[params\n")
    code, _, _ = run(capsys, "price-european", "--params", broken)
    assert code == cli.EXIT_CONFIG


def test_config_defaults_and_override(capsys, params_file, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(f'[price-european]\nparams = "{params_file}"\nmethod = "laguerre"\n'
                   'strike = 90.0\n')
    _, out, _ = run(capsys, "--config", cfg, "price-european")
    assert json.loads(out)["instrument"] == "european-call-90"
    _, out, _ = run(capsys, "--config", cfg, "price-european", "--strike", "95")
    assert json.loads(out)["instrument"] == "european-call-95"
    cfg.write_text("[price-european]\nbogus = 1\n")
    code, _, _ = run(capsys, "--config", cfg, "price-european")
    assert code == cli.EXIT_CONFIG


def test_convergence_study_csv(capsys, params_file, tmp_path):
    out_file = tmp_path / "conv.csv"
    code, _, _ = run(capsys, "convergence-study", "--params", params_file, "--n-list", "4,6",
                     "--grids", "6x3", "--calls", "100", "--puts", "110", "--out", out_file,
                     "--cache-dir", tmp_path / "cache")
    assert code == 0
    rows = list(csv.reader(out_file.open()))
    assert rows[0] == cli.CONVERGENCE_HEADER and len(rows) == 5
    assert float(rows[1][6]) == pytest.approx(4.19608, abs=1e-4)


def test_calibrate_and_smile_report(capsys, tmp_path):
    truth = HestonParams(100.0, 0.0, 0.0, 0.05, 4.0, 0.5, -0.6)
    surf = synthetic_surface(truth, [50], [90, 100, 110])
    path = tmp_path / "surface.csv"
    surf.to_csv(path)
    code, out, _ = run(capsys, "calibrate", "--surface", path, "--max-evals", 40,
                       "--restarts", 1)
    res = json.loads(out)
    assert code == 0 and res["evals"] <= 40
    pfile = tmp_path / "p.json"
    pfile.write_text(json.dumps(truth.to_dict()))
    code, out, _ = run(capsys, "smile-report", "--surface", path, "--params", pfile)
    rows = list(csv.reader(out.splitlines()))
    assert code == 0 and len(rows) == 4 and float(rows[1][4]) < 1e-8


def test_module_entry_point(params_file):
    proc = subprocess.run([sys.executable, "-m", "stationary_heston", "price-european",
                           "--params", str(params_file), "--method", "laguerre"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and json.loads(proc.stdout)["price"] > 0


# -- storage -----------------------------------------------------------------

def test_params_loading(tmp_path, params_file):
    p = storage.load_params(params_file)
    assert p.kappa == 19.28 and p.stationary
    j = tmp_path / "p.json"
    j.write_text(json.dumps({"s0": 1, "r": 0, "q": 0, "theta": 0.04, "kappa": 1, "xi": 0.2,
                             "rho": 0, "v0": 0.05}))
    assert storage.load_params(j).v0 == 0.05
    with pytest.raises(ConfigError):
        storage.params_from_mapping({"s0": 1.0})
    with pytest.raises(ConfigError):
        storage.params_from_mapping({**p.to_dict(), "sigma": 1.0})


def test_tree_cache_round_trip(tmp_path, penalized):
    a = storage.cached_tree(penalized, 0.5, 5, 7, 3, tmp_path)
    files = list(tmp_path.glob("tree-*.npz"))
    assert len(files) == 1
    b = storage.cached_tree(penalized, 0.5, 5, 7, 3, tmp_path)
    for k in range(6):
        assert np.array_equal(a.asset_grids[k], b.asset_grids[k])
        assert np.array_equal(a.vol_grids[k], b.vol_grids[k])
        assert np.array_equal(a.joint_weights[k], b.joint_weights[k])
    for k in range(5):
        assert np.array_equal(a.transition(k), b.transition(k))
    # a different configuration gets a different key
    assert storage.tree_key(penalized, 0.5, 5, 7, 3) != storage.tree_key(penalized, 0.5, 5, 7, 4)
    storage.cached_tree(penalized, 0.5, 5, 7, 4, tmp_path)
    assert len(list(tmp_path.glob("tree-*.npz"))) == 2
