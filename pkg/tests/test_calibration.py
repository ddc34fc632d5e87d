from __future__ import annotations

import csv

import numpy as np
import pytest

from stationary_heston import calibration as cal
from stationary_heston import HestonParams
from stationary_heston.errors import ConfigError

TRUE = HestonParams(100.0, 0.01, 0.0, 0.05, 4.0, 0.5, -0.6)
PCTS = [80, 85, 90, 95, 100, 105, 110, 115, 120]


@pytest.fixture(scope="module")
def surface():
    return cal.synthetic_surface(TRUE, [50, 120], PCTS)


def test_penalty_value(penalized):
    val = cal.feller_penalty(penalized.theta, penalized.kappa, penalized.xi, 0.01)
    assert val == pytest.approx(2.848e-3, abs=1e-6)
    assert cal.feller_penalty(0.04, 2.0, 0.3, 0.01) == 0.0
    assert cal.feller_penalty(penalized.theta, penalized.kappa, penalized.xi, 0.0) == 0.0


def test_objective_zero_at_truth(surface):
    spec = cal.CalibrationSpec()
    phi = (TRUE.theta, TRUE.kappa, TRUE.xi, TRUE.rho)
    assert cal.objective(phi, surface, spec) < 1e-18


def test_objective_adds_penalty(surface):
    phi = (0.02, 1.0, 0.9, -0.5)
    a = cal.objective(phi, surface, cal.CalibrationSpec(penalty_lambda=0.0))
    b = cal.objective(phi, surface, cal.CalibrationSpec(penalty_lambda=0.5))
    assert b - a == pytest.approx(0.5 * (0.81 - 0.04))


def test_objective_invariant_to_quote_order(surface):
    shuffled = cal.VolSurface(surface.spot, surface.rate, surface.dividend,
                              list(reversed(surface.quotes)))
    phi = (0.03, 2.0, 0.4, -0.3)
    spec = cal.CalibrationSpec()
    assert cal.objective(phi, surface, spec) == cal.objective(phi, shuffled, spec)


def test_reparameterisation_round_trip():
    phi = np.array([0.04, 2.0, 0.5, -0.7])
    assert np.allclose(cal.from_unconstrained(cal.to_unconstrained(phi, "stationary"),
                                              "stationary"), phi)
    phi5 = np.array([0.03, 0.04, 2.0, 0.5, 0.2])
    assert np.allclose(cal.from_unconstrained(cal.to_unconstrained(phi5, "standard"),
                                              "standard"), phi5)
    with pytest.raises(ConfigError):
        cal.to_unconstrained(phi, "other")


def test_zero_budget_returns_initial_guess(surface):
    spec = cal.CalibrationSpec(max_evals=0)
    res = cal.calibrate(surface, spec)
    assert res.evals == 0 and not res.improved
    assert (res.params.theta, res.params.kappa, res.params.xi, res.params.rho) == \
        pytest.approx(spec.initial_guess)


def test_calibration_is_deterministic_and_improves(surface):
    spec = cal.CalibrationSpec(max_evals=150, restarts=2, target_maturity=50 / 365)
    a = cal.calibrate(surface, spec)
    b = cal.calibrate(surface, spec)
    assert a.params == b.params and a.objective_value == b.objective_value
    assert a.improved and a.evals <= 150
    values = [v for _, v in a.trace]
    assert all(y < x for x, y in zip(values, values[1:]))


def test_standard_model_objective(surface):
    spec = cal.CalibrationSpec(model="standard", initial_guess=(0.04, 0.05, 4.0, 0.5, -0.6))
    assert cal.objective(spec.initial_guess, surface, spec) > 0
    with pytest.raises(ConfigError):
        cal.CalibrationSpec(model="standard")


def test_result_json_round_trip(surface):
    res = cal.calibrate(surface, cal.CalibrationSpec(max_evals=20, restarts=1))
    back = cal.CalibrationResult.from_json(res.to_json())
    assert back.params == res.params and back.trace == res.trace
    assert back.feller_satisfied == (res.params.feller_ratio() <= 1.0)


def test_missing_model_iv_counts_fully():
    # a wildly out-of-the-money quote whose model price is zero
    surf = cal.surface_from_rows([(10, 300, 0.3)], 100.0, 0.0, 0.0)
    spec = cal.CalibrationSpec()
    val = cal.objective((0.01, 5.0, 0.2, 0.0), surf, spec)
    assert val == pytest.approx(1.0)


def test_surface_csv_round_trip(surface, tmp_path):
    path = tmp_path / "s.csv"
    surface.to_csv(path)
    back = cal.load_surface(path, surface.spot, surface.rate, surface.dividend)
    assert len(back.quotes) == len(surface.quotes)
    for a, b in zip(back.quotes, surface.quotes):
        assert a.maturity == pytest.approx(b.maturity, rel=1e-15)
        assert a.strike == pytest.approx(b.strike, rel=1e-15)
        assert a.implied_vol == b.implied_vol
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ConfigError):
        cal.load_surface(bad, 100.0, 0.0, 0.0)


def test_smile_report(surface, tmp_path):
    rows = cal.smile_report(TRUE, surface, [50 / 365, 75 / 365])
    at50 = [r for r in rows if r.maturity == pytest.approx(50 / 365)]
    assert len(at50) == 9 and max(r.rel_error for r in at50) < 1e-8
    at75 = [r for r in rows if r.maturity == pytest.approx(75 / 365)]
    assert all(r.market_iv is None and r.rel_error is None and r.model_iv > 0 for r in at75)
    path = tmp_path / "smile.csv"
    cal.write_smile_csv(rows, 100.0, path)
    with open(path) as fh:
        data = list(csv.reader(fh))
    assert data[0] == ["maturity_days", "strike_pct", "market_iv", "model_iv", "rel_error"]
    assert data[-1][2] == cal.MISSING and len(data) == 19


def test_smile_report_marks_zero_prices():
    surf = cal.surface_from_rows([(5, 250, 0.3), (5, 100, 0.2)], 100.0, 0.0, 0.0)
    rows = cal.smile_report(HestonParams(100, 0, 0, 0.01, 5.0, 0.2, 0.0), surf)
    far = [r for r in rows if r.strike == 250][0]
    assert far.model_iv is None and far.rel_error is None


def test_invalid_surface():
    with pytest.raises(ConfigError):
        cal.VolSurface(-1.0, 0.0, 0.0)
    with pytest.raises(ConfigError):
        cal.VolSurface(100.0, 0.0, 0.0, [cal.Quote(0.1, 100.0, -0.2)])
    with pytest.raises(ConfigError):
        cal.CalibrationSpec(penalty_lambda=-1)


def test_penalty_monotone_in_lambda(surface):
    violating = (0.02, 1.0, 0.9, -0.5)
    fine = (0.05, 4.0, 0.5, -0.6)
    vals = [cal.objective(violating, surface, cal.CalibrationSpec(penalty_lambda=lam))
            for lam in (0.0, 0.01, 0.1, 1.0)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    flat = {cal.objective(fine, surface, cal.CalibrationSpec(penalty_lambda=lam))
            for lam in (0.0, 0.01, 1.0)}
    assert len(flat) == 1


def test_rel_error_formula(surface):
    other = HestonParams(100.0, 0.01, 0.0, 0.04, 3.0, 0.6, -0.4)
    rows = cal.smile_report(other, surface)
    rng = np.random.default_rng(0)
    for i in rng.choice(len(rows), 5, replace=False):
        r = rows[i]
        assert r.rel_error == pytest.approx(abs(r.market_iv - r.model_iv) / r.market_iv,
                                            rel=1e-15)


def test_short_maturity_far_strike_handling():
    std = HestonParams(100.0, -0.0032, 0.00225, 0.17023, 2.19, 1.04, -0.83, v0=0.0045)
    surf = cal.surface_from_rows([(7, 110, 0.15), (7, 100, 0.12)], 100.0, -0.0032, 0.00225)
    rows = cal.smile_report(std, surf)
    far = [r for r in rows if r.strike == pytest.approx(110.0)][0]
    if far.model_iv is None:
        assert far.rel_error is None
    else:
        assert far.rel_error == pytest.approx(abs(0.15 - far.model_iv) / 0.15)


def test_calibrated_params_admissible(surface):
    spec = cal.CalibrationSpec(model="standard", initial_guess=(0.04, 0.04, 2.0, 0.5, -0.5),
                               max_evals=120, restarts=2, target_maturity=50 / 365)
    res = cal.calibrate(surface, spec)
    p = res.params
    assert p.theta > 0 and p.kappa > 0 and p.xi > 0 and -1 <= p.rho <= 1 and p.v0 >= 0
    assert res.objective_value >= 0
