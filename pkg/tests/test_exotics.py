from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stationary_heston import exotics as ex
from stationary_heston.errors import DateMismatch
from stationary_heston.exotics import BarrierDirection, BarrierSpec, BermudanSpec


def test_constant_payoff_is_discount(small_tree, penalized):
    r = ex.european_on_tree(small_tree, "call", 0.0, payoff=lambda s: np.ones_like(s))
    assert r.price == pytest.approx(math.exp(-penalized.r * 0.5), abs=1e-12)


def test_discount_override(small_tree, penalized):
    a = ex.european_on_tree(small_tree, "call", 100.0).price
    b = ex.european_on_tree(small_tree, "call", 100.0, discount=1.0).price
    assert b == pytest.approx(a * math.exp(penalized.r * 0.5))


def test_put_call_parity_on_tree(small_tree, penalized):
    # the tree is close to a martingale, so parity holds up to quantization error
    c = ex.european_on_tree(small_tree, "call", 100.0).price
    p = ex.european_on_tree(small_tree, "put", 100.0).price
    parity = 100 * math.exp(-penalized.q * 0.5) - 100 * math.exp(-penalized.r * 0.5)
    assert abs((c - p) - parity) < 0.05


def test_bermudan_with_only_maturity_is_european(small_tree):
    b = ex.bermudan_price(small_tree, BermudanSpec(105.0, (0.5,), 0.5)).price
    e = ex.european_on_tree(small_tree, "put", 105.0).price
    assert b == pytest.approx(e, abs=1e-12)


def test_bermudan_monotone_in_exercise_set(small_tree):
    few = ex.bermudan_price(small_tree, BermudanSpec(110.0, (0.25, 0.5), 0.5)).price
    many = ex.bermudan_price(small_tree, BermudanSpec(110.0, tuple(small_tree.times), 0.5)).price
    e = ex.european_on_tree(small_tree, "put", 110.0).price
    assert e <= few + 1e-12 <= many + 2e-12
    # exercising at time 0 is allowed, so the price dominates the intrinsic value
    assert many >= 10.0 - 1e-12


def test_bermudan_snaps_dates(small_tree):
    rep = ex.bermudan_price(small_tree, BermudanSpec(100.0, (0.26, 0.5), 0.5))
    assert rep.diagnostics["exercise_steps"] == [5, 10]
    assert rep.diagnostics["snaps"][0]["snapped_to"] == pytest.approx(0.25)
    assert rep.diagnostics["row_sum_max_dev"] < 1e-10


def test_date_mismatch(small_tree):
    with pytest.raises(DateMismatch):
        ex.bermudan_price(small_tree, BermudanSpec(100.0, (0.25,), 0.75))
    with pytest.raises(DateMismatch):
        ex.bermudan_price(small_tree, BermudanSpec(100.0, (0.6,), 0.5))
    with pytest.raises(DateMismatch):
        ex.european_on_tree(small_tree, "call", 100.0, maturity=0.4)
    with pytest.raises(DateMismatch):
        ex.barrier_price(small_tree, BarrierSpec(100.0, 120.0, 1.0))


def test_bridge_factor_formula():
    g = ex.bridge_up_factor(0.0, 0.1, 0.04, 0.01, 0.3)
    assert g == pytest.approx(1 - math.exp(-2 * 0.3 * 0.2 / (0.01 * 0.04)))
    assert ex.bridge_up_factor(0.0, 0.31, 0.04, 0.01, 0.3) == 0.0
    assert ex.bridge_up_factor(0.0, 0.3, 0.04, 0.01, 0.3) == 0.0   # ends on the barrier
    assert ex.bridge_up_factor(0.0, 0.1, 0.0, 0.01, 0.3) == 1.0
    assert ex.bridge_up_factor(0.0, 0.1, 0.0, 0.01, 0.05) == 0.0


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-1, 1), z=st.floats(-1, 1), s2=st.floats(1e-4, 1), L=st.floats(-2, 2))
def test_bridge_factor_properties(x, z, s2, L):
    up = ex.bridge_up_factor(x, z, s2, 0.01, L)
    assert 0.0 <= up <= 1.0
    assert up == pytest.approx(ex.bridge_up_factor(z, x, s2, 0.01, L))
    down = ex.bridge_down_factor(x, z, s2, 0.01, L)
    assert down == pytest.approx(ex.bridge_up_factor(-x, -z, s2, 0.01, -L))
    assert ex.bridge_up_factor(x, z, s2, 0.01, L + 0.1) >= up


def test_bridge_factor_against_simulated_bridges():
    rng = np.random.default_rng(3)
    x, z, s2, h, L = 0.0, 0.02, 0.04, 0.02, 0.05
    steps, m = 2000, 20_000
    dt = h / steps
    w = np.cumsum(rng.standard_normal((m, steps)) * math.sqrt(s2 * dt), axis=1)
    tgrid = np.arange(1, steps + 1) / steps
    bridge = x + w - tgrid * (w[:, -1:] - (z - x))
    survive = np.mean(bridge.max(axis=1) < L)
    # discrete monitoring overstates survival slightly
    assert survive == pytest.approx(ex.bridge_up_factor(x, z, s2, h, L), abs=0.02)


def test_barrier_limits(small_tree):
    e = ex.european_on_tree(small_tree, "call", 100.0).price
    far = ex.barrier_price(small_tree, BarrierSpec(100.0, 1e6, 0.5)).price
    assert far == pytest.approx(e, abs=1e-12)
    assert ex.barrier_price(small_tree, BarrierSpec(100.0, 100.0, 0.5)).price == 0.0
    assert ex.barrier_price(small_tree, BarrierSpec(100.0, 90.0, 0.5)).price == 0.0
    down_far = ex.barrier_price(small_tree, BarrierSpec(100.0, 1e-6, 0.5, "put",
                                                        BarrierDirection.DOWN_OUT)).price
    assert down_far == pytest.approx(ex.european_on_tree(small_tree, "put", 100.0).price,
                                     abs=1e-12)
    assert ex.barrier_price(small_tree, BarrierSpec(100.0, 101.0, 0.5, "put",
                                                    BarrierDirection.DOWN_OUT)).price == 0.0


def test_barrier_monotone_in_level(small_tree):
    e = ex.european_on_tree(small_tree, "call", 100.0).price
    prices = [ex.barrier_price(small_tree, BarrierSpec(100.0, L, 0.5)).price
              for L in (102, 105, 110, 115, 125, 140, 170)]
    assert all(b >= a - 1e-12 for a, b in zip(prices, prices[1:]))
    assert prices[-1] <= e + 1e-12
    rep = ex.barrier_price(small_tree, BarrierSpec(100.0, 115.0, 0.5))
    assert 0.0 <= rep.diagnostics["min_g"] <= rep.diagnostics["max_g"] <= 1.0


def test_barrier_spec_validation():
    with pytest.raises(ValueError):
        BarrierSpec(100.0, 0.0, 0.5)


def test_price_report_json_round_trip(small_tree):
    rep = ex.bermudan_price(small_tree, BermudanSpec(100.0, (0.25, 0.5), 0.5))
    back = ex.PriceReport.from_json(rep.to_json())
    assert back == rep
    assert rep.method == "recursive_quantization"
    assert rep.n == 10 and rep.N1 == 12 and rep.N2 == 4
    assert rep.params_hash == small_tree.params.digest()


# -- pinned examples ----------------------------------------------------------

from stationary_heston.tree import build_tree


def test_zero_payoff(small_tree):
    rep = ex.bermudan_price(small_tree, BermudanSpec(0.0, tuple(small_tree.times), 0.5))
    assert rep.price == 0.0


def test_bridge_factor_limits():
    assert ex.bridge_up_factor(0.0, 0.1, 0.04, 0.01, 1e6) == 1.0
    assert ex.bridge_down_factor(0.0, 0.1, 0.04, 0.01, -1e6) == 1.0
    assert ex.bridge_down_factor(0.0, 0.1, 0.04, 0.01, 0.0) == 0.0   # L = min(x, z)
    assert ex.bridge_up_factor(0.0, 0.1, 0.04, 0.01, 0.1) == 0.0     # L = max(x, z)


def test_bridge_factor_one_step_penalized(small_tree):
    # x = z = log 100, L = 115, variance from the largest vol node of the tree
    t = small_tree
    s2 = float(t.rescaled_vol_grid(0).max())
    x = z = math.log(100.0)
    L = math.log(115.0)
    g = float(ex.bridge_up_factor(x, z, s2, t.h, L))
    rng = np.random.default_rng(17)
    steps, alive, m = 20, 0, 0
    dt = t.h / steps
    tgrid = np.arange(0, steps + 1) / steps
    for _ in range(10):
        w = np.cumsum(rng.standard_normal((100_000, steps)) * math.sqrt(s2 * dt), axis=1)
        w = np.concatenate([np.zeros((w.shape[0], 1)), w], axis=1)
        b = x + w - tgrid * w[:, -1:]
        a, c = b[:, :-1], b[:, 1:]
        # exact maximum of a Brownian bridge between consecutive points
        u = rng.uniform(size=a.shape)
        top = 0.5 * (a + c + np.sqrt((c - a) ** 2 - 2 * s2 * dt * np.log(u)))
        alive += int(np.sum(top.max(axis=1) < L))
        m += w.shape[0]
    p = alive / m
    se = math.sqrt(max(p * (1 - p), 1e-300) / m)
    assert abs(p - g) <= 3 * se + 1e-12


def test_bermudan_dominates_european_across_grids(penalized):
    T = 0.5
    dates = tuple(np.arange(1, 7) * T / 6)
    for n in (30, 60):
        for N1 in (20, 40):
            t = build_tree(penalized, T, n, N1, 10)
            b = ex.bermudan_price(t, BermudanSpec(100.0, dates, T)).price
            e = ex.european_on_tree(t, "put", 100.0).price
            assert math.isfinite(b) and b > 0 and b >= e - 1e-12
