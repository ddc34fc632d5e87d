"""Backward pricing on a quantization tree: European, Bermudan and barrier options."""

from __future__ import annotations

import enum
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import DateMismatch
from .heston import OptionKind
from .tree import QuantTree


class BarrierDirection(str, enum.Enum):
    UP_OUT = "up-out"
    DOWN_OUT = "down-out"


Payoff = Callable[[np.ndarray], np.ndarray]


def vanilla_payoff(kind: OptionKind | str, strike: float) -> Payoff:
    """Payoff ``psi(s)`` of a vanilla call or put as a function of the asset price."""
    kind = OptionKind(kind)
    if kind is OptionKind.CALL:
        return lambda s: np.maximum(np.asarray(s) - strike, 0.0)
    return lambda s: np.maximum(strike - np.asarray(s), 0.0)


@dataclass(frozen=True)
class BermudanSpec:
    strike: float
    exercise_dates: tuple[float, ...]
    maturity: float
    kind: OptionKind = OptionKind.PUT
    payoff: Payoff | None = None

    def psi(self) -> Payoff:
        return self.payoff if self.payoff is not None else vanilla_payoff(self.kind, self.strike)


@dataclass(frozen=True)
class BarrierSpec:
    strike: float
    barrier: float
    maturity: float
    kind: OptionKind = OptionKind.CALL
    direction: BarrierDirection = BarrierDirection.UP_OUT

    def __post_init__(self):
        if not self.barrier > 0:
            raise ValueError("barrier level must be positive")


@dataclass
class PriceReport:
    instrument: str
    price: float
    n: int
    N1: int
    N2: int
    params_hash: str
    runtime_ms: float
    method: str = "recursive_quantization"
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PriceReport":
        return cls(**json.loads(text))


def _check_maturity(tree: QuantTree, maturity: float) -> None:
    if abs(maturity - tree.T) > 1e-10 * max(1.0, tree.T):
        raise DateMismatch(f"maturity {maturity} differs from the tree horizon {tree.T}")


def _report(tree: QuantTree, instrument: str, price: float, start: float, **diag) -> PriceReport:
    return PriceReport(
        instrument=instrument,
        price=float(price),
        n=tree.n,
        N1=int(max(tree.N1)),
        N2=int(max(tree.N2)),
        params_hash=tree.params.digest(),
        runtime_ms=1e3 * (time.perf_counter() - start),
        diagnostics=diag,
    )


def _terminal_values(tree: QuantTree, psi: Payoff) -> np.ndarray:
    x = tree.asset_grids[-1]
    disc = math.exp(-tree.params.r * tree.times[-1])
    vals = disc * np.asarray(psi(np.exp(x)), dtype=float)
    return np.broadcast_to(vals[:, None], (x.size, tree.vol_grids[-1].size)).copy()


def _root_price(tree: QuantTree, v0: np.ndarray) -> float:
    # layer 0 has the single asset node log s0
    return float(tree.joint_weights[0][0] @ v0[0])


def european_on_tree(tree: QuantTree, kind: OptionKind | str, strike: float,
                     maturity: float | None = None, payoff: Payoff | None = None,
                     discount: float | None = None) -> PriceReport:
    """Discounted terminal payoff integrated against the terminal joint weights.

    ``discount`` overrides the factor ``exp(-r T)``; it exists to compare with
    tables produced under another discounting convention.
    """
    start = time.perf_counter()
    if maturity is not None:
        _check_maturity(tree, maturity)
    psi = payoff if payoff is not None else vanilla_payoff(kind, strike)
    price = float(np.sum(tree.joint_weights[-1] * _terminal_values(tree, psi)))
    if discount is not None:
        price *= discount / math.exp(-tree.params.r * tree.T)
    return _report(tree, f"european-{OptionKind(kind).value}-{strike:g}", price, start)


def snap_dates(tree: QuantTree, dates) -> tuple[list[int], list[dict]]:
    """Map exercise dates (years) to tree steps, recording every snap."""
    idx, snaps = [], []
    for d in dates:
        d = float(d)
        if d < -1e-12 or d > tree.T * (1 + 1e-12):
            raise DateMismatch(f"exercise date {d} outside [0, {tree.T}]")
        k = int(round(d / tree.h))
        if abs(k * tree.h - d) > 1e-12:
            snaps.append({"date": d, "snapped_to": float(tree.times[k]), "step": k})
        idx.append(k)
    return sorted(set(idx)), snaps


def bermudan_price(tree: QuantTree, spec: BermudanSpec) -> PriceReport:
    """Quantized backward dynamic programming on the tree.

    On exercise dates the node value is the larger of the discounted payoff
    and the continuation value; other dates only propagate continuation.
    """
    start = time.perf_counter()
    _check_maturity(tree, spec.maturity)
    steps, snaps = snap_dates(tree, spec.exercise_dates)
    exercise = set(steps)
    psi = spec.psi()
    r = tree.params.r
    v = _terminal_values(tree, psi)
    row_dev = 0.0
    for k in range(tree.n - 1, -1, -1):
        pi = tree.transition(k)
        row_dev = max(row_dev, float(np.max(np.abs(pi.sum(axis=(2, 3)) - 1.0))))
        v = np.tensordot(pi, v, axes=([2, 3], [0, 1]))
        if k in exercise:
            ex = math.exp(-r * tree.times[k]) * np.asarray(psi(np.exp(tree.asset_grids[k])), float)
            v = np.maximum(v, ex[:, None])
    price = _root_price(tree, v)
    return _report(tree, f"bermudan-{OptionKind(spec.kind).value}-{spec.strike:g}", price, start,
                   row_sum_max_dev=row_dev, exercise_steps=steps, snaps=snaps)


def bridge_up_factor(x, z, sigma2, h: float, L_log: float):
    """Probability that a Brownian bridge from ``x`` to ``z`` over ``h`` stays below ``L_log``.

    ``sigma2`` is the squared diffusion coefficient of the log-asset at the
    source node.  A zero ``sigma2`` gives a straight line, so the factor is
    the indicator alone.
    """
    x, z, sigma2 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, z, sigma2)))
    alive = L_log >= np.maximum(x, z)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        expo = -2.0 * (x - L_log) * (z - L_log) / (h * sigma2)
        g = -np.expm1(expo)
    g = np.where(sigma2 > 0, g, 1.0)
    return np.where(alive, np.clip(g, 0.0, 1.0), 0.0)


def bridge_down_factor(x, z, sigma2, h: float, L_log: float):
    """Survival probability of the bridge above ``L_log`` (reflection of the up factor)."""
    return bridge_up_factor(-np.asarray(x, float), -np.asarray(z, float), sigma2, h, -L_log)


def _bridge_matrix(tree: QuantTree, k: int, L_log: float, direction: BarrierDirection):
    x = tree.asset_grids[k][:, None, None]
    z = tree.asset_grids[k + 1][None, None, :]
    s2 = tree.rescaled_vol_grid(k)[None, :, None]
    f = bridge_up_factor if direction is BarrierDirection.UP_OUT else bridge_down_factor
    return f(x, z, s2, tree.h, L_log)          # (i1, i2, j1)


def barrier_price(tree: QuantTree, spec: BarrierSpec) -> PriceReport:
    """Knock-out option priced by the bridge-corrected backward recursion."""
    start = time.perf_counter()
    _check_maturity(tree, spec.maturity)
    direction = BarrierDirection(spec.direction)
    L_log = math.log(spec.barrier)
    v = _terminal_values(tree, vanilla_payoff(spec.kind, spec.strike))
    g_min, g_max, row_dev = 1.0, 0.0, 0.0
    for k in range(tree.n - 1, -1, -1):
        pi = tree.transition(k)
        row_dev = max(row_dev, float(np.max(np.abs(pi.sum(axis=(2, 3)) - 1.0))))
        g = _bridge_matrix(tree, k, L_log, direction)
        g_min = min(g_min, float(g.min()))
        g_max = max(g_max, float(g.max()))
        v = np.einsum("abcd,abc,cd->ab", pi, g, v, optimize=True)
    price = _root_price(tree, v)
    name = f"{direction.value}-{OptionKind(spec.kind).value}-{spec.strike:g}-L{spec.barrier:g}"
    return _report(tree, name, price, start, row_sum_max_dev=row_dev, min_g=g_min, max_g=g_max)
