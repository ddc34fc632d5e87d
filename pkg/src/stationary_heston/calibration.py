"""Implied-volatility calibration of the Standard and Stationary Heston models."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import ConfigError, HestonError, OutOfBounds
from .heston import HestonParams, OptionKind, implied_vol, model_prices

log = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.0
MISSING = "MISSING"
FAILED_OBJECTIVE = 1e6
SURFACE_HEADER = ("maturity_days", "strike_pct", "implied_vol")


@dataclass(frozen=True)
class Quote:
    maturity: float
    strike: float
    implied_vol: float


@dataclass
class VolSurface:
    spot: float
    rate: float
    dividend: float
    quotes: list[Quote] = field(default_factory=list)

    def __post_init__(self):
        if not self.spot > 0:
            raise ConfigError("spot must be positive")
        for qt in self.quotes:
            if not (qt.implied_vol > 0 and qt.strike > 0 and qt.maturity > 0):
                raise ConfigError(f"invalid quote {qt}")

    def maturities(self) -> list[float]:
        return sorted({qt.maturity for qt in self.quotes})

    def slice(self, maturity: float, tol: float = 1e-9) -> list[Quote]:
        return sorted((qt for qt in self.quotes if abs(qt.maturity - maturity) <= tol),
                      key=lambda qt: qt.strike)

    @classmethod
    def from_csv(cls, path, spot: float, rate: float, dividend: float) -> "VolSurface":
        """Read a ``maturity_days,strike_pct,implied_vol`` file."""
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != SURFACE_HEADER:
                raise ConfigError(f"surface header must be {','.join(SURFACE_HEADER)}")
            quotes = [Quote(float(row["maturity_days"]) / DAYS_PER_YEAR,
                            float(row["strike_pct"]) / 100.0 * spot,
                            float(row["implied_vol"])) for row in reader]
        return cls(spot, rate, dividend, quotes)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SURFACE_HEADER)
            for qt in self.quotes:
                w.writerow([repr(qt.maturity * DAYS_PER_YEAR), repr(100.0 * qt.strike / self.spot),
                            repr(qt.implied_vol)])


def otm_kinds(spot: float, strikes) -> list[OptionKind]:
    # out-of-the-money quotes keep the implied-vol inversion well conditioned
    return [OptionKind.CALL if K >= spot else OptionKind.PUT for K in strikes]


def synthetic_surface(params: HestonParams, maturities_days, strike_pcts,
                      method: str = "closed-form") -> VolSurface:
    """Surface of model implied vols generated from known parameters."""
    quotes = []
    for days in maturities_days:
        T = days / DAYS_PER_YEAR
        strikes = [pct / 100.0 * params.s0 for pct in strike_pcts]
        kinds = otm_kinds(params.s0, strikes)
        prices = model_prices(params, strikes, T, kinds, method=method)
        for K, kind, pr in zip(strikes, kinds, prices):
            iv = implied_vol(pr, params.s0, K, T, params.r, params.q, kind)
            quotes.append(Quote(T, K, iv))
    return VolSurface(params.s0, params.r, params.q, quotes)


# ---------------------------------------------------------------------------
# Parameter vectors
# ---------------------------------------------------------------------------

STATIONARY_NAMES = ("theta", "kappa", "xi", "rho")
STANDARD_NAMES = ("v0", "theta", "kappa", "xi", "rho")


def _names(model: str) -> tuple[str, ...]:
    if model == "stationary":
        return STATIONARY_NAMES
    if model == "standard":
        return STANDARD_NAMES
    raise ConfigError(f"unknown model {model!r}")


def to_unconstrained(phi, model: str) -> np.ndarray:
    out = []
    for name, val in zip(_names(model), phi):
        if name == "rho":
            out.append(math.atanh(min(max(val, -1 + 1e-15), 1 - 1e-15)))
        else:
            out.append(math.log(val))
    return np.array(out)


def from_unconstrained(z, model: str) -> np.ndarray:
    return np.array([math.tanh(v) if name == "rho" else math.exp(min(v, 700.0))
                     for name, v in zip(_names(model), z)])


def make_params(phi, model: str, surface: VolSurface) -> HestonParams:
    d = dict(zip(_names(model), (float(v) for v in phi)))
    return HestonParams(s0=surface.spot, r=surface.rate, q=surface.dividend,
                        theta=d["theta"], kappa=d["kappa"], xi=d["xi"], rho=d["rho"],
                        v0=d.get("v0"))


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationSpec:
    model: str = "stationary"
    target_maturity: float | None = None
    penalty_lambda: float = 0.01
    initial_guess: tuple[float, ...] = (0.04, 2.0, 0.5, -0.5)
    max_evals: int = 5000
    tolerance: float = 1e-6
    restarts: int = 5
    seed: int = 42
    perturbation: float = 0.3
    pricing: str = "closed-form"

    def __post_init__(self):
        if self.penalty_lambda < 0:
            raise ConfigError("penalty_lambda must be nonnegative")
        if len(self.initial_guess) != len(_names(self.model)):
            raise ConfigError(f"initial guess for {self.model} needs {_names(self.model)}")
        if self.max_evals < 0 or self.restarts < 1:
            raise ConfigError("max_evals must be >= 0 and restarts >= 1")


def feller_penalty(theta: float, kappa: float, xi: float, lam: float) -> float:
    return lam * max(xi * xi - 2.0 * kappa * theta, 0.0)


def _target_quotes(surface: VolSurface, spec: CalibrationSpec) -> list[Quote]:
    if spec.target_maturity is None:
        return list(surface.quotes)
    quotes = surface.slice(spec.target_maturity)
    if not quotes:
        raise ConfigError(f"no quotes at maturity {spec.target_maturity}")
    return quotes


def model_ivs(params: HestonParams, maturity: float, strikes, method: str = "closed-form"):
    """Model implied vols for one maturity; ``nan`` where no implied vol exists."""
    kinds = otm_kinds(params.s0, strikes)
    prices = model_prices(params, strikes, maturity, kinds, method=method)
    out = np.full(len(strikes), np.nan)
    for i, (K, kind, pr) in enumerate(zip(strikes, kinds, prices)):
        try:
            out[i] = implied_vol(pr, params.s0, K, maturity, params.r, params.q, kind)
        except (OutOfBounds, ValueError):
            pass
    return out, prices


def _fit_error(params: HestonParams, quotes: list[Quote], method: str) -> float:
    total = 0.0
    by_T: dict[float, list[Quote]] = {}
    for qt in quotes:
        by_T.setdefault(qt.maturity, []).append(qt)
    for T in sorted(by_T):
        qs = sorted(by_T[T], key=lambda qt: qt.strike)
        ivs, prices = model_ivs(params, T, [qt.strike for qt in qs], method)
        if not np.all(np.isfinite(prices)):
            raise HestonError("non-finite model price")
        mkt = np.array([qt.implied_vol for qt in qs])
        # a missing model vol counts as a model vol of zero
        err = np.where(np.isfinite(ivs), (mkt - ivs) / mkt, 1.0)
        total += float(np.sum(np.sort(err * err)))
    return total


def objective(phi, surface: VolSurface, spec: CalibrationSpec) -> float:
    """Sum of squared relative IV errors plus ``lambda max(xi^2 - 2 kappa theta, 0)``."""
    names = _names(spec.model)
    d = dict(zip(names, phi))
    pen = feller_penalty(d["theta"], d["kappa"], d["xi"], spec.penalty_lambda)
    try:
        params = make_params(phi, spec.model, surface)
        fit = _fit_error(params, _target_quotes(surface, spec), spec.pricing)
    except (HestonError, ValueError, FloatingPointError, OverflowError) as exc:
        log.debug("objective failure at %s: %s", phi, exc)
        return FAILED_OBJECTIVE
    if not math.isfinite(fit):
        return FAILED_OBJECTIVE
    return fit + pen


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

@dataclass
class CalibrationResult:
    params: HestonParams
    objective_value: float
    feller_satisfied: bool
    evals: int
    improved: bool = True
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = self.params.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CalibrationResult":
        d = json.loads(text)
        d["params"] = HestonParams(**d["params"])
        d["trace"] = [tuple(t) for t in d.get("trace", [])]
        return cls(**d)


def calibrate(surface: VolSurface, spec: CalibrationSpec) -> CalibrationResult:
    """Minimise the objective with seeded Nelder-Mead restarts in unconstrained coordinates.

    The first run starts from the initial guess, later ones from the best point
    so far perturbed by a seeded Gaussian of scale ``spec.perturbation``.  The
    evaluation budget ``max_evals`` is shared by all runs.
    """
    model = spec.model
    phi0 = np.asarray(spec.initial_guess, dtype=float)
    f0 = objective(phi0, surface, spec)
    trace = [(0, f0)]
    evals = 0

    def f(z):
        nonlocal evals
        evals += 1
        val = objective(from_unconstrained(z, model), surface, spec)
        if not trace or val < trace[-1][1]:
            trace.append((evals, val))
        return val

    best_z, best_f = to_unconstrained(phi0, model), f0
    rng = np.random.default_rng(spec.seed)
    for run in range(spec.restarts):
        budget = spec.max_evals - evals
        if budget <= 0:
            break
        start = best_z if run == 0 else best_z + spec.perturbation * rng.standard_normal(best_z.size)
        res = optimize.minimize(f, start, method="Nelder-Mead",
                                options={"maxfev": budget, "xatol": spec.tolerance,
                                         "fatol": 1e-16, "adaptive": True})
        if res.fun < best_f:
            best_z, best_f = np.asarray(res.x), float(res.fun)
    phi = from_unconstrained(best_z, model) if best_f < f0 else phi0
    params = make_params(phi, model, surface)
    improved = bool(best_f < f0)
    if not improved and spec.max_evals > 0:
        log.warning("calibration made no improvement over the initial guess")
    return CalibrationResult(params, float(min(best_f, f0)), bool(params.feller_ratio() <= 1.0),
                             evals, improved, [(int(i), float(v)) for i, v in trace])


# ---------------------------------------------------------------------------
# Smile report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmileRow:
    maturity: float
    strike: float
    market_iv: float | None
    model_iv: float | None
    rel_error: float | None

    def cells(self, spot: float) -> list[str]:
        def fmt(v):
            return MISSING if v is None else repr(v)
        return [repr(self.maturity * DAYS_PER_YEAR), repr(100.0 * self.strike / spot),
                fmt(self.market_iv), fmt(self.model_iv), fmt(self.rel_error)]


def smile_report(params: HestonParams, surface: VolSurface, maturities=None,
                 zero_price: float = 1e-12, method: str = "closed-form") -> list[SmileRow]:
    """Market vs model implied vols on the surface strikes for each requested maturity.

    Rows whose model price is numerically zero (or has no implied vol) carry
    ``None`` in the model and error columns, written as ``MISSING``.
    Requested maturities absent from the surface use the strikes of the
    nearest quoted slice and have no market vol.
    """
    mats = surface.maturities() if maturities is None else list(maturities)
    rows = []
    for T in mats:
        quotes = surface.slice(T)
        if quotes:
            strikes = [qt.strike for qt in quotes]
            mkt = [qt.implied_vol for qt in quotes]
        else:
            near = min(surface.maturities(), key=lambda m: abs(m - T))
            strikes = [qt.strike for qt in surface.slice(near)]
            mkt = [None] * len(strikes)
        ivs, prices = model_ivs(params, T, strikes, method)
        for K, m, iv, pr in zip(strikes, mkt, ivs, prices):
            ok = np.isfinite(iv) and pr > zero_price * params.s0
            model_iv = float(iv) if ok else None
            rel = abs(m - model_iv) / m if (ok and m is not None) else None
            rows.append(SmileRow(T, K, m, model_iv, rel))
    return rows


def write_smile_csv(rows: list[SmileRow], spot: float, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["maturity_days", "strike_pct", "market_iv", "model_iv", "rel_error"])
        for row in rows:
            w.writerow(row.cells(spot))


def surface_from_rows(rows, spot: float, rate: float, dividend: float) -> VolSurface:
    """Build a surface from ``(maturity_days, strike_pct, implied_vol)`` tuples."""
    return VolSurface(spot, rate, dividend,
                      [Quote(d / DAYS_PER_YEAR, k / 100.0 * spot, v) for d, k, v in rows])


def load_surface(path: str | Path, spot: float, rate: float, dividend: float) -> VolSurface:
    return VolSurface.from_csv(path, spot, rate, dividend)
