"""Command-line front end.

Every command accepts ``--config FILE`` (TOML); keys of its
``[<command>]`` table (dashes or underscores) give defaults, and explicit
flags override them.  Maturities are given in days and converted with
ACT/365.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import calibration as cal
from .errors import ConfigError, DateMismatch, FellerViolation, HestonError
from .exotics import (BarrierDirection, BarrierSpec, BermudanSpec, PriceReport, barrier_price,
                      bermudan_price, european_on_tree)
from .heston import EuroOption, OptionKind, stationary_price_quantized, stationary_prices
from .montecarlo import McConfig, mc_barrier, mc_european
from .storage import cached_tree, load_mapping, load_params

log = logging.getLogger("stationary_heston")

DAYS = 365.0

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FELLER = 4
EXIT_DATES = 5
EXIT_COMPUTATION = 6

CONVERGENCE_HEADER = ["n", "N1", "N2", "K", "kind", "price", "benchmark", "rel_err", "runtime_ms"]


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _grids(text: str) -> list[tuple[int, int]]:
    out = []
    for item in str(text).split(","):
        a, _, b = item.strip().lower().partition("x")
        if not b:
            raise ConfigError(f"grid sizes must look like 50x10, got {item!r}")
        out.append((int(a), int(b)))
    return out


def _discount(params, T: float, convention: str) -> float | None:
    if convention == "standard":
        return None
    if convention == "undiscounted":
        return 1.0
    raise ConfigError(f"unknown discount convention {convention!r}")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_price_european(a) -> int:
    params = load_params(a.params)
    T = a.maturity_days / DAYS
    kind = OptionKind(a.kind)
    start = time.perf_counter()
    diag: dict = {}
    if a.method == "quant":
        tree = cached_tree(params, T, a.n, a.n1, a.n2, a.cache_dir)
        rep = european_on_tree(tree, kind, a.strike, T,
                               discount=_discount(params, T, a.discount))
        rep.runtime_ms = 1e3 * (time.perf_counter() - start)
        _emit(rep.to_json(), a.out)
        return EXIT_OK
    if a.method == "laguerre":
        price = float(stationary_prices(params, [a.strike], T, [kind], "laguerre", a.quad_n)[0])
        diag["quadrature_nodes"] = a.quad_n
    elif a.method == "fourier-node":
        price = stationary_price_quantized(params, EuroOption(a.strike, T, kind), a.quad_n)
        diag["quantizer_size"] = a.quad_n
    elif a.method == "mc":
        cfg = McConfig(paths=a.paths, steps=a.n, seed=a.seed, antithetic=a.antithetic)
        price, se = mc_european(params, a.strike, T, kind, cfg)
        diag.update(standard_error=se, paths=a.paths, seed=a.seed)
    else:
        raise ConfigError(f"unknown method {a.method!r}")
    rep = PriceReport(f"european-{kind.value}-{a.strike:g}", float(price), a.n, a.n1, a.n2,
                      params.digest(), 1e3 * (time.perf_counter() - start), a.method, diag)
    _emit(rep.to_json(), a.out)
    return EXIT_OK


def cmd_price_bermudan(a) -> int:
    params = load_params(a.params)
    T = a.maturity_days / DAYS
    if a.exercise_days:
        dates = [d / DAYS for d in _floats(a.exercise_days)]
    else:
        step = a.exercise_every_days
        dates = [d / DAYS for d in np.arange(step, a.maturity_days + 1e-9, step)]
        if not dates or abs(dates[-1] - T) > 1e-12:
            dates.append(T)
    start = time.perf_counter()
    tree = cached_tree(params, T, a.n, a.n1, a.n2, a.cache_dir)
    rep = bermudan_price(tree, BermudanSpec(a.strike, tuple(dates), T, OptionKind(a.kind)))
    rep.runtime_ms = 1e3 * (time.perf_counter() - start)
    _emit(rep.to_json(), a.out)
    return EXIT_OK


def cmd_price_barrier(a) -> int:
    params = load_params(a.params)
    T = a.maturity_days / DAYS
    spec = BarrierSpec(a.strike, a.barrier, T, OptionKind(a.kind), BarrierDirection(a.direction))
    start = time.perf_counter()
    if a.method == "mc":
        cfg = McConfig(paths=a.paths, steps=a.n, seed=a.seed, antithetic=a.antithetic)
        price, se = mc_barrier(params, spec, cfg)
        rep = PriceReport(f"{spec.direction.value}-{spec.kind.value}-{a.strike:g}-L{a.barrier:g}",
                          price, a.n, a.n1, a.n2, params.digest(),
                          1e3 * (time.perf_counter() - start), "mc",
                          {"standard_error": se, "paths": a.paths, "seed": a.seed})
    else:
        tree = cached_tree(params, T, a.n, a.n1, a.n2, a.cache_dir)
        rep = barrier_price(tree, spec)
        rep.runtime_ms = 1e3 * (time.perf_counter() - start)
    _emit(rep.to_json(), a.out)
    return EXIT_OK


def _surface(a) -> cal.VolSurface:
    return cal.load_surface(a.surface, a.spot, a.rate, a.dividend)


def cmd_calibrate(a) -> int:
    surface = _surface(a)
    if a.initial_guess:
        guess = tuple(_floats(a.initial_guess))
    else:
        guess = (0.04, 2.0, 0.5, -0.5) if a.model == "stationary" else (0.04, 0.04, 2.0, 0.5, -0.5)
    spec = cal.CalibrationSpec(
        model=a.model,
        target_maturity=None if a.maturity_days is None else a.maturity_days / DAYS,
        penalty_lambda=a.penalty_lambda, initial_guess=guess, max_evals=a.max_evals,
        tolerance=a.tolerance, restarts=a.restarts, seed=a.seed)
    res = cal.calibrate(surface, spec)
    _emit(res.to_json(), a.out)
    return EXIT_OK


def cmd_smile_report(a) -> int:
    params = load_params(a.params)
    surface = _surface(a)
    mats = None if not a.maturities_days else [d / DAYS for d in _floats(a.maturities_days)]
    rows = cal.smile_report(params, surface, mats)
    if a.out:
        cal.write_smile_csv(rows, surface.spot, a.out)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(["maturity_days", "strike_pct", "market_iv", "model_iv", "rel_error"])
        for row in rows:
            w.writerow(row.cells(surface.spot))
    return EXIT_OK


def convergence_rows(params, T: float, ns, grids, calls, puts, cache_dir=None,
                     discount: str = "standard", quad_n: int = 64):
    """Rows of the convergence CSV: one tree per ``(n, N1, N2)``, all strikes priced on it."""
    strikes = list(calls) + list(puts)
    kinds = [OptionKind.CALL] * len(calls) + [OptionKind.PUT] * len(puts)
    bench = stationary_prices(params, strikes, T, kinds, "laguerre", quad_n)
    rows = []
    for n in ns:
        for N1, N2 in grids:
            start = time.perf_counter()
            tree = cached_tree(params, T, n, N1, N2, cache_dir)
            disc = _discount(params, T, discount)
            prices = [european_on_tree(tree, k, K, discount=disc).price
                      for K, k in zip(strikes, kinds)]
            ms = 1e3 * (time.perf_counter() - start)
            for K, k, pr, b in zip(strikes, kinds, prices, bench):
                rows.append([n, N1, N2, K, k.value, pr, float(b), abs(pr - b) / b, ms])
    return rows


def cmd_convergence_study(a) -> int:
    params = load_params(a.params)
    T = a.maturity_days / DAYS
    rows = convergence_rows(params, T, _ints(a.n_list), _grids(a.grids), _floats(a.calls),
                            _floats(a.puts), a.cache_dir, a.discount, a.quad_n)
    fh = open(a.out, "w", newline="") if a.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(CONVERGENCE_HEADER)
        for r in rows:
            w.writerow([r[0], r[1], r[2], f"{r[3]:g}", r[4], f"{r[5]:.10g}", f"{r[6]:.10g}",
                        f"{r[7]:.6g}", f"{r[8]:.1f}"])
    finally:
        if a.out:
            fh.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _common_tree(p):
    p.add_argument("--params", default=None, help="TOML or JSON file with model parameters")
    p.add_argument("--strike", type=float, default=100.0)
    p.add_argument("--kind", choices=["call", "put"], default="call")
    p.add_argument("--maturity-days", type=float, default=182.5)
    p.add_argument("--n", type=int, default=180, help="time steps")
    p.add_argument("--n1", type=int, default=50, help="asset grid size")
    p.add_argument("--n2", type=int, default=10, help="volatility grid size")
    p.add_argument("--cache-dir", default=None, help="directory of cached trees")
    p.add_argument("--out", default=None, help="output file (stdout otherwise)")


def _mc_flags(p):
    p.add_argument("--paths", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--antithetic", action="store_true")


def _surface_flags(p):
    p.add_argument("--surface", default=None, help="CSV maturity_days,strike_pct,implied_vol")
    p.add_argument("--spot", type=float, default=100.0)
    p.add_argument("--rate", type=float, default=0.0)
    p.add_argument("--dividend", type=float, default=0.0)
    p.add_argument("--out", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stationary-heston",
                                     description="Stationary Heston pricing and calibration")
    parser.add_argument("--config", default=None, help="TOML file with per-command defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("price-european", help="European option price")
    _common_tree(p)
    _mc_flags(p)
    p.add_argument("--method", choices=["quant", "laguerre", "fourier-node", "mc"], default="quant")
    p.add_argument("--quad-n", type=int, default=64, help="Laguerre nodes or quantizer size")
    p.add_argument("--discount", choices=["standard", "undiscounted"], default="standard",
                   help="'undiscounted' reports E[payoff] without the exp(-rT) factor, as in published tree tables")
    p.set_defaults(func=cmd_price_european)

    p = sub.add_parser("price-bermudan", help="Bermudan option on the quantization tree")
    _common_tree(p)
    p.set_defaults(kind="put")
    p.add_argument("--exercise-days", default=None, help="comma-separated exercise days")
    p.add_argument("--exercise-every-days", type=float, default=30.0)
    p.set_defaults(func=cmd_price_bermudan)

    p = sub.add_parser("price-barrier", help="knock-out barrier option")
    _common_tree(p)
    _mc_flags(p)
    p.add_argument("--barrier", type=float, default=None)
    p.add_argument("--direction", choices=["up-out", "down-out"], default="up-out")
    p.add_argument("--method", choices=["quant", "mc"], default="quant")
    p.set_defaults(func=cmd_price_barrier)

    p = sub.add_parser("calibrate", help="fit model parameters to an implied-vol surface")
    _surface_flags(p)
    p.add_argument("--model", choices=["stationary", "standard"], default="stationary")
    p.add_argument("--maturity-days", type=float, default=None)
    p.add_argument("--penalty-lambda", type=float, default=0.01)
    p.add_argument("--initial-guess", default=None, help="comma-separated parameter vector")
    p.add_argument("--max-evals", type=int, default=5000)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("smile-report", help="market vs model implied vols")
    _surface_flags(p)
    p.add_argument("--params", default=None)
    p.add_argument("--maturities-days", default=None)
    p.set_defaults(func=cmd_smile_report)

    p = sub.add_parser("convergence-study", help="tree prices against the Laguerre benchmark")
    p.add_argument("--params", default=None)
    p.add_argument("--maturity-days", type=float, default=182.5)
    p.add_argument("--n-list", default="180")
    p.add_argument("--grids", default="20x5,50x10,100x10,150x10")
    p.add_argument("--calls", default="80,85,90,95,100")
    p.add_argument("--puts", default="100,105,110,115,120")
    p.add_argument("--quad-n", type=int, default=64)
    p.add_argument("--discount", choices=["standard", "undiscounted"], default="standard")
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_convergence_study)
    return parser


REQUIRED = {
    "price-european": ("params",),
    "price-bermudan": ("params",),
    "price-barrier": ("params", "barrier"),
    "calibrate": ("surface",),
    "smile-report": ("surface", "params"),
    "convergence-study": ("params",),
}


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return sub.choices[command]


def parse_args(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse flags on top of the ``[<command>]`` table of ``--config``."""
    args = parser.parse_args(argv)
    if args.config is not None:
        table = load_mapping(args.config).get(args.command, {})
        if not isinstance(table, dict):
            raise ConfigError(f"[{args.command}] must be a table")
        defaults = {k.replace("-", "_"): v for k, v in table.items()}
        unknown = [k for k in defaults if not hasattr(args, k)]
        if unknown:
            raise ConfigError(f"unknown keys {unknown} in [{args.command}]")
        _subparser(parser, args.command).set_defaults(**defaults)
        args = parser.parse_args(argv)
    missing = [k for k in REQUIRED[args.command] if getattr(args, k) is None]
    if missing:
        raise ConfigError(f"missing required settings: {', '.join('--' + m for m in missing)}")
    return args


def _error(exc: BaseException, code: int) -> int:
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parse_args(parser, argv)
    except ConfigError as exc:
        return _error(exc, EXIT_CONFIG)
    except OSError as exc:
        return _error(exc, EXIT_IO)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _error(exc, EXIT_CONFIG)
    except OSError as exc:
        return _error(exc, EXIT_IO)
    except FellerViolation as exc:
        return _error(exc, EXIT_FELLER)
    except DateMismatch as exc:
        return _error(exc, EXIT_DATES)
    except (HestonError, ValueError, ArithmeticError) as exc:
        return _error(exc, EXIT_COMPUTATION)
    except Exception as exc:  # noqa: BLE001 - last-resort machine-readable record
        return _error(exc, EXIT_UNEXPECTED)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
