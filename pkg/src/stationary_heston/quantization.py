"""One-dimensional quadratic optimal quantization by Lloyd's fixed-point method.

A law only has to provide ``cdf`` and ``partial_moment`` (see
:mod:`stationary_heston.distributions`).  The Lloyd map sends every grid point
to the conditional mean of its Voronoi cell::

    x_i <- (K(x_{i+1/2}) - K(x_{i-1/2})) / (F(x_{i+1/2}) - F(x_{i-1/2}))

where the half points are midpoints between neighbours, the leftmost is the
left end of the law's support and the rightmost is ``+inf``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg

from .distributions import GammaLaw
from .errors import EmptyCell, NoConvergence

log = logging.getLogger(__name__)

MIN_CELL_MASS = 1e-300
STALL_FACTOR = 100.0
STALL_WINDOW = 20


@dataclass(frozen=True)
class Quantizer1D:
    grid: np.ndarray
    weights: np.ndarray
    distortion: float
    law_tag: str = ""
    iterations: int = 0
    residual: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))

    def __len__(self):
        return self.grid.size

    def edges(self, support_left: float = -math.inf) -> np.ndarray:
        return voronoi_edges(self.grid, support_left)

    def mean(self) -> float:
        return float(self.weights @ self.grid)

    def scaled(self, factor: float, law_tag: str | None = None) -> "Quantizer1D":
        """Image of the quantizer under ``x -> factor * x`` (``factor > 0``)."""
        return Quantizer1D(self.grid * factor, self.weights.copy(),
                           self.distortion * factor * factor,
                           self.law_tag if law_tag is None else law_tag,
                           self.iterations, self.residual)

    def project(self, x) -> np.ndarray:
        """Index of the nearest grid point (ties go to the left cell)."""
        mids = 0.5 * (self.grid[1:] + self.grid[:-1])
        return np.searchsorted(mids, np.asarray(x, dtype=float), side="left")

    def to_json(self) -> str:
        return json.dumps({
            "grid": self.grid.tolist(),
            "weights": self.weights.tolist(),
            "distortion": self.distortion,
            "law_tag": self.law_tag,
        })

    @classmethod
    def from_json(cls, text: str) -> "Quantizer1D":
        d = json.loads(text)
        return cls(np.array(d["grid"]), np.array(d["weights"]), float(d["distortion"]),
                   d.get("law_tag", ""))


def voronoi_edges(grid, support_left: float = -math.inf) -> np.ndarray:
    """Half points ``x_{1/2} < ... < x_{N+1/2}`` of a sorted grid."""
    grid = np.asarray(grid, dtype=float)
    e = np.empty(grid.size + 1)
    e[0] = support_left
    e[-1] = math.inf
    e[1:-1] = 0.5 * (grid[1:] + grid[:-1])
    return e


def cell_masses(law, grid, support_left=None) -> np.ndarray:
    if support_left is None:
        support_left = law.support_left
    F = law.cdf(voronoi_edges(grid, support_left))
    return np.diff(F)


def lloyd_iterate(grid, cdf, partial_moment, support_left: float = -math.inf) -> np.ndarray:
    """One Lloyd step: map every point to the conditional mean of its cell."""
    e = voronoi_edges(grid, support_left)
    F = np.asarray(cdf(e), dtype=float)
    K = np.asarray(partial_moment(e), dtype=float)
    mass = np.diff(F)
    bad = np.flatnonzero(~(mass >= MIN_CELL_MASS))
    if bad.size:
        raise EmptyCell(int(bad[0]), float(mass[bad[0]]))
    return np.diff(K) / mass


def quantile_grid(law, N: int, tol: float = 1e-13) -> np.ndarray:
    """``F^{-1}((2i - 1) / 2N)``: the law's own inverse if it has one, else bisection on the CDF."""
    levels = (2.0 * np.arange(1, N + 1) - 1.0) / (2.0 * N)
    if hasattr(law, "ppf"):
        return np.asarray(law.ppf(levels), dtype=float)
    mean = float(np.asarray(law.mean()))
    left = law.support_left
    lo = np.full(N, left if np.isfinite(left) else mean - 1.0)
    hi = np.full(N, mean + 1.0)
    span = max(1.0, abs(mean))
    while np.any(law.cdf(hi) < levels):
        hi = np.where(law.cdf(hi) < levels, hi + span, hi)
        span *= 2.0
    if not np.isfinite(left):
        span = max(1.0, abs(mean))
        while np.any(law.cdf(lo) > levels):
            lo = np.where(law.cdf(lo) > levels, lo - span, lo)
            span *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = law.cdf(mid) < levels
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) <= tol * max(1.0, np.max(np.abs(hi))):
            break
    return 0.5 * (lo + hi)


def _residual(new, old):
    scale = max(float(np.max(np.abs(new))), 1e-300)
    return float(np.max(np.abs(new - old))) / scale


def _anderson(xs, fs, window):
    # type-II Anderson mixing on the last `window` iterates
    g = [f - x for x, f in zip(xs[-window:], fs[-window:])]
    if len(g) < 2:
        return fs[-1]
    dG = np.array([g[i + 1] - g[i] for i in range(len(g) - 1)]).T
    dF = np.array([fs[-window:][i + 1] - fs[-window:][i] for i in range(len(g) - 1)]).T
    gamma, *_ = np.linalg.lstsq(dG, g[-1], rcond=None)
    return fs[-1] - dF @ gamma


def lloyd_fixed_point(law, init, tol: float = 1e-10, max_iters: int = 10_000,
                      anderson: bool = False, window: int = 5,
                      support_left: float | None = None):
    """Iterate the Lloyd map from ``init`` until the relative sup-norm move is ``<= tol``.

    Returns ``(grid, iterations, residual, history)`` where ``history`` holds the
    residual of every iteration.
    """
    if support_left is None:
        support_left = law.support_left
    x = np.sort(np.asarray(init, dtype=float))
    history = []
    xs, fs = [], []
    for it in range(1, max_iters + 1):
        fx = lloyd_iterate(x, law.cdf, law.partial_moment, support_left)
        res = _residual(fx, x)
        history.append(res)
        if res <= tol:
            return fx, it, res, history
        if anderson:
            xs.append(x)
            fs.append(fx)
            cand = _anderson(xs, fs, window)
            # fall back to the plain step if mixing breaks ordering or support
            if np.all(np.diff(cand) > 0) and cand[0] > support_left:
                fx = cand
            del xs[:-window], fs[:-window]
        x = fx
    raise NoConvergence(max_iters, history[-1] if history else math.inf)


def newton_fixed_point(law, init, tol: float = 1e-10, max_iters: int = 200,
                       support_left: float | None = None):
    """Solve the stationarity equations ``x_i p_i = M_i`` by damped Newton steps.

    ``p_i`` and ``M_i`` are the mass and first moment of cell ``i``.  The
    Jacobian is tridiagonal and only needs the law's density at the interior
    half points.  A step is halved until the grid stays ordered, inside the
    support, and the residual norm decreases; if that fails a Lloyd step is
    taken instead.  A residual that improved by under 1% over the last
    ``STALL_WINDOW`` iterations while within ``STALL_FACTOR * tol`` is
    accepted.  Same return convention as :func:`lloyd_fixed_point`.
    """
    if support_left is None:
        support_left = law.support_left
    x = np.sort(np.asarray(init, dtype=float))
    N = x.size
    history = []

    def gradient(x):
        e = voronoi_edges(x, support_left)
        F = law.cdf(e)
        K = law.partial_moment(e)
        p = np.diff(F)
        return x * p - np.diff(K), p, e

    G, p, e = gradient(x)
    for it in range(1, max_iters + 1):
        if np.any(~(p >= MIN_CELL_MASS)):
            bad = int(np.flatnonzero(~(p >= MIN_CELL_MASS))[0])
            raise EmptyCell(bad, float(p[bad]))
        lloyd = x - G / p
        res = _residual(lloyd, x)
        history.append(res)
        if res <= tol:
            return lloyd, it, res, history
        if (res <= STALL_FACTOR * tol and len(history) > STALL_WINDOW
                and min(history[-STALL_WINDOW:]) > 0.99 * min(history[:-STALL_WINDOW])):
            # rounding floor: tiny tail cells stop the residual from shrinking further
            log.warning("Newton stalled at residual %.2e (tol %.1e, N=%d)", res, tol, N)
            return lloyd, it, res, history
        if N == 1:
            x = lloyd
            G, p, e = gradient(x)
            continue
        fe = np.asarray(law.pdf(e[1:-1]), dtype=float)   # density at interior edges
        gap = np.diff(x)
        c = fe * gap / 4.0
        diag = p.copy()
        diag[:-1] -= c
        diag[1:] -= c
        ab = np.zeros((3, N))
        ab[0, 1:] = -c
        ab[1] = diag
        ab[2, :-1] = -c
        try:
            step = linalg.solve_banded((1, 1), ab, -G)
        except (linalg.LinAlgError, ValueError):
            step = None
        norm0 = np.linalg.norm(G / p)
        accepted = False
        if step is not None and np.all(np.isfinite(step)):
            t = 1.0
            for _ in range(30):
                cand = x + t * step
                if np.all(np.diff(cand) > 0) and cand[0] > support_left:
                    Gc, pc, ec = gradient(cand)
                    if np.all(pc > 0) and np.linalg.norm(Gc / pc) < norm0:
                        x, G, p, e = cand, Gc, pc, ec
                        accepted = True
                        break
                t *= 0.5
        if not accepted:
            x = lloyd
            G, p, e = gradient(x)
    raise NoConvergence(max_iters, history[-1] if history else math.inf)


def optimize(law, N: int, init=None, tol: float = 1e-10, max_iters: int = 10_000,
             anderson: bool = False, law_tag: str = "", method: str = "lloyd") -> Quantizer1D:
    """Optimal ``N``-quantizer of ``law`` with weights and distortion attached.

    ``method`` is ``"lloyd"`` (the reference fixed-point iteration, optionally
    Anderson-accelerated) or ``"newton"`` (needs ``law.pdf``; much faster for
    large ``N``).  ``init`` defaults to the midpoint-quantile grid.  If a cell
    empties out, the iteration is restarted once from the quantile grid before
    giving up.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if method == "lloyd":
        def solve(start):
            return lloyd_fixed_point(law, start, tol, max_iters, anderson)
    elif method == "newton":
        def solve(start):
            return newton_fixed_point(law, start, tol, min(max_iters, 1000))
    else:
        raise ValueError(f"unknown method {method!r}")
    start = quantile_grid(law, N) if init is None else np.asarray(init, dtype=float)
    try:
        grid, it, res, _ = solve(start)
    except EmptyCell:
        log.warning("empty Voronoi cell for %s (N=%d); restarting from quantiles", law_tag, N)
        grid, it, res, _ = solve(quantile_grid(law, N))
    weights = cell_masses(law, grid)
    q = Quantizer1D(grid, weights, 0.0, law_tag, it, res)
    return Quantizer1D(grid, weights, distortion(q, law), law_tag, it, res)


def distortion(q: Quantizer1D, law) -> float:
    """Half the mean squared quantization error ``1/2 E[min_i |X - x_i|^2]``."""
    grid = q.grid
    e = voronoi_edges(grid, law.support_left)
    F = law.cdf(e)
    K = law.partial_moment(e)
    if hasattr(law, "partial_moment2"):
        M2 = law.partial_moment2(e)
        per_cell = np.diff(M2) - 2.0 * grid * np.diff(K) + grid * grid * np.diff(F)
    else:
        per_cell = np.array([
            integrate.quad(lambda t, c=c: (t - c) ** 2 * law.pdf(t), lo, hi,
                           limit=200)[0]
            for c, lo, hi in zip(grid, e[:-1], e[1:])
        ])
    return 0.5 * float(np.sum(np.maximum(per_cell, 0.0)))


def stationary_vol_quantizer(theta: float, kappa: float, xi: float, N: int,
                             **kwargs) -> Quantizer1D:
    """Optimal quantizer of the CIR invariant law ``Gamma(alpha, beta)``.

    The unit-rate law ``Gamma(alpha, 1)`` is quantized and the grid is rescaled
    by ``1 / beta``; cell probabilities are unchanged by the rescaling.
    """
    if not (theta > 0 and kappa > 0 and xi > 0):
        raise ValueError("theta, kappa and xi must be positive")
    beta = 2.0 * kappa / xi**2
    alpha = theta * beta
    kwargs.setdefault("method", "newton")
    unit = optimize(GammaLaw(alpha, 1.0), N, law_tag=f"gamma({alpha:.6g},1)", **kwargs)
    return unit.scaled(1.0 / beta, law_tag=f"gamma({alpha:.6g},{beta:.6g})")


def gamma_parameters(theta: float, kappa: float, xi: float) -> tuple[float, float]:
    """``(alpha, beta)`` of the CIR invariant law."""
    beta = 2.0 * kappa / xi**2
    return theta * beta, beta
