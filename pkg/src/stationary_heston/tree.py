"""Hybrid product recursive quantization tree for the Stationary Heston model.

The boosted variance ``Y_t = e^{kappa t} v_t`` is discretised with a Milstein
scheme, which stays positive whenever ``xi^2 <= 4 kappa theta``; the
log-asset ``X_t`` uses an Euler scheme driven by ``Y``.  Each time layer holds
an optimal quantizer of the one-step image of the previous layer (a mixture of
noncentral squares for ``Y``, a mixture of normals for ``X``), and the joint
transition probabilities are bivariate-normal rectangle probabilities.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numba
import numpy as np

from . import distributions as dist
from .errors import EmptyCell, FellerViolation, NoConvergence, TreeBuildError
from .heston import HestonParams
from .quantization import (
    Quantizer1D,
    lloyd_fixed_point,
    newton_fixed_point,
    quantile_grid,
    stationary_vol_quantizer,
    voronoi_edges,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# One-step schemes
# ---------------------------------------------------------------------------

def check_scheme_positivity(params: HestonParams) -> None:
    """Raise unless ``xi^2 <= 4 kappa theta`` (the boosted Milstein scheme stays >= 0)."""
    if params.xi**2 > 4.0 * params.kappa * params.theta:
        raise FellerViolation(
            f"xi^2 = {params.xi**2:.6g} exceeds 4 kappa theta = "
            f"{4 * params.kappa * params.theta:.6g}; the boosted Milstein scheme can go negative"
        )


def milstein_coefficients(params: HestonParams, t: float, y, h: float):
    """``(mu, kappa_c, lambda_c)`` such that one Milstein step is ``mu + kappa_c (z + lambda_c)^2``."""
    y = np.asarray(y, dtype=float)
    ekt = math.exp(params.kappa * t)
    # sigma~ sigma~'_x = xi^2 e^{kappa t} / 2 for every y
    ss = 0.5 * params.xi**2 * ekt
    kappa_c = np.full(y.shape, ss * h / 2.0)
    with np.errstate(divide="ignore"):
        lam = 2.0 * np.sqrt(y) / (math.sqrt(h) * params.xi * math.exp(0.5 * params.kappa * t))
    mu = np.full(y.shape, h * (ekt * params.kappa * params.theta - ss / 2.0))
    return mu, kappa_c, lam


def milstein_step(t: float, y, z, params: HestonParams, h: float):
    """Boosted-variance Milstein step ``M(t, y, z)``."""
    mu, kc, lam = milstein_coefficients(params, t, y, h)
    return mu + kc * (np.asarray(z, dtype=float) + lam) ** 2


def euler_coefficients(params: HestonParams, t: float, x, y, h: float):
    """Mean and standard deviation of the Euler step of the log-asset."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ekt = math.exp(-params.kappa * t)
    mean = x + (params.r - params.q - 0.5 * ekt * y) * h
    std = np.broadcast_to(np.sqrt(ekt * y) * math.sqrt(h), mean.shape)
    return mean, std


def euler_step(t: float, x, y, z, params: HestonParams, h: float):
    mean, std = euler_coefficients(params, t, x, y, h)
    return mean + std * np.asarray(z, dtype=float)


# ---------------------------------------------------------------------------
# Transition kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _joint_transitions_kernel(a, zA, zB, rho, out):
    """Fill ``out[i1, i2, j1, j2]`` with bivariate rectangle probabilities.

    ``a[i1, i2, :]`` are the standardized asset edges of source ``(i1, i2)``;
    ``zA[i2, :]`` (increasing) and ``zB[i2, :]`` (decreasing) the two families of
    vol-band edges.  Band A is ``(zA_j, zA_{j+1}]`` and band B is
    ``[zB_{j+1}, zB_j)``.
    """
    n1, n2, m1p = a.shape
    m2p = zA.shape[1]
    GA = np.empty((m1p, m2p))
    GB = np.empty((m1p, m2p))
    for i1 in range(n1):
        for i2 in range(n2):
            for p in range(m1p):
                ap = a[i1, i2, p]
                for q in range(m2p):
                    GA[p, q] = dist._bvn_cdf_scalar(ap, zA[i2, q], rho)
                    GB[p, q] = dist._bvn_cdf_scalar(ap, zB[i2, q], rho)
            for j1 in range(m1p - 1):
                for j2 in range(m2p - 1):
                    pa = GA[j1 + 1, j2 + 1] - GA[j1, j2 + 1] - GA[j1 + 1, j2] + GA[j1, j2]
                    pb = GB[j1 + 1, j2] - GB[j1, j2] - GB[j1 + 1, j2 + 1] + GB[j1, j2 + 1]
                    v = max(pa, 0.0) + max(pb, 0.0)
                    out[i1, i2, j1, j2] = v


def vol_band_edges(y_edges, mu, kappa_c, lam):
    """Clamped square-root band edges ``(zA, zB)`` for every source vol node.

    ``zA[i, j] = sqrt(0 v (y_{j-1/2} - mu_i)/kappa_i) - lambda_i`` and
    ``zB[i, j] = -sqrt(...) - lambda_i``.
    """
    with np.errstate(invalid="ignore"):
        s = np.sqrt(np.maximum((y_edges[None, :] - mu[:, None]) / kappa_c[:, None], 0.0))
    return s - lam[:, None], -s - lam[:, None]


def standardized_asset_edges(x_edges, mean, std):
    """``(x_{j -+ 1/2} - mu) / sigma`` with point masses sent to -+inf."""
    with np.errstate(divide="ignore", invalid="ignore"):
        a = (x_edges[None, None, :] - mean[..., None]) / std[..., None]
    point = (std == 0.0)[..., None]
    if np.any(point):
        side = np.where(x_edges[None, None, :] >= mean[..., None], np.inf, -np.inf)
        a = np.where(point, side, a)
    return a


# ---------------------------------------------------------------------------
# Tree
# ---------------------------------------------------------------------------

@dataclass
class QuantTree:
    params: HestonParams
    T: float
    n: int
    times: np.ndarray
    vol_grids: list = field(default_factory=list)
    vol_weights: list = field(default_factory=list)
    vol_transitions: list = field(default_factory=list)
    asset_grids: list = field(default_factory=list)
    joint_weights: list = field(default_factory=list)
    transitions: list = field(default_factory=list)
    build_seconds: float = 0.0
    solver: str = "newton"

    @property
    def h(self) -> float:
        return self.T / self.n

    @property
    def N1(self) -> list[int]:
        return [g.size for g in self.asset_grids]

    @property
    def N2(self) -> list[int]:
        return [g.size for g in self.vol_grids]

    @property
    def has_transitions(self) -> bool:
        return len(self.transitions) == self.n

    def rescaled_vol_grid(self, k: int) -> np.ndarray:
        """Variance grid ``e^{-kappa t_k} y^k`` at date ``k``."""
        return math.exp(-self.params.kappa * self.times[k]) * self.vol_grids[k]

    def transition(self, k: int) -> np.ndarray:
        """Transition tensor ``pi^k``; recomputed from the grids when not stored."""
        if not 0 <= k < self.n:
            raise IndexError(f"step {k} outside 0..{self.n - 1}")
        if self.has_transitions:
            return self.transitions[k]
        return layer_transition(self.params, self.times[k], self.h, self.asset_grids[k],
                                self.vol_grids[k], self.asset_grids[k + 1],
                                self.vol_grids[k + 1])

    def transition_matrix(self, k: int) -> np.ndarray:
        """``pi^k`` flattened to a row-stochastic ``(N1_k N2_k) x (N1_{k+1} N2_{k+1})`` matrix."""
        t = self.transition(k)
        return t.reshape(t.shape[0] * t.shape[1], t.shape[2] * t.shape[3])

    def row_sum_max_dev(self) -> float:
        return max(float(np.max(np.abs(self.transition(k).sum(axis=(2, 3)) - 1.0)))
                   for k in range(self.n))


def _schedule(N, n: int, name: str) -> list[int]:
    if np.isscalar(N):
        sizes = [int(N)] * (n + 1)
    else:
        sizes = [int(v) for v in N]
        if len(sizes) != n + 1:
            raise ValueError(f"{name} schedule needs n + 1 = {n + 1} entries")
    if min(sizes) < 1:
        raise ValueError(f"{name} sizes must be >= 1")
    return sizes


def _solve_layer(law, init, solver: str, tol: float):
    if solver == "newton":
        try:
            return newton_fixed_point(law, init, tol, 500)[0]
        except (NoConvergence, EmptyCell):
            log.debug("newton failed; falling back to accelerated Lloyd")
            return lloyd_fixed_point(law, quantile_grid(law, len(init)), tol, 20_000,
                                     anderson=True)[0]
    anderson = solver == "anderson"
    return lloyd_fixed_point(law, init, tol, 50_000, anderson=anderson)[0]


def _warm_start(prev_grid, prev_mean, law, size):
    if prev_grid is not None and prev_grid.size == size and size > 1:
        init = prev_grid + (law.mean() - prev_mean)
        if init[0] > law.support_left:
            return init
    return quantile_grid(law, size)


def build_vol_layer(params: HestonParams, t: float, h: float, grid, weights, size: int,
                    solver: str = "newton", tol: float = 1e-10):
    """Quantize the one-step Milstein image of a vol layer.

    Returns ``(grid_next, weights_next, P)`` with ``P[i, j] = p_ij`` the vol
    transition probabilities.
    """
    mu, kc, lam = milstein_coefficients(params, t, grid, h)
    law = dist.MixtureLaw(weights / weights.sum(), dist.NoncentralSquareLaw(mu, kc, lam))
    init = _warm_start(grid, float(weights @ grid) / weights.sum(), law, size)
    nxt = _solve_layer(law, init, solver, tol)
    edges = voronoi_edges(nxt, law.support_left)
    F = dist.NoncentralSquareLaw(mu[:, None], kc[:, None], lam[:, None]).cdf(edges[None, :])
    P = np.maximum(np.diff(F, axis=1), 0.0)
    P /= P.sum(axis=1, keepdims=True)
    return nxt, weights @ P, P


def asset_mixture(params: HestonParams, t: float, h: float, x_grid, y_grid, joint):
    """Normal mixture law of the Euler image of a (log-asset, vol) layer."""
    mean, std = euler_coefficients(params, t, x_grid[:, None], y_grid[None, :], h)
    w = joint.ravel()
    keep = w > 0
    w = w[keep] / w[keep].sum()
    return dist.MixtureLaw(w, dist.NormalLaw(mean.ravel()[keep], std.ravel()[keep])), mean, std


def build_asset_layer(params: HestonParams, t: float, h: float, x_grid, y_grid, joint,
                      size: int, solver: str = "newton", tol: float = 1e-10):
    law, _, _ = asset_mixture(params, t, h, x_grid, y_grid, joint)
    prev_mean = float(joint.sum(axis=1) @ x_grid)
    init = _warm_start(x_grid, prev_mean, law, size)
    return _solve_layer(law, init, solver, tol)


def joint_transitions(params: HestonParams, t: float, h: float, x_grid, y_grid,
                      x_next, y_next, y_support_left: float = 0.0,
                      factorized: bool | None = None) -> np.ndarray:
    """Transition tensor ``pi[i1, i2, j1, j2]`` between two product layers.

    With ``rho == 0`` (or ``factorized=True``) the product form
    ``p_{i2 j2} (N(x+) - N(x-))`` is used; otherwise every entry is the sum of
    two bivariate-normal rectangle probabilities (one per vol band).
    """
    rho = params.rho
    mean, std = euler_coefficients(params, t, x_grid[:, None], y_grid[None, :], h)
    a = standardized_asset_edges(voronoi_edges(x_next), mean, std)
    mu, kc, lam = milstein_coefficients(params, t, y_grid, h)
    y_edges = voronoi_edges(y_next, y_support_left)
    zA, zB = vol_band_edges(y_edges, mu, kc, lam)
    if factorized is None:
        factorized = rho == 0.0
    if factorized:
        Fx = np.diff(dist.normal_cdf(a), axis=2)                         # (n1, n2, m1)
        Fy = (np.diff(dist.normal_cdf(zA), axis=1)
              - np.diff(dist.normal_cdf(zB), axis=1))                    # (n2, m2)
        return Fx[:, :, :, None] * Fy[None, :, None, :]
    if abs(rho) >= 1.0:
        raise ValueError("|rho| = 1 makes the joint Gaussian degenerate; use |rho| < 1")
    out = np.empty((x_grid.size, y_grid.size, x_next.size, y_next.size))
    _joint_transitions_kernel(np.ascontiguousarray(a), np.ascontiguousarray(zA),
                              np.ascontiguousarray(zB), float(rho), out)
    return out


def layer_transition(params: HestonParams, t: float, h: float, x_grid, y_grid,
                     x_next, y_next) -> np.ndarray:
    """:func:`joint_transitions` with the vol support taken from the Milstein image."""
    mu, _, _ = milstein_coefficients(params, t, y_grid, h)
    return joint_transitions(params, t, h, x_grid, y_grid, x_next, y_next, float(np.min(mu)))


def build_tree(params: HestonParams, T: float, n: int, N1, N2, *, solver: str = "newton",
               tol: float = 1e-10, store_transitions: bool = True,
               check_positivity: bool = True, progress=None) -> QuantTree:
    """Build the hybrid product recursive quantization tree on ``t_k = k T / n``.

    ``N1`` and ``N2`` are grid sizes, constant or per date (``n + 1`` entries);
    the asset layer at date 0 is always the single point ``log s0``.
    ``solver`` picks the quantizer fixed-point method per layer
    (``"newton"``, ``"anderson"`` or plain ``"lloyd"``).
    """
    if not params.stationary:
        raise ValueError("the tree is built for the Stationary model (v0=None)")
    if n < 1:
        raise ValueError("n must be >= 1")
    if check_positivity:
        check_scheme_positivity(params)
    N1s = _schedule(N1, n, "N1")
    N2s = _schedule(N2, n, "N2")
    start = time.perf_counter()
    h = T / n
    times = np.linspace(0.0, T, n + 1)
    tree = QuantTree(params, T, n, times, solver=solver)

    q0: Quantizer1D = stationary_vol_quantizer(params.theta, params.kappa, params.xi, N2s[0],
                                               method="newton")
    y = q0.grid
    py = q0.weights / q0.weights.sum()
    x = np.array([math.log(params.s0)])
    joint = py[None, :].copy()
    tree.vol_grids.append(y)
    tree.vol_weights.append(py)
    tree.asset_grids.append(x)
    tree.joint_weights.append(joint)

    for k in range(n):
        t = times[k]
        try:
            y_next, py_next, P = build_vol_layer(params, t, h, y, py, N2s[k + 1], solver, tol)
        except Exception as exc:  # noqa: BLE001 - rewrapped with location
            raise TreeBuildError(k, "volatility", exc) from exc
        try:
            x_next = build_asset_layer(params, t, h, x, y, joint, N1s[k + 1], solver, tol)
        except Exception as exc:  # noqa: BLE001
            raise TreeBuildError(k, "asset", exc) from exc
        pi = layer_transition(params, t, h, x, y, x_next, y_next)
        joint_next = np.einsum("ab,abcd->cd", joint, pi)
        tree.vol_transitions.append(P)
        if store_transitions:
            tree.transitions.append(pi)
        x, y, py, joint = x_next, y_next, py_next, joint_next
        tree.vol_grids.append(y)
        tree.vol_weights.append(py)
        tree.asset_grids.append(x)
        tree.joint_weights.append(joint)
        if progress is not None:
            progress(k + 1, n)
    tree.build_seconds = time.perf_counter() - start
    return tree
