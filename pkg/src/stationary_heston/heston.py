"""Semi-closed-form European pricing in the Standard and Stationary Heston models.

The Stationary model draws the initial variance from the CIR invariant law
``Gamma(alpha, beta)`` with ``beta = 2 kappa / xi^2`` and ``alpha = theta beta``.
Its European price is the Standard-model price ``f(v)`` averaged over that law,
computed either with an optimal quantizer of the Gamma law or with generalized
Gauss-Laguerre quadrature.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import integrate, linalg, optimize, special

from .errors import IntegrationFailure, NodeComputationFailure, OutOfBounds
from .quantization import stationary_vol_quantizer


class OptionKind(str, enum.Enum):
    CALL = "call"
    PUT = "put"


@dataclass(frozen=True)
class HestonParams:
    """Heston parameters; ``v0=None`` selects the Stationary model."""

    s0: float
    r: float
    q: float
    theta: float
    kappa: float
    xi: float
    rho: float
    v0: float | None = None

    def __post_init__(self):
        if not self.s0 > 0:
            raise ValueError("s0 must be positive")
        if not (self.theta > 0 and self.kappa > 0 and self.xi > 0):
            raise ValueError("theta, kappa and xi must be positive")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        if self.v0 is not None and self.v0 < 0:
            raise ValueError("v0 must be nonnegative")

    @property
    def stationary(self) -> bool:
        return self.v0 is None

    def feller_ratio(self) -> float:
        """``xi^2 / (2 kappa theta)``; the Feller condition is a ratio <= 1."""
        return self.xi**2 / (2.0 * self.kappa * self.theta)

    def gamma_params(self) -> tuple[float, float]:
        beta = 2.0 * self.kappa / self.xi**2
        return self.theta * beta, beta

    def with_v0(self, v0: float | None) -> "HestonParams":
        return replace(self, v0=v0)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class EuroOption:
    strike: float
    maturity: float
    kind: OptionKind = OptionKind.CALL

    def __post_init__(self):
        if not (self.strike > 0 and self.maturity > 0):
            raise ValueError("strike and maturity must be positive")
        object.__setattr__(self, "kind", OptionKind(self.kind))


# ---------------------------------------------------------------------------
# Characteristic function
# ---------------------------------------------------------------------------

def _log1p(z):
    """Complex ``log(1 + z)`` accurate for tiny ``z`` (Kahan's trick)."""
    w = 1.0 + z
    dw = w - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(w) * z / dw
    return np.where(dw == 0, z, out)


def _cf_exponents(p: HestonParams, u, T):
    """``(A, D)`` with ``psi(u) = exp(A(u) + v D(u))`` in the little-trap form."""
    u = np.asarray(u, dtype=complex)
    iu = 1j * u
    a = p.kappa - p.rho * p.xi * iu
    xi2 = p.xi**2
    d = np.sqrt(a * a + xi2 * (iu + u * u))
    # (a - d) / xi^2 without cancellation for small xi
    m = -(iu + u * u) / (a + d)
    g = xi2 * m / (a + d)
    e = np.exp(-d * T)
    logs = _log1p(g * (1.0 - e) / (1.0 - g))
    A = (iu * (math.log(p.s0) + (p.r - p.q) * T)
         + p.theta * p.kappa * (m * T - 2.0 * logs / xi2))
    D = m * (1.0 - e) / (1.0 - g * e)
    return A, D


def char_fn(params: HestonParams, u, T: float, v: float | None = None):
    """Characteristic function of ``log S_T`` given initial variance ``v``."""
    v = params.v0 if v is None else v
    if v is None:
        raise ValueError("char_fn needs a deterministic initial variance")
    A, D = _cf_exponents(params, u, T)
    out = np.exp(A + v * D)
    return complex(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Fourier prices
# ---------------------------------------------------------------------------

def _parity_put(call, s0, K, T, r, q):
    return call - s0 * math.exp(-q * T) + K * math.exp(-r * T)


def call_price_fourier(params: HestonParams, opt: EuroOption, v: float | None = None,
                       tail_tol: float = 1e-12, u_max: float = 2000.0) -> float:
    """Standard-model price by adaptive Gauss-Kronrod integration of the Gil-Pelaez form.

    The truncation point ``U`` is doubled from 50 until the integrand envelope
    drops below ``tail_tol`` or ``u_max`` is reached; any remaining tail is
    integrated on ``[U, inf)``.  Puts come from put-call parity.
    """
    v = params.v0 if v is None else v
    if v is None:
        raise ValueError("deterministic v required")
    K, T = opt.strike, opt.maturity
    lk = math.log(K)
    disc = math.exp(-params.r * T)

    def integrand(u):
        psi1 = char_fn(params, u - 1j, T, v)
        psi2 = char_fn(params, u, T, v)
        return (np.exp(-1j * u * lk) * (psi1 - K * psi2) / (1j * u)).real

    def envelope(u):
        return (abs(char_fn(params, u - 1j, T, v)) + K * abs(char_fn(params, u, T, v))) / u

    U = 50.0
    while envelope(U) > tail_tol and U < u_max:
        U *= 2.0
    U = min(U, u_max)
    val, err, info = _quad(integrand, 0.0, U)
    total, total_err = val, err
    if envelope(U) > tail_tol:
        val, err, _ = _quad(integrand, U, np.inf)
        total += val
        total_err += err
    if total_err > 1e-8 * max(1.0, K):
        raise IntegrationFailure(f"Fourier integral error estimate {total_err:.2e}")
    call = 0.5 * (params.s0 * math.exp(-params.q * T) - K * disc) + disc * total / math.pi
    if opt.kind is OptionKind.PUT:
        return _parity_put(call, params.s0, K, T, params.r, params.q)
    return call


def _quad(f, a, b):
    res = integrate.quad(f, a, b, limit=2000, epsabs=1e-13, epsrel=1e-12, full_output=1)
    val, err = res[0], res[1]
    return val, err, res[2] if len(res) > 2 else {}


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _strip_prices(log_psi, params: HestonParams, strikes, T: float, kinds, rows: int,
                  panel: float, tail_tol: float, u_cap: float) -> np.ndarray:
    """Gil-Pelaez prices for ``rows`` characteristic functions sharing one strip of strikes.

    ``log_psi(u)`` returns the log-characteristic function as an array of shape
    ``(rows, len(u))``.  Composite 24-point Gauss-Legendre panels are appended,
    sixteen at a time, until the integrand envelope of the newest panel is
    below ``tail_tol``.
    """
    K = np.atleast_1d(np.asarray(strikes, dtype=float))
    if kinds is None:
        kinds = [OptionKind.CALL] * K.size
    kinds = [OptionKind(k) for k in kinds]
    lk = np.log(K)
    acc = np.zeros((rows, K.size))
    half = 0.5 * panel
    lo = 0.0
    kmax = float(K.max())
    chunk = 16
    # panels are evaluated in chunks; extra panels past the cut only add accuracy
    offsets = (np.arange(chunk)[:, None] * panel + half * (_GL_NODES + 1.0)[None, :]).ravel()
    w = np.tile(half * _GL_WEIGHTS, chunk)
    while True:
        u = lo + offsets
        psi1 = np.exp(log_psi(u - 1j))
        psi2 = np.exp(log_psi(u))
        phase = np.exp(-1j * np.outer(lk, u)) / (1j * u)  # (nK, nu)
        # sum_u w * Re[phase * (psi1 - K psi2)]
        t1 = (psi1 * w) @ phase.T
        t2 = (psi2 * w) @ phase.T
        acc += (t1 - K[None, :] * t2).real
        tail = slice(-_GL_NODES.size, None)
        env = np.max((np.abs(psi1[:, tail]) + kmax * np.abs(psi2[:, tail])) / u[None, tail])
        lo += chunk * panel
        if not np.isfinite(env):
            raise IntegrationFailure("non-finite characteristic function")
        if env < tail_tol:
            break
        if lo > u_cap:
            raise IntegrationFailure(f"Fourier integrand not decayed by u={u_cap:g}")
    disc = math.exp(-params.r * T)
    fwd = params.s0 * math.exp(-params.q * T)
    call = 0.5 * (fwd - K[None, :] * disc) + disc * acc / math.pi
    put_cols = np.array([k is OptionKind.PUT for k in kinds])
    out = call.copy()
    out[:, put_cols] = call[:, put_cols] - fwd + K[put_cols] * disc
    return out


def fourier_prices(params: HestonParams, v_nodes, strikes, T: float, kinds=None,
                   panel: float = 10.0, tail_tol: float = 1e-14,
                   u_cap: float = 1e6) -> np.ndarray:
    """Standard-model prices for every (initial variance, strike) pair.

    Returns an array of shape ``(len(v_nodes), len(strikes))``.  Uses the
    separable form ``psi(u; v) = exp(A(u) + v D(u))``: the exponents are computed
    once per panel and shared by all nodes and strikes.
    """
    v = np.atleast_1d(np.asarray(v_nodes, dtype=float))

    def log_psi(u):
        A, D = _cf_exponents(params, u, T)
        return A[None, :] + v[:, None] * D[None, :]

    return _strip_prices(log_psi, params, strikes, T, kinds, v.size, panel, tail_tol, u_cap)


def stationary_char_fn(params: HestonParams, u, T: float):
    """Characteristic function of ``log S_T`` with ``v0 ~ Gamma(alpha, beta)``.

    Averaging ``exp(A + v D)`` over the Gamma law gives
    ``exp(A) (1 - D / beta)^(-alpha)``; ``Re D <= 0`` on the integration
    contours keeps the principal logarithm continuous.
    """
    alpha, beta = params.gamma_params()
    A, D = _cf_exponents(params, u, T)
    out = np.exp(A - alpha * _log1p(-D / beta))
    return complex(out) if np.ndim(out) == 0 else out


def stationary_prices_closed_form(params: HestonParams, strikes, T: float, kinds=None,
                                  panel: float = 10.0, tail_tol: float = 1e-14,
                                  u_cap: float = 1e6) -> np.ndarray:
    """Stationary-model prices from the Gamma-averaged characteristic function."""
    alpha, beta = params.gamma_params()

    def log_psi(u):
        A, D = _cf_exponents(params, u, T)
        return (A - alpha * _log1p(-D / beta))[None, :]

    return _strip_prices(log_psi, params, strikes, T, kinds, 1, panel, tail_tol, u_cap)[0]


def price_standard(params: HestonParams, opt: EuroOption) -> float:
    """Standard-model price via the batched Fourier route."""
    return float(fourier_prices(params, [params.v0], [opt.strike], opt.maturity,
                                [opt.kind])[0, 0])


# ---------------------------------------------------------------------------
# Stationary model
# ---------------------------------------------------------------------------

def generalized_laguerre(n: int, a: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and normalised weights of Gauss quadrature for ``x^a e^{-x} / Gamma(a+1)``.

    Golub-Welsch: eigenvalues of the symmetric tridiagonal Jacobi matrix of the
    generalized Laguerre polynomials, weights from the first eigenvector
    components.  The weights sum to 1.
    """
    if n < 1 or a <= -1:
        raise NodeComputationFailure(f"invalid Laguerre order n={n}, a={a}")
    i = np.arange(n, dtype=float)
    diag = 2.0 * i + a + 1.0
    off = np.sqrt(i[1:] * (i[1:] + a))
    try:
        nodes, vecs = linalg.eigh_tridiagonal(diag, off)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NodeComputationFailure(str(exc)) from exc
    weights = vecs[0, :] ** 2
    if not (np.all(np.isfinite(nodes)) and np.all(nodes > 0)):
        raise NodeComputationFailure("non-positive or non-finite Laguerre node")
    return nodes, weights / weights.sum()


def laguerre_rule(params: HestonParams, n: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Variance nodes and probability weights integrating against ``Gamma(alpha, beta)``."""
    alpha, beta = params.gamma_params()
    x, w = generalized_laguerre(n, alpha - 1.0)
    return x / beta, w


def stationary_price_laguerre(params: HestonParams, opt: EuroOption, n: int = 64) -> float:
    nodes, weights = laguerre_rule(params, n)
    f = fourier_prices(params, nodes, [opt.strike], opt.maturity, [opt.kind])[:, 0]
    return float(weights @ f)


def stationary_price_quantized(params: HestonParams, opt: EuroOption, N: int = 200,
                               quantizer=None) -> float:
    """``sum_i f(v_i) P(v_hat = v_i)`` over an optimal ``N``-quantizer of the invariant law."""
    q = quantizer or stationary_vol_quantizer(params.theta, params.kappa, params.xi, N)
    f = fourier_prices(params, q.grid, [opt.strike], opt.maturity, [opt.kind])[:, 0]
    return float(q.weights @ f)


def stationary_prices(params: HestonParams, strikes, T: float, kinds=None,
                      method: str = "laguerre", n: int = 64) -> np.ndarray:
    """Stationary-model prices for a strip of strikes sharing one maturity.

    ``method`` is ``"laguerre"`` (``n``-point generalized Gauss-Laguerre),
    ``"quantization"`` (optimal ``n``-quantizer of the Gamma law) or
    ``"closed-form"`` (Gamma-averaged characteristic function).
    """
    if method == "closed-form":
        return stationary_prices_closed_form(params, strikes, T, kinds)
    if method == "laguerre":
        nodes, weights = laguerre_rule(params, n)
    elif method == "quantization":
        q = stationary_vol_quantizer(params.theta, params.kappa, params.xi, n)
        nodes, weights = q.grid, q.weights
    else:
        raise ValueError(f"unknown quadrature {method!r}")
    return weights @ fourier_prices(params, nodes, strikes, T, kinds)


def model_prices(params: HestonParams, strikes, T: float, kinds=None, n: int = 64,
                 method: str = "laguerre"):
    """Prices under whichever model ``params`` describes."""
    if params.stationary:
        return stationary_prices(params, strikes, T, kinds, method, n)
    return fourier_prices(params, [params.v0], strikes, T, kinds)[0]


# ---------------------------------------------------------------------------
# Black-Scholes
# ---------------------------------------------------------------------------

def bs_price(s0, K, T, r, q, sigma, kind=OptionKind.CALL):
    kind = OptionKind(kind)
    fwd = s0 * math.exp(-q * T)
    disc = K * math.exp(-r * T)
    if sigma <= 0:
        intrinsic = max(fwd - disc, 0.0) if kind is OptionKind.CALL else max(disc - fwd, 0.0)
        return intrinsic
    sq = sigma * math.sqrt(T)
    d1 = (math.log(fwd / disc) + 0.5 * sq * sq) / sq
    d2 = d1 - sq
    if kind is OptionKind.CALL:
        return fwd * special.ndtr(d1) - disc * special.ndtr(d2)
    return disc * special.ndtr(-d2) - fwd * special.ndtr(-d1)


def implied_vol(price, s0, K, T, r, q, kind=OptionKind.CALL, vol_max: float = 5.0) -> float:
    """Black-Scholes implied volatility by Brent's method on ``(0, vol_max]``."""
    kind = OptionKind(kind)
    fwd = s0 * math.exp(-q * T)
    disc = K * math.exp(-r * T)
    lower = max(fwd - disc, 0.0) if kind is OptionKind.CALL else max(disc - fwd, 0.0)
    upper = fwd if kind is OptionKind.CALL else disc
    if not (lower < price < upper) or not math.isfinite(price):
        raise OutOfBounds(f"price {price} outside ({lower}, {upper})")
    if bs_price(s0, K, T, r, q, vol_max, kind) < price:
        raise OutOfBounds(f"price {price} needs a volatility above {vol_max}")

    def f(s):
        return bs_price(s0, K, T, r, q, s, kind) - price

    lo = 1e-8
    while f(lo) > 0 and lo > 1e-300:
        lo *= 1e-3
    return optimize.brentq(f, lo, vol_max, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                           maxiter=500)
