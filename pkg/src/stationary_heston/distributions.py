"""Distribution functions driving the quadrature and transition computations.

Every law exposes a vectorised ``cdf`` and ``partial_moment`` (the first
partial moment ``K(x) = E[X 1{X <= x}]``), which is all Lloyd's method needs.
Law parameters may be numpy arrays; a law with array parameters of shape
``(M,)`` is a *batch* of ``M`` laws and evaluating it at ``x[..., None]``
broadcasts to ``(..., M)``.  :class:`MixtureLaw` uses this to evaluate the
hundreds of normal components of an asset layer in a single call.

Infinite integration bounds are plain IEEE infinities (``math.inf``), which
every function here accepts and handles explicitly before any arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import special

from .errors import InvalidRectangle

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)
INV_SQRT2PI = 1.0 / SQRT2PI


# ---------------------------------------------------------------------------
# Standard normal
# ---------------------------------------------------------------------------

def normal_cdf(x):
    """Standard normal CDF ``F_Z``."""
    return special.ndtr(x)


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) * INV_SQRT2PI


def normal_partial_moment(x):
    """``K_Z(x) = E[Z 1{Z <= x}] = -phi(x)``."""
    return -normal_pdf(x)


def _normal_partial_moment2(x):
    # E[Z^2 1{Z <= x}] = F(x) - x phi(x); the product is 0 at +-inf
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore"):
        t = np.where(np.isfinite(x), x * normal_pdf(x), 0.0)
    return normal_cdf(x) - t


# ---------------------------------------------------------------------------
# Laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalLaw:
    """``N(mu, sigma^2)``; ``sigma == 0`` is the point mass at ``mu``."""

    mu: float | np.ndarray = 0.0
    sigma: float | np.ndarray = 1.0

    support_left = -math.inf

    def _z(self, x):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (x - mu) / sigma
        # point masses: put the whole mass at mu (right-continuous CDF)
        z = np.where(sigma > 0.0, z, np.where(x >= mu, math.inf, -math.inf))
        return z, mu, sigma

    def cdf(self, x):
        z, _, _ = self._z(x)
        return normal_cdf(z)

    def partial_moment(self, x):
        z, mu, sigma = self._z(x)
        return mu * normal_cdf(z) + sigma * normal_partial_moment(z)

    def partial_moment2(self, x):
        z, mu, sigma = self._z(x)
        return (mu * mu * normal_cdf(z) + 2.0 * mu * sigma * normal_partial_moment(z)
                + sigma * sigma * _normal_partial_moment2(z))

    def pdf(self, x):
        z, _, sigma = self._z(x)
        return normal_pdf(z) / sigma

    def ppf(self, level):
        return self.mu + self.sigma * special.ndtri(level)

    def mean(self):
        return self.mu

    def variance(self):
        return np.square(self.sigma)


@dataclass(frozen=True)
class GammaLaw:
    """Gamma law with shape ``alpha`` and rate ``beta``."""

    alpha: float
    beta: float = 1.0

    support_left = 0.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"GammaLaw needs alpha, beta > 0, got {self.alpha}, {self.beta}")

    def cdf(self, x):
        return gamma_cdf(self, x)

    def partial_moment(self, x):
        return gamma_partial_moment(self, x)

    def partial_moment2(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        a, b = self.alpha, self.beta
        return a * (a + 1.0) / (b * b) * special.gammainc(a + 2.0, b * x)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.alpha, self.beta
        with np.errstate(divide="ignore", invalid="ignore"):
            logp = a * math.log(b) + (a - 1.0) * np.log(x) - b * x - math.lgamma(a)
        return np.where(x > 0, np.exp(logp), 0.0)

    def ppf(self, level):
        return special.gammaincinv(self.alpha, level) / self.beta

    def mean(self):
        return self.alpha / self.beta

    def variance(self):
        return self.alpha / self.beta**2


@dataclass(frozen=True)
class NoncentralSquareLaw:
    """Law of ``U = mu + kappa (Z + lam)^2`` with ``Z`` standard normal."""

    mu: float | np.ndarray
    kappa: float | np.ndarray
    lam: float | np.ndarray = 0.0

    @property
    def support_left(self):
        return float(np.min(self.mu))

    def cdf(self, x):
        return ncs_cdf(self, x)

    def partial_moment(self, x):
        return ncs_partial_moment(self, x)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        mu, kappa, lam = (np.asarray(p, dtype=float) for p in (self.mu, self.kappa, self.lam))
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.sqrt((x - mu) / kappa)
            dens = (normal_pdf(s - lam) + normal_pdf(-s - lam)) / (2.0 * kappa * s)
        return np.where(x > mu, dens, 0.0)

    def mean(self):
        return self.mu + self.kappa * (np.square(self.lam) + 1.0)


@dataclass(frozen=True)
class UniformLaw:
    low: float = 0.0
    high: float = 1.0

    @property
    def support_left(self):
        return self.low

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.clip((x - self.low) / (self.high - self.low), 0.0, 1.0)

    def partial_moment(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.low, self.high)
        return (x * x - self.low**2) / (2.0 * (self.high - self.low))

    def partial_moment2(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.low, self.high)
        return (x**3 - self.low**3) / (3.0 * (self.high - self.low))

    def mean(self):
        return 0.5 * (self.low + self.high)


@dataclass(frozen=True)
class PointMassLaw:
    at: float = 0.0

    @property
    def support_left(self):
        return self.at

    def cdf(self, x):
        return (np.asarray(x, dtype=float) >= self.at).astype(float)

    def partial_moment(self, x):
        return self.at * self.cdf(x)

    def partial_moment2(self, x):
        return self.at**2 * self.cdf(x)

    def mean(self):
        return self.at


class MixtureLaw:
    """Finite mixture ``sum_i w_i L_i``.

    ``components`` is either a sequence of scalar laws or one batched law whose
    parameters are arrays of the same length as ``weights``.
    """

    def __init__(self, weights, components):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        self.weights = w
        self.components = components
        self._batched = not isinstance(components, (list, tuple))
        if not self._batched and len(components) != len(w):
            raise ValueError("one weight per component required")

    @property
    def support_left(self):
        if self._batched:
            return self.components.support_left
        return min(c.support_left for c in self.components)

    def _combine(self, method, x):
        x = np.asarray(x, dtype=float)
        if self._batched:
            vals = getattr(self.components, method)(x[..., None])
            return vals @ self.weights
        out = np.zeros(x.shape)
        for wi, c in zip(self.weights, self.components):
            out = out + wi * getattr(c, method)(x)
        return out

    def cdf(self, x):
        return self._combine("cdf", x)

    def partial_moment(self, x):
        return self._combine("partial_moment", x)

    def pdf(self, x):
        return self._combine("pdf", x)

    def mean(self):
        if self._batched:
            return float(np.broadcast_to(self.components.mean(), self.weights.shape) @ self.weights)
        return float(sum(wi * c.mean() for wi, c in zip(self.weights, self.components)))


# ---------------------------------------------------------------------------
# Gamma
# ---------------------------------------------------------------------------

def gamma_cdf(law: GammaLaw, x):
    """Regularised lower incomplete gamma ``P(alpha, beta x)``; 0 for ``x <= 0``."""
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return special.gammainc(law.alpha, law.beta * x)


def gamma_partial_moment(law: GammaLaw, x):
    """``E[X 1{X <= x}]`` for ``X ~ Gamma(alpha, beta)``.

    Uses ``alpha F(x) - x^alpha e^{-x} / Gamma(alpha) = alpha P(alpha + 1, x)``
    (unit rate), which avoids the cancellation of the difference form near 0.
    """
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return law.alpha / law.beta * special.gammainc(law.alpha + 1.0, law.beta * x)


# ---------------------------------------------------------------------------
# Noncentral square U = mu + kappa (Z + lam)^2
# ---------------------------------------------------------------------------

def _ncs_roots(law: NoncentralSquareLaw, x):
    mu = np.asarray(law.mu, dtype=float)
    kappa = np.asarray(law.kappa, dtype=float)
    lam = np.asarray(law.lam, dtype=float)
    x = np.asarray(x, dtype=float)
    inside = x > mu
    with np.errstate(invalid="ignore"):
        s = np.sqrt(np.where(inside, (x - mu) / kappa, 0.0))
    return inside, s - lam, -s - lam, mu, kappa, lam


def ncs_cdf(law: NoncentralSquareLaw, x):
    inside, xp, xm, *_ = _ncs_roots(law, x)
    # F(x+) - F(x-) written through the upper tail when both sit right of 0
    val = np.where(xm > 0, special.ndtr(-xm) - special.ndtr(-xp),
                   special.ndtr(xp) - special.ndtr(xm))
    return np.where(inside, val, 0.0)


def ncs_partial_moment(law: NoncentralSquareLaw, x):
    inside, xp, xm, mu, kappa, lam = _ncs_roots(law, x)
    F = np.where(inside, ncs_cdf(law, x), 0.0)
    with np.errstate(invalid="ignore"):
        tail = (np.where(np.isfinite(xm), xm * normal_pdf(xp), 0.0)
                - np.where(np.isfinite(xp), xp * normal_pdf(xm), 0.0))
    val = F * (mu + kappa * (lam * lam + 1.0)) + kappa * tail
    return np.where(inside, val, 0.0)


# ---------------------------------------------------------------------------
# Bivariate normal (Drezner-Wesolowsky / Genz)
# ---------------------------------------------------------------------------

def _gl_half(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 1.0 + x, w


_GL6 = _gl_half(6)
_GL12 = _gl_half(12)
_GL20 = _gl_half(20)
_X6, _W6 = _GL6
_X12, _W12 = _GL12
_X20, _W20 = _GL20


@numba.njit(cache=True)
def _phi(x):
    return 0.5 * math.erfc(-x / SQRT2)


@numba.njit(cache=True)
def _bvn_upper(dh, dk, r):
    """``P(X > dh, Y > dk)`` for a standard bivariate normal with correlation r.

    Genz's refinement of the Drezner-Wesolowsky method: Gauss-Legendre
    quadrature of the Plackett integral for |r| < 0.925 and of the
    asymptotic-corrected form otherwise.  Absolute error is below 1e-15.
    """
    if dh == math.inf or dk == math.inf:
        return 0.0
    if dh == -math.inf:
        if dk == -math.inf:
            return 1.0
        return _phi(-dk)
    if dk == -math.inf:
        return _phi(-dh)
    if r == 0.0:
        return _phi(-dh) * _phi(-dk)
    if r >= 1.0:
        return _phi(-max(dh, dk))
    if r <= -1.0:
        return max(0.0, _phi(-dk) - _phi(dh))

    twopi = 2.0 * math.pi
    h = dh
    k = dk
    hk = h * k
    bvn = 0.0
    ar = abs(r)
    if ar < 0.3:
        xs_, ws_ = _X6, _W6
    elif ar < 0.75:
        xs_, ws_ = _X12, _W12
    else:
        xs_, ws_ = _X20, _W20
    n = xs_.shape[0]

    if ar < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = math.asin(r) / 2.0
        for i in range(n):
            sn = math.sin(asr * xs_[i])
            bvn += ws_[i] * math.exp((sn * hk - hs) / (1.0 - sn * sn))
        bvn = bvn * asr / twopi + _phi(-h) * _phi(-k)
    else:
        if r < 0.0:
            k = -k
            hk = -hk
        as_ = 1.0 - r * r
        a = math.sqrt(as_)
        bs = (h - k) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 80.0
        asr = -(bs / as_ + hk) / 2.0
        if asr > -100.0:
            bvn = a * math.exp(asr) * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0
                                       + c * d * as_ * as_)
        if hk > -100.0:
            b = math.sqrt(bs)
            sp = math.sqrt(twopi) * _phi(-b / a)
            bvn = bvn - math.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0)
        a = a / 2.0
        acc = 0.0
        for i in range(n):
            xs = (a * xs_[i]) ** 2
            asr_i = -(bs / xs + hk) / 2.0
            if asr_i > -100.0:
                sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs)
                rs = math.sqrt(1.0 - xs)
                ep = math.exp(-(hk / 2.0) * xs / (1.0 + rs) ** 2) / rs
                acc += ws_[i] * math.exp(asr_i) * (sp - ep)
        bvn = (a * acc - bvn) / twopi
        if r > 0.0:
            bvn = bvn + _phi(-max(h, k))
        elif h >= k:
            bvn = -bvn
        else:
            if h < 0.0:
                L = _phi(k) - _phi(h)
            else:
                L = _phi(-h) - _phi(-k)
            bvn = L - bvn
    return max(0.0, min(1.0, bvn))


@numba.njit(cache=True)
def _bvn_cdf_scalar(b, d, r):
    return _bvn_upper(-b, -d, r)


@numba.njit(cache=True)
def _rect_scalar(a, b, c, d, r):
    if a >= b or c >= d:
        return 0.0
    p = (_bvn_cdf_scalar(b, d, r) - _bvn_cdf_scalar(b, c, r)
         - _bvn_cdf_scalar(a, d, r) + _bvn_cdf_scalar(a, c, r))
    return min(1.0, max(0.0, p))


@numba.njit(cache=True)
def _bvn_cdf_vec(h, k, r, out):
    for i in range(h.shape[0]):
        out[i] = _bvn_cdf_scalar(h[i], k[i], r)


@numba.njit(cache=True)
def bvn_cdf_grid(xs, ys, r):
    """Matrix ``F_rho(xs[i], ys[j])`` on the Cartesian product of two edge lists."""
    out = np.empty((xs.shape[0], ys.shape[0]))
    for i in range(xs.shape[0]):
        for j in range(ys.shape[0]):
            out[i, j] = _bvn_cdf_scalar(xs[i], ys[j], r)
    return out


def bivariate_normal_cdf(x, y, rho):
    """``P(X <= x, Y <= y)`` for unit-variance normals with correlation ``rho``."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    out = np.empty(x.size)
    _bvn_cdf_vec(np.ascontiguousarray(x).ravel(), np.ascontiguousarray(y).ravel(),
                 float(rho), out)
    return out.reshape(x.shape) if x.ndim else float(out[0])


def bivariate_normal_rectangle(rho, a, b, c, d):
    """``P(a < X <= b, c < Y <= d)``; bounds may be infinite.

    ``|rho| >= 1`` is handled exactly as the degenerate law ``Y = sign(rho) X``.
    """
    if a > b or c > d:
        raise InvalidRectangle(f"empty-orientation rectangle [{a}, {b}] x [{c}, {d}]")
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation {rho} outside [-1, 1]")
    if abs(rho) >= 1.0:
        return _degenerate_rectangle(rho, a, b, c, d)
    return float(_rect_scalar(float(a), float(b), float(c), float(d), float(rho)))


def _degenerate_rectangle(rho, a, b, c, d):
    if rho > 0:
        lo, hi = max(a, c), min(b, d)
    else:
        # Y = -X: c < -X <= d  <=>  -d <= X < -c
        lo, hi = max(a, -d), min(b, -c)
    if lo >= hi:
        return 0.0
    return float(normal_cdf(hi) - normal_cdf(lo))
