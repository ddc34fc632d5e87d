"""Seeded Monte Carlo on the same hybrid scheme as the quantization tree.

Paths start from ``v0 ~ Gamma(alpha, beta)``; the boosted variance follows the
Milstein step and the log-asset the Euler step, driven by Gaussians with
correlation ``rho``.  Paths are simulated in fixed-size blocks, each with its
own child seed, so results do not depend on how the work is split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exotics import BarrierDirection, BarrierSpec, bridge_down_factor, bridge_up_factor
from .heston import HestonParams, OptionKind
from .tree import check_scheme_positivity, euler_coefficients, milstein_step

BLOCK = 100_000


@dataclass(frozen=True)
class McConfig:
    paths: int = 1_000_000
    steps: int = 180
    seed: int = 2024
    antithetic: bool = False
    block: int = BLOCK

    def __post_init__(self):
        if self.paths < 1 or self.steps < 1 or self.block < 1:
            raise ValueError("paths, steps and block must be >= 1")
        if self.antithetic and self.paths % 2:
            raise ValueError("antithetic sampling needs an even number of paths")


def _block_sizes(cfg: McConfig) -> list[int]:
    block = cfg.block
    if cfg.antithetic:
        # even blocks keep every antithetic pair inside one block
        block = max(2, block - block % 2)
    full, rest = divmod(cfg.paths, block)
    return [block] * full + ([rest] if rest else [])


def _draws(rng: np.random.Generator, m: int, antithetic: bool, sampler):
    if not antithetic:
        return sampler(m)
    half = sampler(m // 2)
    return np.concatenate([half, -half])


def _simulate_block(params: HestonParams, T: float, steps: int, m: int, rng, antithetic: bool,
                    keep_paths: bool = False, barrier: tuple | None = None):
    alpha, beta = params.gamma_params()
    h = T / steps
    if antithetic:
        half = rng.gamma(alpha, 1.0 / beta, m // 2)
        y = np.concatenate([half, half])
    else:
        y = rng.gamma(alpha, 1.0 / beta, m)
    x = np.full(m, math.log(params.s0))
    survive = np.ones(m) if barrier is not None else None
    xs = [x] if keep_paths else None
    ys = [y] if keep_paths else None
    c = math.sqrt(max(0.0, 1.0 - params.rho**2))
    for k in range(steps):
        t = k * h
        z1 = _draws(rng, m, antithetic, rng.standard_normal)
        zp = _draws(rng, m, antithetic, rng.standard_normal)
        z2 = params.rho * z1 + c * zp
        mean, std = euler_coefficients(params, t, x, y, h)
        x_next = mean + std * z1
        if barrier is not None:
            L_log, direction = barrier
            s2 = math.exp(-params.kappa * t) * y
            f = bridge_up_factor if direction is BarrierDirection.UP_OUT else bridge_down_factor
            survive *= f(x, x_next, s2, h, L_log)
        y = milstein_step(t, y, z2, params, h)
        x = x_next
        if keep_paths:
            xs.append(x)
            ys.append(y)
    if keep_paths:
        return np.stack(xs, axis=1), np.stack(ys, axis=1)
    return x, survive


def simulate_paths(params: HestonParams, T: float, cfg: McConfig):
    """Full paths ``(log_asset, boosted_vol)`` of shape ``(paths, steps + 1)``.

    Meant for moderate path counts; the pricers below stream blocks instead.
    """
    if not params.stationary:
        raise ValueError("simulation starts from the invariant law (v0=None)")
    check_scheme_positivity(params)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(_block_sizes(cfg)))
    xs, ys = [], []
    for m, ss in zip(_block_sizes(cfg), seeds):
        x, y = _simulate_block(params, T, cfg.steps, m, np.random.Generator(np.random.PCG64(ss)),
                               cfg.antithetic, keep_paths=True)
        xs.append(x)
        ys.append(y)
    return np.concatenate(xs), np.concatenate(ys)


def _estimate(samples: np.ndarray, antithetic: bool):
    # samples has paths on axis 0; extra axes are independent payoffs
    if antithetic:
        half = samples.shape[0] // 2
        samples = 0.5 * (samples[:half] + samples[half:])
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])
    if np.ndim(mean) == 0:
        return float(mean), float(se)
    return mean, se


def _run(params, T, cfg, payoff, barrier=None) -> tuple[float, float]:
    if not params.stationary:
        raise ValueError("simulation starts from the invariant law (v0=None)")
    check_scheme_positivity(params)
    sizes = _block_sizes(cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(sizes))
    disc = math.exp(-params.r * T)
    firsts, seconds = [], []
    for m, ss in zip(sizes, seeds):
        rng = np.random.Generator(np.random.PCG64(ss))
        x, survive = _simulate_block(params, T, cfg.steps, m, rng, cfg.antithetic, barrier=barrier)
        val = disc * payoff(np.exp(x))
        if survive is not None:
            val = val * survive.reshape(survive.shape + (1,) * (val.ndim - 1))
        if cfg.antithetic:
            firsts.append(val[: m // 2])
            seconds.append(val[m // 2:])
        else:
            firsts.append(val)
    if cfg.antithetic:
        return _estimate(np.concatenate(firsts + seconds), True)
    return _estimate(np.concatenate(firsts), False)


def _vanilla(kind, strike):
    if OptionKind(kind) is OptionKind.CALL:
        return lambda s: np.maximum(s - strike, 0.0)
    return lambda s: np.maximum(strike - s, 0.0)


def mc_european(params: HestonParams, strike: float, T: float, kind=OptionKind.CALL,
                cfg: McConfig = McConfig()) -> tuple[float, float]:
    """``(price, standard_error)`` of a European option under the discretized model."""
    return _run(params, T, cfg, _vanilla(kind, strike))


def mc_barrier(params: HestonParams, spec: BarrierSpec,
               cfg: McConfig = McConfig()) -> tuple[float, float]:
    """Knock-out price with the per-step Brownian-bridge survival weights."""
    barrier = (math.log(spec.barrier), BarrierDirection(spec.direction))
    return _run(params, spec.maturity, cfg, _vanilla(spec.kind, spec.strike), barrier)


def mc_european_strip(params: HestonParams, strikes, T: float, kinds=None,
                      cfg: McConfig = McConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Prices and standard errors of several Europeans from one set of paths."""
    K = np.asarray(strikes, dtype=float)
    kinds = [OptionKind.CALL] * K.size if kinds is None else [OptionKind(k) for k in kinds]
    is_call = np.array([k is OptionKind.CALL for k in kinds])

    def payoff(s):
        diff = s[:, None] - K[None, :]
        return np.where(is_call[None, :], np.maximum(diff, 0.0), np.maximum(-diff, 0.0))

    return _run(params, T, cfg, payoff)
