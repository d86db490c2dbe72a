"""Euler-discretized mean-reverting chain with state-dependent noise.

    X_{n+1} = X_n + lam (mean - X_n) dt + sig |X_n|^gamma dW_n,

dW_n ~ N(0, dt), parameters theta = (sig, lam, mean) with sig > 0; the noise
exponent gamma >= 0 is a fixed model constant.  The path log-likelihood is
linear in the eight statistics

    Z0 = N,                       Z1 = sum x_i^2 / r_i,
    Z2 = sum x_i / r_i,           Z3 = sum x_{i-1} x_i / r_i,
    Z4 = sum 1 / r_i,             Z5 = sum x_{i-1} / r_i,
    Z6 = sum x_{i-1}^2 / r_i,     Z7 = sum log |x_{i-1}|,

with r_i = |x_{i-1}|^{2 gamma}, and the maximizer of the quadratic form has
closed-form components (implemented below).  For gamma >= 1/2 the fractional
statistics are not integrable against the bridge laws used by the E-step, so
the statistic construction refuses those exponents.

The reverse chain mirrors the drift and diffusion at the current state; its
weight factor is the exact density ratio

    psi(y, z) = |y/z|^gamma * exp(-(A - B) / (2 sig^2 dt)),
    A = (y - z - lam (mean - z) dt)^2 / |z|^{2 gamma},
    B = (z - y + lam (mean - y) dt)^2 / |y|^{2 gamma},

which is singular at z = 0 when gamma > 0 — the sampler resamples a zero
next-state up to 100 times before giving up.
"""

from __future__ import annotations

import numpy as np

from ..chain import ChainModel
from ..em import SuffStatModel
from ..errors import (MStepFailureError, NonIntegrableStatisticError,
                      WeightSingularityError)
from ..reverse import ReverseChainSpec

_LOG_2PI = float(np.log(2.0 * np.pi))
_MAX_RESAMPLE = 100


def _unpack(theta):
    theta = np.atleast_1d(theta)
    return float(theta[0]), float(theta[1]), float(theta[2])


def make_model(dt: float, gamma: float) -> ChainModel:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    sqdt = np.sqrt(dt)

    def step_sampler(k, theta, x, rng):
        sig, lam, mean = _unpack(theta)
        vol = sig * np.abs(x) ** gamma
        return x + lam * (mean - x) * dt + sqdt * vol * rng.standard_normal(x.shape)

    def step_logdensity(k, theta, x, y):
        sig, lam, mean = _unpack(theta)
        r = np.abs(x[:, 0]) ** (2.0 * gamma)
        resid = y[:, 0] - x[:, 0] - lam * (mean - x[:, 0]) * dt
        with np.errstate(divide="ignore"):
            return (-0.5 * (_LOG_2PI + np.log(dt * sig * sig * r))
                    - 0.5 * resid ** 2 / (sig * sig * dt * r))

    def admissible(theta):
        return _unpack(theta)[0] > 0.0

    def reverse_factory(theta, horizon):
        return make_reverse(dt, gamma, theta, horizon)

    return ChainModel(name="cir", dim=1, param_dim=3,
                      step_sampler=step_sampler,
                      step_logdensity=step_logdensity,
                      admissible=admissible,
                      reverse_factory=reverse_factory)


def make_reverse(dt: float, gamma: float, theta, horizon: int) -> ReverseChainSpec:
    sig, lam, mean = _unpack(theta)
    if sig <= 0:
        raise ValueError("sig must be positive")
    sqdt = np.sqrt(dt)

    def rev_sampler(m, y, rng):
        z = y - lam * (mean - y) * dt + sqdt * sig * np.abs(y) ** gamma \
            * rng.standard_normal(y.shape)
        if gamma > 0:
            for _ in range(_MAX_RESAMPLE):
                hit = z == 0.0
                if not hit.any():
                    return z
                z = np.where(
                    hit,
                    y - lam * (mean - y) * dt + sqdt * sig * np.abs(y) ** gamma
                    * rng.standard_normal(y.shape),
                    z)
            raise WeightSingularityError(
                "reverse sampler kept drawing the singular state 0", step=m)
        return z

    def log_weight(m, y, z):
        yy, zz = y[:, 0], z[:, 0]
        ry = np.abs(yy) ** (2.0 * gamma)
        rz = np.abs(zz) ** (2.0 * gamma)
        fwd = (yy - zz - lam * (mean - zz) * dt) ** 2
        bwd = (zz - yy + lam * (mean - yy) * dt) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            out = gamma * (np.log(np.abs(yy)) - np.log(np.abs(zz))) \
                - (fwd / rz - bwd / ry) / (2.0 * sig * sig * dt)
        return out

    return ReverseChainSpec(horizon=horizon, dim=1,
                            step_sampler=rev_sampler, log_weight=log_weight)


def make_suffstats(dt: float, gamma: float) -> SuffStatModel:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if gamma >= 0.5:
        raise NonIntegrableStatisticError(
            f"gamma = {gamma:g}: the fractional-moment statistics are not "
            f"integrable for gamma >= 1/2; EM fitting is unavailable")

    def psi(theta):
        sig, lam, mean = _unpack(theta)
        s2 = sig * sig
        one = 1.0 - lam * dt
        return np.array([
            -np.log(sig) - 0.5 * (_LOG_2PI + np.log(dt)),
            -0.5 / (s2 * dt),
            lam * mean / s2,
            one / (s2 * dt),
            -0.5 * lam * lam * mean * mean * dt / s2,
            -lam * mean * one / s2,
            -0.5 * one * one / (s2 * dt),
            -gamma,
        ])

    def gap_stats(a, b, interior):
        n = interior.shape[0]
        a = np.broadcast_to(np.asarray(a, dtype=float).reshape(-1, 1, 1),
                            (n, 1, 1))
        b = np.broadcast_to(np.asarray(b, dtype=float).reshape(-1, 1, 1),
                            (n, 1, 1))
        seq = np.concatenate([a, interior, b], axis=1)[:, :, 0]  # (n, G+1)
        prev, cur = seq[:, :-1], seq[:, 1:]
        absprev = np.abs(prev)
        with np.errstate(divide="ignore"):
            inv_r = absprev ** (-2.0 * gamma)
            log_abs = np.log(absprev)
        out = np.empty((n, 8))
        out[:, 0] = prev.shape[1]
        out[:, 1] = (cur * cur * inv_r).sum(axis=1)
        out[:, 2] = (cur * inv_r).sum(axis=1)
        out[:, 3] = (prev * cur * inv_r).sum(axis=1)
        out[:, 4] = inv_r.sum(axis=1)
        out[:, 5] = (prev * inv_r).sum(axis=1)
        out[:, 6] = (prev * prev * inv_r).sum(axis=1)
        out[:, 7] = log_abs.sum(axis=1)
        return out

    def m_step(z):
        z0, z1, z2, z3, z4, z5, z6 = z[0], z[1], z[2], z[3], z[4], z[5], z[6]
        denom = z5 * z5 - z4 * z6
        lam_num = z3 * z4 - z2 * z5 + z5 * z5 - z4 * z6
        if denom == 0.0 or lam_num == 0.0 or not z0 > 0:
            raise MStepFailureError(
                f"cir: degenerate maximizer denominators "
                f"(z5^2 - z4 z6 = {denom:g}, lam numerator = {lam_num:g})")
        lam = lam_num / (dt * denom)
        mean = (z3 * z5 - z2 * z6) / lam_num
        s2 = (z3 * z3 * z4 - 2.0 * z2 * z3 * z5 + z1 * z5 * z5
              + z2 * z2 * z6 - z1 * z4 * z6) / (dt * z0 * denom)
        if not (np.isfinite(s2) and s2 > 0):
            raise MStepFailureError(
                f"cir: nonpositive variance maximizer sig^2 = {s2:g}")
        return np.array([np.sqrt(s2), lam, mean])

    return SuffStatModel(name="cir", param_dim=3, stat_dim=8,
                         phi=lambda theta: 0.0, psi=psi,
                         gap_stats=gap_stats, m_step=m_step)
