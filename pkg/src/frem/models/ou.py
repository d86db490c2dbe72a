"""Euler-discretized linear-drift (Ornstein-Uhlenbeck type) chain.

    X_{n+1} = X_n + lam * X_n * dt + dW_n,    dW_n ~ N(0, dt),

one-dimensional, parameter vector theta = (lam,).  Writing a = 1 + lam*dt
(admissibility requires a > 0), the one-step density is N(y; a x, dt) and the
reverse chain has the exact-normalizer form: integrating the density over its
first argument gives the constant 1/a, so

    q(y, .) = N(y / a, dt / a^2),      psi == 1 / a.

The path log-likelihood is linear in four statistics,

    l(lam) = -(N/2) log(2 pi dt) + lam S1 - (lam^2 dt / 2) S2 - S3/(2 dt),

with S1 = sum x_{k-1} (x_k - x_{k-1}), S2 = sum x_{k-1}^2,
S3 = sum (x_k - x_{k-1})^2 and N the step count, so the maximizer is the
regression coefficient lam* = S1 / (dt S2).
"""

from __future__ import annotations

import warnings

import numba
import numpy as np
from scipy import optimize

from ..chain import ChainModel
from ..em import SuffStatModel
from ..errors import MStepFailureError
from ..reverse import ReverseChainSpec

_LOG_2PI = float(np.log(2.0 * np.pi))


def _lam(theta) -> float:
    return float(np.atleast_1d(theta)[0])


def make_model(dt: float) -> ChainModel:
    if dt <= 0:
        raise ValueError("dt must be positive")
    sd = np.sqrt(dt)

    def step_sampler(k, theta, x, rng):
        a = 1.0 + _lam(theta) * dt
        out = rng.standard_normal(x.shape)
        out *= sd
        out += a * x
        return out

    def step_logdensity(k, theta, x, y):
        a = 1.0 + _lam(theta) * dt
        resid = y - a * x
        return (-0.5 * (_LOG_2PI + np.log(dt))
                - 0.5 * (resid[:, 0] ** 2) / dt)

    def admissible(theta):
        return 1.0 + _lam(theta) * dt > 0.0

    def reverse_factory(theta, horizon):
        a = 1.0 + _lam(theta) * dt
        rev_sd = sd / a
        inv_a = 1.0 / a

        def rev_sampler(m, y, rng):
            out = rng.standard_normal(y.shape)
            out *= rev_sd
            out += inv_a * y
            return out

        def log_normalizer(m, y):
            return np.full(y.shape[0], -np.log(a))

        return ReverseChainSpec.from_step_normalizer(
            horizon=horizon, dim=1, step_sampler=rev_sampler,
            log_normalizer=log_normalizer)

    return ChainModel(name="ou", dim=1, param_dim=1,
                      step_sampler=step_sampler,
                      step_logdensity=step_logdensity,
                      admissible=admissible,
                      reverse_factory=reverse_factory)


def _gap_stats(dt):
    def gap_stats(a, b, interior):
        n = interior.shape[0]
        a = np.broadcast_to(np.asarray(a, dtype=float).reshape(-1, 1, 1),
                            (n, 1, 1))
        b = np.broadcast_to(np.asarray(b, dtype=float).reshape(-1, 1, 1),
                            (n, 1, 1))
        seq = np.concatenate([a, interior, b], axis=1)[:, :, 0]  # (n, G+1)
        prev, diff = seq[:, :-1], np.diff(seq, axis=1)
        out = np.empty((n, 4))
        out[:, 0] = seq.shape[1] - 1
        out[:, 1] = (prev * diff).sum(axis=1)
        out[:, 2] = (prev * prev).sum(axis=1)
        out[:, 3] = (diff * diff).sum(axis=1)
        return out
    return gap_stats


@numba.njit(cache=True, nogil=True)
def _fwd_feat_scan(s, a0, out):
    # s (k, n) time-major; consecutive paths share cache lines per row, so
    # the k row streams advance together and every element is read once.
    k, n = s.shape
    for i in range(n):
        x_prev = s[0, i]
        c1 = a0 * (x_prev - a0)
        c2 = a0 * a0
        c3 = (x_prev - a0) * (x_prev - a0)
        for j in range(1, k):
            x = s[j, i]
            d = x - x_prev
            c1 += x_prev * d
            c2 += x_prev * x_prev
            c3 += d * d
            x_prev = x
        out[i, 0] = k
        out[i, 1] = c1
        out[i, 2] = c2
        out[i, 3] = c3
        out[i, 4] = x_prev
        out[i, 5] = x_prev * x_prev


@numba.njit(cache=True, nogil=True)
def _rev_feat_scan(s, b0, out):
    k, n = s.shape
    for i in range(n):
        first = s[0, i]
        x_prev = first
        c1 = 0.0
        c2 = first * first
        c3 = 0.0
        for j in range(1, k):
            x = s[j, i]
            d = x - x_prev
            c1 += x_prev * d
            c2 += x * x
            c3 += d * d
            x_prev = x
        dl = b0 - x_prev
        c1 += x_prev * dl
        c3 += dl * dl
        out[i, 0] = k
        out[i, 1] = c1
        out[i, 2] = c2
        out[i, 3] = c3
        out[i, 4] = first
        out[i, 5] = first * first


def _fwd_features(a, states):
    """Segment statistics from ``a`` through the last row, plus the powers
    of the pairing state needed to reassemble the junction transition.

    The transition out of ``a`` is handled as a scalar edge term so the
    interior rows need no copying.
    """
    s = np.ascontiguousarray(states[:, :, 0])               # (k, n)
    a0 = float(np.asarray(a, dtype=float).reshape(-1)[0])
    out = np.empty((s.shape[1], 6))
    _fwd_feat_scan(s, a0, out)
    return out


def _rev_features(states, b):
    """Segment statistics from the first row through ``b``, plus the powers
    of the first row (the state right after the junction)."""
    s = np.ascontiguousarray(states[:, :, 0])               # (k, n)
    b0 = float(np.asarray(b, dtype=float).reshape(-1)[0])
    out = np.empty((s.shape[1], 6))
    _rev_feat_scan(s, b0, out)
    return out


def _pair_coeffs():
    """Whole-gap statistics as bilinear forms of the augmented features
    [1, count, sum x dx, sum x^2, sum dx^2, s, s^2] on each side (s = the
    pairing-adjacent state: u forward, v reverse).

    The junction transition u -> v contributes [1, u(v-u), u^2, (v-u)^2],
    expanded so every term is a product of one forward and one reverse
    entry.
    """
    coeffs = np.zeros((4, 7, 7))
    coeffs[0, 1, 0] = coeffs[0, 0, 1] = coeffs[0, 0, 0] = 1.0
    coeffs[1, 2, 0] = coeffs[1, 0, 2] = coeffs[1, 5, 5] = 1.0
    coeffs[1, 6, 0] = -1.0
    coeffs[2, 3, 0] = coeffs[2, 0, 3] = coeffs[2, 6, 0] = 1.0
    coeffs[3, 4, 0] = coeffs[3, 0, 4] = coeffs[3, 0, 6] = coeffs[3, 6, 0] = 1.0
    coeffs[3, 5, 5] = -2.0
    return coeffs


def make_suffstats(dt: float) -> SuffStatModel:
    """Statistics [step count, sum x dx, sum x^2, sum dx^2] and their
    likelihood coefficients; closed-form maximizer lam* = z1 / (dt z2)."""
    if dt <= 0:
        raise ValueError("dt must be positive")

    def psi(theta):
        lam = _lam(theta)
        return np.array([-0.5 * (_LOG_2PI + np.log(dt)),
                         lam,
                         -0.5 * lam * lam * dt,
                         -0.5 / dt])

    def m_step(z):
        if not z[2] > 0:
            raise MStepFailureError(
                f"ou: degenerate squares statistic z2 = {z[2]:g}")
        return np.array([z[1] / (dt * z[2])])

    return SuffStatModel(name="ou", param_dim=1, stat_dim=4,
                         phi=lambda theta: 0.0, psi=psi,
                         gap_stats=_gap_stats(dt), m_step=m_step,
                         fwd_features=_fwd_features,
                         rev_features=_rev_features,
                         pair_coeffs=_pair_coeffs())


def transition_moments(lam: float, dt: float, n_steps: int):
    """Mean multiplier and variance of X_{k+n} given X_k = x: the n-step
    density is N(x * a^n, dt * sum_{i<n} a^{2i})."""
    a = 1.0 + lam * dt
    mult = a ** n_steps
    var = dt * float(np.sum(a ** (2 * np.arange(n_steps))))
    return mult, var


def exact_mle(obs_times, obs_values, dt: float,
              bounds: tuple[float, float] | None = None):
    """Maximize the exact incomplete-data likelihood of observations at a
    subset of chain times (the multi-step transitions stay Gaussian).

    Returns ``(lam_hat, loglik)``.
    """
    times = np.asarray(obs_times, dtype=int)
    values = np.asarray(obs_values, dtype=float).reshape(-1)
    if times.shape[0] != values.shape[0] or times.shape[0] < 2:
        raise ValueError("need >= 2 observations with matching times")
    if np.any(np.diff(times) <= 0):
        raise ValueError("observation times must be strictly increasing")
    if np.all(np.abs(values) < 1e-12):
        warnings.warn("all observations are ~0: the likelihood is flat in "
                      "the drift parameter", RuntimeWarning)
    gaps = np.diff(times)
    if bounds is None:
        bounds = (-0.999 / dt, 5.0 / dt)

    def nll(lam):
        a = 1.0 + lam * dt
        total = 0.0
        for g in np.unique(gaps):
            mult, var = transition_moments(lam, dt, int(g))
            sel = gaps == g
            resid = values[1:][sel] - mult * values[:-1][sel]
            total += 0.5 * np.sum(_LOG_2PI + np.log(var) + resid ** 2 / var)
        return total

    res = optimize.minimize_scalar(nll, bounds=bounds, method="bounded",
                                   options={"xatol": 1e-12})
    return float(res.x), float(-res.fun)


def lag_regression_init(obs_times, obs_values, dt: float) -> float:
    """Cheap warm start for the drift parameter from the observations alone.

    Successive observations separated by a common gap of g steps satisfy
    E[Y_{k+1} | Y_k] = a^g Y_k, so the no-intercept regression slope of
    Y_{k+1} on Y_k estimates a^g; taking the g-th root recovers lam.
    Requires uniform spacing and a positive slope estimate.
    """
    times = np.asarray(obs_times, dtype=int)
    values = np.asarray(obs_values, dtype=float).reshape(-1)
    if times.shape[0] != values.shape[0] or times.shape[0] < 2:
        raise ValueError("need >= 2 observations with matching times")
    gaps = np.diff(times)
    if np.any(gaps <= 0) or np.unique(gaps).shape[0] != 1:
        raise ValueError("lag regression needs uniform observation spacing")
    denom = float(np.sum(values[:-1] ** 2))
    if denom == 0.0:
        raise ValueError("all leading observations are zero")
    slope = float(np.sum(values[:-1] * values[1:])) / denom
    if slope <= 0.0:
        raise ValueError(
            f"nonpositive lag-regression slope {slope:g}: no admissible "
            f"drift reproduces it")
    return float((slope ** (1.0 / float(gaps[0])) - 1.0) / dt)
