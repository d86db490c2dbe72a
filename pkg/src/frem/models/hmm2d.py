"""Two-dimensional nonlinear chain with a partially observed component.

    X_{n+1} = theta + X_n^2 + xi_n,    xi_n ~ N(0, Sigma)  on R^2,

where the square acts componentwise and theta in R^2 is the unknown shift.
In the observation scheme of interest the first component is recorded at
every step while the second is recorded only every k-th step.

With V_l = X_l - X_{l-1}^2 and Omega = Sigma^{-1}, the path log-likelihood is

    l(theta) = N * [-log(2 pi) - log det Sigma / 2 - theta' Omega theta / 2]
               + (Omega theta)_1 sum V^1 + (Omega theta)_2 sum V^2
               - (1/2) sum V' Omega V,

linear in the statistics [N, sum V^1, sum V^2, sum V' Omega V]; the
maximizer solves N * Omega theta = Omega sum V, i.e. theta* = mean of V.
"""

from __future__ import annotations

import numpy as np

from ..chain import ChainModel, ObservationSet
from ..em import SuffStatModel
from ..errors import MStepFailureError

_LOG_2PI = float(np.log(2.0 * np.pi))


def _prepare_cov(Sigma) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.shape != (2, 2) or not np.allclose(Sigma, Sigma.T):
        raise ValueError("Sigma must be a symmetric 2x2 matrix")
    try:
        chol = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as err:
        raise ValueError("Sigma must be positive definite") from err
    omega = np.linalg.inv(Sigma)
    logdet = float(np.linalg.slogdet(Sigma)[1])
    return Sigma, chol, omega, logdet


def make_model(Sigma) -> ChainModel:
    Sigma, chol, omega, logdet = _prepare_cov(Sigma)

    def step_sampler(k, theta, x, rng):
        noise = rng.standard_normal(x.shape) @ chol.T
        return theta[None, :] + x * x + noise

    def step_logdensity(k, theta, x, y):
        v = y - theta[None, :] - x * x
        quad = np.einsum("ni,ij,nj->n", v, omega, v)
        return -_LOG_2PI - 0.5 * logdet - 0.5 * quad

    return ChainModel(name="hmm2d", dim=2, param_dim=2,
                      step_sampler=step_sampler,
                      step_logdensity=step_logdensity)


def make_suffstats(Sigma) -> SuffStatModel:
    Sigma, chol, omega, logdet = _prepare_cov(Sigma)

    def phi(theta):
        return 0.0

    def psi(theta):
        ot = omega @ theta
        return np.array([-_LOG_2PI - 0.5 * logdet - 0.5 * float(theta @ ot),
                         ot[0], ot[1], -0.5])

    def gap_stats(a, b, interior):
        n = interior.shape[0]
        a = np.broadcast_to(np.asarray(a, dtype=float).reshape(-1, 1, 2),
                            (n, 1, 2))
        b = np.broadcast_to(np.asarray(b, dtype=float).reshape(-1, 1, 2),
                            (n, 1, 2))
        seq = np.concatenate([a, interior, b], axis=1)  # (n, G+1, 2)
        v = seq[:, 1:, :] - seq[:, :-1, :] ** 2         # (n, G, 2)
        out = np.empty((n, 4))
        out[:, 0] = v.shape[1]
        out[:, 1] = v[:, :, 0].sum(axis=1)
        out[:, 2] = v[:, :, 1].sum(axis=1)
        out[:, 3] = np.einsum("nti,ij,ntj->n", v, omega, v)
        return out

    def m_step(z):
        if not z[0] > 0:
            raise MStepFailureError(f"hmm2d: empty path (z0 = {z[0]:g})")
        # N * Omega theta = Omega z_{1:2}; solved as the linear system it is.
        return np.linalg.solve(z[0] * omega, omega @ z[1:3])

    return SuffStatModel(name="hmm2d", param_dim=2, stat_dim=4,
                         phi=phi, psi=psi, gap_stats=gap_stats,
                         m_step=m_step)


def score(Sigma, theta, states) -> np.ndarray:
    """Gradient of the path log-likelihood in theta:
    Omega (sum_l V_l - N theta)."""
    Sigma, chol, omega, logdet = _prepare_cov(Sigma)
    theta = np.asarray(theta, dtype=float).reshape(2)
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[1] != 2 or states.shape[0] < 2:
        raise ValueError("states must be (n_times, 2) with >= 1 transition")
    v = states[1:] - states[:-1] ** 2
    n = v.shape[0]
    return omega @ (v.sum(axis=0) - n * theta)


def mask_observations(states, every_k: int, start_time: int = 0) -> ObservationSet:
    """Observation set for a realized path: component 1 at every time,
    component 2 only at times divisible by ``every_k``."""
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[1] != 2:
        raise ValueError("states must be (n_times, 2)")
    if every_k < 1:
        raise ValueError("every_k must be >= 1")
    times = np.arange(start_time, start_time + states.shape[0])
    mask = np.ones(states.shape, dtype=bool)
    mask[:, 1] = times % every_k == 0
    values = states.copy()
    values[~mask] = np.nan  # masked entries carry no information
    return ObservationSet(times=times, values=values, mask=mask)
