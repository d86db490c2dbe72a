"""Reverse-chain construction and simulation.

For a chain with one-step densities p_k(x, y) and horizon N, the reverse
chain runs from the terminal state backwards: its m-th transition kernel
q_m(y, .) is any density dominating z -> p_{N-m-1}(z, y), and each step
carries the weight factor psi_m(y, z) = p_{N-m-1}(z, y) / q_m(y, z).  The
running product of these factors (accumulated in log space here, exposed on
the linear scale) corrects reverse-path averages so that

    E[ g(Y_L) * W_L ]  =  integral g(z) p_{N-L, N}(z, y) dz,

i.e. reverse simulation integrates the forward transition density against g
without ever inverting it.  When the normalizer c(y) = integral p(z, y) dz
is available in closed form, q(y, .) = p(., y)/c(y) gives the constant
weight psi = c(y) (the exact-normalizer route).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .chain import ChainModel
from .errors import UnsupportedModelError, WeightSingularityError


@dataclass(frozen=True)
class ReverseChainSpec:
    """Reverse transition sampler plus its weight factor.

    Both callables close over the model parameters.  ``step_sampler(m, y,
    rng)`` draws Y_{m+1} ~ q_m(y, .) for a batch ``y`` of shape (n, dim);
    ``log_weight(m, y, z)`` returns log psi_m(y, z) for batches of current
    and next states.  ``horizon`` is the forward horizon N the indices refer
    to (reverse step m consumes forward step N - m - 1).
    """

    horizon: int
    dim: int
    step_sampler: Callable
    log_weight: Callable

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    def weight(self, m: int, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """psi_m(y, z) on the linear scale."""
        return np.exp(self.log_weight(m, y, z))

    @classmethod
    def from_step_normalizer(cls, horizon: int, dim: int,
                             step_sampler: Callable,
                             log_normalizer: Callable) -> "ReverseChainSpec":
        """Exact-normalizer route: the sampler draws from p(., y)/c(y) and
        the weight is the z-independent constant c(y).  ``log_normalizer(m,
        y)`` returns log c(y) for a batch of anchor states."""
        def log_weight(m, y, z):
            return log_normalizer(m, y)
        return cls(horizon=horizon, dim=dim, step_sampler=step_sampler,
                   log_weight=log_weight)


@dataclass(frozen=True)
class ReversePath:
    """One reverse trajectory with its running weight cascade.

    ``states[m]`` is Y_m (Y_0 = anchor); ``log_weights[m]`` is the
    accumulated log of the weight product up to index m (log W_0 = 0).
    ``weights`` exposes the same cascade on the linear scale.
    """

    states: np.ndarray       # (n_steps+1, dim)
    log_weights: np.ndarray  # (n_steps+1,)
    rng_stream_id: int = 0
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        logw = np.asarray(self.log_weights, dtype=float)
        if states.ndim != 2 or logw.shape != (states.shape[0],):
            raise ValueError("states must be (n+1, dim) with matching weights")
        if logw[0] != 0.0:
            raise ValueError("weight cascade must start at 1")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "log_weights", logw)
        object.__setattr__(self, "weights", np.exp(logw))

    @property
    def anchor(self) -> np.ndarray:
        return self.states[0]


@dataclass(frozen=True)
class ReverseIdentityReport:
    """Outcome of a single reverse-representation identity check."""

    estimate: float
    oracle: float
    std_error: float
    n_sigma: float
    passed: bool


def build_reverse(model: ChainModel, theta, horizon: int) -> ReverseChainSpec:
    """Construct the reverse chain for ``model`` at parameters ``theta``."""
    theta = model.require_admissible(theta)
    if model.reverse_factory is None:
        raise UnsupportedModelError(
            f"{model.name}: no reverse-chain construction available")
    spec = model.reverse_factory(theta, horizon)
    if spec.dim != model.dim:
        raise UnsupportedModelError(
            f"{model.name}: reverse factory returned dim {spec.dim}, "
            f"expected {model.dim}")
    return spec


def _check_weights(logw_step: np.ndarray, m: int, y, z):
    bad = np.isnan(logw_step) | np.isposinf(logw_step)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise WeightSingularityError(
            f"non-finite reverse weight at step {m}: "
            f"psi({np.asarray(y)[i]}, {np.asarray(z)[i]})",
            step=m, state=np.asarray(y)[i], next_state=np.asarray(z)[i])


def simulate_reverse_batch(spec: ReverseChainSpec, anchor, n_steps: int,
                           n_paths: int, rng: np.random.Generator):
    """Simulate ``n_paths`` reverse trajectories of ``n_steps`` steps.

    Returns ``(states, log_weights)`` with shapes (n_steps+1, n_paths, dim)
    and (n_steps+1, n_paths).  Weight factors that evaluate to NaN or +inf
    raise :class:`WeightSingularityError`; -inf (a zero weight) is allowed
    and simply kills that path's contribution.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    anchor = np.asarray(anchor, dtype=float).reshape(spec.dim)
    states = np.empty((n_steps + 1, n_paths, spec.dim))
    logw = np.zeros((n_steps + 1, n_paths))
    states[0] = anchor
    y = states[0]
    for m in range(n_steps):
        z = spec.step_sampler(m, y, rng)
        step = np.asarray(spec.log_weight(m, y, z), dtype=float)
        _check_weights(step, m, y, z)
        states[m + 1] = z
        logw[m + 1] = logw[m] + step
        y = z
    return states, logw


def simulate_reverse(spec: ReverseChainSpec, anchor, n_steps: int,
                     rng: np.random.Generator,
                     stream_id: int = 0) -> ReversePath:
    """Single-trajectory wrapper around :func:`simulate_reverse_batch`."""
    states, logw = simulate_reverse_batch(spec, anchor, n_steps, 1, rng)
    return ReversePath(states=states[:, 0, :], log_weights=logw[:, 0],
                       rng_stream_id=stream_id)


def check_reverse_identity(spec: ReverseChainSpec, anchor, n_steps: int,
                           g: Callable, oracle: float, n_paths: int,
                           rng: np.random.Generator,
                           n_sigma_pass: float = 4.0) -> ReverseIdentityReport:
    """Monte Carlo check of the reverse representation against an oracle.

    Estimates E[g(Y_L) W_L] with L = ``n_steps`` and compares it to
    ``oracle`` (the value of integral g(z) p_{N-L,N}(z, anchor) dz computed
    independently).  Passing means the estimate lands within
    ``n_sigma_pass`` standard errors, with a tiny absolute floor for
    zero-variance cases.
    """
    states, logw = simulate_reverse_batch(spec, anchor, n_steps, n_paths, rng)
    vals = np.asarray(g(states[n_steps]), dtype=float) * np.exp(logw[n_steps])
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else 0.0
    width = max(n_sigma_pass * se, 1e-9 * abs(oracle) + 1e-12)
    n_sigma = abs(est - oracle) / se if se > 0 else 0.0
    return ReverseIdentityReport(estimate=est, oracle=float(oracle),
                                 std_error=se, n_sigma=n_sigma,
                                 passed=bool(abs(est - oracle) <= width))
