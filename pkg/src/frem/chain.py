"""Discrete-time Markov chain primitives.

A chain lives on R^d and advances through one-step transition densities
p_k(x, .).  Models supply two callables — a sampler and a log-density —
vectorized over a batch of states, plus an admissibility predicate for the
parameter vector.  Everything downstream (reverse chains, bridge estimation,
EM) is built on top of these.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import EstimatorFailureError, ParameterDomainError


@dataclass(frozen=True)
class ChainModel:
    """A time-homogeneous (or step-indexed) Markov chain on R^d.

    Parameters
    ----------
    dim : state dimension d >= 1.
    param_dim : length of the parameter vector theta.
    step_sampler : ``(k, theta, x, rng) -> y`` drawing one transition from
        time k to k+1; ``x`` and ``y`` are (n, dim) batches.
    step_logdensity : ``(k, theta, x, y) -> (n,)`` log of the one-step
        transition density p_k(x, y).
    admissible : ``theta -> bool``; the parameter domain predicate.
    reverse_factory : optional ``(theta, horizon) -> ReverseChainSpec``
        (see :mod:`frem.reverse`); None if no reverse construction is known.
    time_homogeneous : whether p_k is independent of k.
    """

    name: str
    dim: int
    param_dim: int
    step_sampler: Callable
    step_logdensity: Callable
    admissible: Callable = field(default=lambda theta: True)
    reverse_factory: Callable | None = None
    time_homogeneous: bool = True

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.param_dim < 1:
            raise ValueError(f"param_dim must be >= 1, got {self.param_dim}")

    def require_admissible(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.param_dim,):
            raise ParameterDomainError(
                f"{self.name}: expected parameter vector of length "
                f"{self.param_dim}, got shape {theta.shape}")
        if not self.admissible(theta):
            raise ParameterDomainError(
                f"{self.name}: parameters {theta} outside admissible domain")
        return theta


@dataclass(frozen=True)
class ForwardPath:
    """A realized trajectory X_start, ..., X_stop (inclusive)."""

    start: int
    states: np.ndarray  # (n_times, dim)
    rng_stream_id: int = 0

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] < 1:
            raise ValueError("states must be a (n_times, dim) array")
        object.__setattr__(self, "states", states)

    @property
    def stop(self) -> int:
        return self.start + self.states.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.start, self.stop + 1)


@dataclass(frozen=True)
class ObservationSet:
    """States recorded at a strictly increasing subset of chain times.

    ``values[i]`` is the observation at ``times[i]``.  A boolean ``mask``
    marks which coordinates were actually seen (True = observed); ``None``
    means everything listed is fully observed.  The first time is the
    chain's start time.
    """

    times: np.ndarray   # (r+1,) integers
    values: np.ndarray  # (r+1, dim)
    mask: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=int)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or times.shape[0] < 1:
            raise ValueError("times must be a nonempty 1-d integer array")
        if np.any(np.diff(times) <= 0):
            raise ValueError("observation times must be strictly increasing")
        if values.shape[0] != times.shape[0]:
            raise ValueError("times and values lengths differ")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != values.shape:
                raise ValueError("mask shape must match values shape")
            if not mask.any(axis=1).all():
                raise ValueError("every listed time must observe >= 1 coordinate")
            object.__setattr__(self, "mask", mask)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def fully_observed(self) -> np.ndarray:
        """Boolean flags: True where every coordinate is observed."""
        if self.mask is None:
            return np.ones(self.times.shape[0], dtype=bool)
        return self.mask.all(axis=1)


def simulate_forward(model: ChainModel, theta, x0, start: int, stop: int,
                     rng: np.random.Generator, stream_id: int = 0) -> ForwardPath:
    """Simulate one trajectory from time ``start`` (state ``x0``) to ``stop``.

    ``start == stop`` returns the single-state path without consuming any
    randomness.
    """
    theta = model.require_admissible(theta)
    if stop < start:
        raise ValueError(f"stop ({stop}) must be >= start ({start})")
    x0 = np.asarray(x0, dtype=float).reshape(1, model.dim)
    n_steps = stop - start
    states = np.empty((n_steps + 1, model.dim))
    states[0] = x0[0]
    x = x0
    for k in range(n_steps):
        x = model.step_sampler(start + k, theta, x, rng)
        states[k + 1] = x[0]
    return ForwardPath(start=start, states=states, rng_stream_id=stream_id)


def simulate_forward_batch(model: ChainModel, theta, x0, start: int, stop: int,
                           n_paths: int, rng: np.random.Generator) -> np.ndarray:
    """Simulate ``n_paths`` independent trajectories at once.

    Returns an array of shape (stop - start + 1, n_paths, dim); all paths
    begin at ``x0``.
    """
    theta = model.require_admissible(theta)
    if stop < start:
        raise ValueError(f"stop ({stop}) must be >= start ({start})")
    x0 = np.asarray(x0, dtype=float).reshape(model.dim)
    n_steps = stop - start
    states = np.empty((n_steps + 1, n_paths, model.dim))
    states[0] = x0
    x = states[0]
    for k in range(n_steps):
        x = model.step_sampler(start + k, theta, x, rng)
        states[k + 1] = x
    return states


def path_loglikelihood(model: ChainModel, theta, states: np.ndarray,
                       start: int = 0) -> float:
    """Sum of one-step transition log-densities along a realized path.

    ``states`` is (n_times, dim) with n_times >= 2; the initial state is
    conditioned on, not scored.
    """
    theta = model.require_admissible(theta)
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    if states.shape[0] < 2:
        raise ValueError("path must contain at least one transition")
    total = 0.0
    for k in range(states.shape[0] - 1):
        ld = model.step_logdensity(start + k, theta, states[k][None, :],
                                   states[k + 1][None, :])
        val = float(ld[0])
        if not np.isfinite(val):
            raise EstimatorFailureError(
                f"non-finite one-step log-density at step {start + k}",
                index=start + k)
        total += val
    return total
