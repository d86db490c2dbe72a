"""EM fitting of partially observed chains via forward-reverse E-steps.

Models enter through a curved-exponential structure: the complete-data
log-likelihood of a path decomposes as

    l(theta; path) = phi(theta) + sum_i psi_i(theta) * S_i(path),

so the E-step only needs z_i = E[S_i | observations] and the M-step
maximizes Q(theta) = phi(theta) + <psi(theta), z>.  The statistics totals
decompose over observation gaps, and each gap's conditional expectation is
estimated with one forward-reverse bridge (see :mod:`frem.bridge`).

The iteration is stabilized by a growing sequence of compact boxes around
the starting point: when the maximizer escapes the current box (or a bridge
degenerates), the parameter is reset to the start and the box is enlarged.
Sample counts and bandwidths follow per-iteration schedules, the default
being a geometric ramp M_m = M_0 * 4^m with eps_m = eps_0 * 4^{-m}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .bridge import estimate_z_vector
from .chain import ChainModel, ObservationSet
from .errors import DegenerateBridgeError, MStepFailureError
from .rng import substream


@dataclass(frozen=True)
class SuffStatModel:
    """Curved-exponential decomposition of a chain's path log-likelihood.

    ``gap_stats(a, b, interior) -> (n, stat_dim)`` evaluates the statistic
    totals of one observation gap: endpoints ``a``, ``b`` (broadcastable to
    (n, dim)) and ``interior`` of shape (n, gap_length - 1, dim) holding the
    states strictly inside the gap in time order.  ``m_step(z) -> theta`` is
    the closed-form maximizer of Q(., z); None selects the numeric fallback.

    The optional feature fields provide a bilinear factorization of the gap
    statistics across a forward/reverse cloud pairing, which lets the bridge
    estimator precompute per-path features instead of assembling full state
    sequences for every candidate pair:

    * ``fwd_features(a, states) -> (n, pf)`` with ``states`` time-major
      (k, n, dim), last row the pairing state, covering the transitions from
      ``a`` through that row;
    * ``rev_features(states, b) -> (n, pr)`` with first row the state one
      step after the pairing time, covering the transitions from that row to
      ``b``;
    * ``pair_coeffs``, an array of shape (stat_dim, 1 + pf, 1 + pr), holding
      the whole-gap statistics as bilinear forms of the 1-augmented feature
      vectors: stat_c(i, j) = [1, F_i] @ pair_coeffs[c] @ [1, R_j] — the
      forward-segment, reverse-segment and junction-transition terms all
      expressed through feature products.

    The contract: for any interleaved sequence, the bilinear forms evaluate
    to ``gap_stats`` of the full gap.  All three must be present for the
    fast path to engage; models whose junction term does not factorize
    through finitely many features simply leave them None.
    """

    name: str
    param_dim: int
    stat_dim: int
    phi: Callable
    psi: Callable
    gap_stats: Callable
    m_step: Callable | None = None
    fwd_features: Callable | None = None
    rev_features: Callable | None = None
    pair_coeffs: np.ndarray | None = None

    def __post_init__(self):
        if self.param_dim < 1 or self.stat_dim < 1:
            raise ValueError("param_dim and stat_dim must be >= 1")
        if self.pair_coeffs is not None:
            coeffs = np.asarray(self.pair_coeffs, dtype=float)
            if coeffs.ndim != 3 or coeffs.shape[0] != self.stat_dim:
                raise ValueError("pair_coeffs must have shape "
                                 "(stat_dim, 1 + pf, 1 + pr)")
            object.__setattr__(self, "pair_coeffs", coeffs)

    @property
    def has_pair_factorization(self) -> bool:
        return (self.fwd_features is not None
                and self.rev_features is not None
                and self.pair_coeffs is not None)


def q_function(stats: SuffStatModel, theta, z) -> float:
    """Q(theta; z) = phi(theta) + <psi(theta), z>."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    z = np.asarray(z, dtype=float)
    if z.shape != (stats.stat_dim,):
        raise ValueError(f"z must have shape ({stats.stat_dim},)")
    return float(stats.phi(theta) + np.dot(stats.psi(theta), z))


def m_step(stats: SuffStatModel, z, theta_prev=None,
           max_evals: int = 500) -> np.ndarray:
    """Maximize Q(., z): closed form when the model has one, otherwise a
    derivative-free search started from ``theta_prev``."""
    z = np.asarray(z, dtype=float)
    if stats.m_step is not None:
        theta = np.atleast_1d(np.asarray(stats.m_step(z), dtype=float))
        if theta.shape != (stats.param_dim,) or not np.all(np.isfinite(theta)):
            raise MStepFailureError(
                f"{stats.name}: closed-form maximizer returned {theta}")
        return theta
    if theta_prev is None:
        raise MStepFailureError(
            f"{stats.name}: numeric maximization needs a starting point")
    theta_prev = np.atleast_1d(np.asarray(theta_prev, dtype=float))
    res = optimize.minimize(lambda th: -q_function(stats, th, z), theta_prev,
                            method="Nelder-Mead",
                            options={"maxfev": max_evals, "xatol": 1e-10,
                                     "fatol": 1e-12})
    if not res.success:
        raise MStepFailureError(
            f"{stats.name}: numeric maximizer did not converge within "
            f"{max_evals} evaluations ({res.message})")
    return np.atleast_1d(res.x)


def geometric_schedule(base, factor: float, n: int) -> tuple:
    """(base, base*factor, ..., base*factor^(n-1)) — rounded for counts."""
    if n < 0:
        raise ValueError("schedule length must be >= 0")
    vals = [base * factor ** m for m in range(n)]
    if isinstance(base, int):
        return tuple(int(round(v)) for v in vals)
    return tuple(float(v) for v in vals)


@dataclass(frozen=True)
class FremConfig:
    """Run configuration: starting point, schedules, stabilization, seed.

    The compact at escalation level p is the box
    {theta : |theta - theta0|_inf <= compact_halfwidth * 2^p} intersected
    with the model's admissible set.
    """

    theta0: np.ndarray
    n_iterations: int
    sample_schedule: tuple[int, ...]
    bandwidth_schedule: tuple[float, ...]
    compact_halfwidth: float = 1.0
    seed: int = 0

    def __post_init__(self):
        theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        object.__setattr__(self, "theta0", theta0)
        object.__setattr__(self, "sample_schedule",
                           tuple(int(m) for m in self.sample_schedule))
        object.__setattr__(self, "bandwidth_schedule",
                           tuple(float(e) for e in self.bandwidth_schedule))
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        if len(self.sample_schedule) != self.n_iterations:
            raise ValueError("sample_schedule length must equal n_iterations")
        if len(self.bandwidth_schedule) != self.n_iterations:
            raise ValueError("bandwidth_schedule length must equal n_iterations")
        if any(m < 1 for m in self.sample_schedule):
            raise ValueError("sample counts must be >= 1")
        if any(np.diff(self.sample_schedule) < 0):
            raise ValueError("sample schedule must be nondecreasing")
        if any(e <= 0 for e in self.bandwidth_schedule):
            raise ValueError("bandwidths must be positive")
        if self.compact_halfwidth <= 0:
            raise ValueError("compact_halfwidth must be positive")

    @classmethod
    def geometric(cls, theta0, n_iterations: int, m0: int = 2000,
                  growth: float = 4.0, eps0: float = 5e-4,
                  decay: float = 4.0, compact_halfwidth: float = 1.0,
                  seed: int = 0) -> "FremConfig":
        """The standard ramp: M_m = m0*growth^m, eps_m = eps0*decay^-m."""
        return cls(theta0=theta0, n_iterations=n_iterations,
                   sample_schedule=geometric_schedule(m0, growth, n_iterations),
                   bandwidth_schedule=geometric_schedule(
                       float(eps0), 1.0 / decay, n_iterations),
                   compact_halfwidth=compact_halfwidth, seed=seed)


@dataclass(frozen=True)
class IterationRecord:
    """Trace entry for one completed iteration."""

    iteration: int
    theta: np.ndarray
    q_value: float
    z: np.ndarray
    n_samples: int
    bandwidth: float
    reset: bool
    step_norm: float
    n_pairs: tuple
    weight_cv: tuple


@dataclass(frozen=True)
class FremState:
    """Current parameter plus the full iteration trace."""

    theta: np.ndarray
    iteration: int = 0
    reset_count: int = 0
    compact_level: int = 0
    trace: tuple = ()


def _in_compact(theta, config: FremConfig, level: int) -> bool:
    half = config.compact_halfwidth * 2.0 ** level
    return bool(np.all(np.abs(theta - config.theta0) <= half))


def init_state(config: FremConfig) -> FremState:
    return FremState(theta=config.theta0.copy())


def stable_iterate(model: ChainModel, stats: SuffStatModel,
                   obs: ObservationSet, config: FremConfig, state: FremState,
                   rng: np.random.Generator) -> FremState:
    """Run one stabilized EM iteration and return the advanced state."""
    m = state.iteration
    if m >= config.n_iterations:
        raise ValueError(f"iteration {m} exceeds the configured schedule")
    n_samples = config.sample_schedule[m]
    eps = config.bandwidth_schedule[m]

    reset = False
    z = np.full(stats.stat_dim, np.nan)
    q_val = np.nan
    diagnostics = ((), ())
    try:
        zres = estimate_z_vector(model, stats, state.theta, obs, n_samples,
                                 rng, bandwidth=eps)
        z = zres.z
        diagnostics = (
            tuple(e.n_pairs_hit for e in zres.gap_estimates if e is not None),
            tuple(e.weight_cv for e in zres.gap_estimates if e is not None))
        theta_new = m_step(stats, z, theta_prev=state.theta)
        if not (_in_compact(theta_new, config, state.compact_level)
                and model.admissible(theta_new)):
            reset = True
        else:
            q_val = q_function(stats, theta_new, z)
    except (DegenerateBridgeError, MStepFailureError):
        reset = True

    if reset:
        theta_new = config.theta0.copy()
    record = IterationRecord(
        iteration=m, theta=theta_new.copy(), q_value=q_val, z=z.copy(),
        n_samples=n_samples, bandwidth=eps, reset=reset,
        step_norm=float(np.linalg.norm(theta_new - state.theta)),
        n_pairs=diagnostics[0], weight_cv=diagnostics[1])
    return FremState(
        theta=theta_new, iteration=m + 1,
        reset_count=state.reset_count + int(reset),
        compact_level=state.compact_level + int(reset),
        trace=state.trace + (record,))


def run_frem(model: ChainModel, stats: SuffStatModel, obs: ObservationSet,
             config: FremConfig, replicate_id: int = 0) -> FremState:
    """Run the configured number of stabilized iterations.

    Randomness is drawn from per-(replicate, iteration) substreams of the
    config seed, so results are reproducible and replicate runs are
    independent regardless of how they are scheduled across workers.
    """
    state = init_state(config)
    for m in range(config.n_iterations):
        rng = substream(config.seed, replicate_id, m)
        state = stable_iterate(model, stats, obs, config, state, rng)
    return state


def _replicate_job(args):
    model_name, model_params, obs_arrays, config, replicate_id = args
    from . import models  # deferred: avoids an import cycle at module load
    model, stats = models.build(model_name, **model_params)
    obs = ObservationSet(times=obs_arrays[0], values=obs_arrays[1],
                         mask=obs_arrays[2])
    return run_frem(model, stats, obs, config, replicate_id)


def run_frem_replicates(obs: ObservationSet, config: FremConfig,
                        n_replicates: int, model: ChainModel | None = None,
                        stats: SuffStatModel | None = None,
                        model_spec: tuple[str, dict] | None = None,
                        threads: int = 1) -> list[FremState]:
    """Independent algorithm replicates on the same observations.

    With ``threads > 1`` the replicates are spread over a process pool, which
    requires ``model_spec = (name, params)`` naming a registered model (model
    objects close over functions and do not cross process boundaries).  The
    replicate -> substream mapping is fixed, so any thread count produces
    bit-identical results.
    """
    if n_replicates < 1:
        raise ValueError("n_replicates must be >= 1")
    if threads > 1:
        if model_spec is None:
            raise ValueError("threads > 1 requires model_spec=(name, params)")
        import multiprocessing as mp
        jobs = [(model_spec[0], model_spec[1],
                 (obs.times, obs.values, obs.mask), config, r)
                for r in range(n_replicates)]
        with mp.Pool(threads) as pool:
            return pool.map(_replicate_job, jobs)
    if model is None or stats is None:
        if model_spec is None:
            raise ValueError("provide model and stats, or model_spec")
        from . import models
        model, stats = models.build(model_spec[0], **model_spec[1])
    return [run_frem(model, stats, obs, config, r) for r in range(n_replicates)]
