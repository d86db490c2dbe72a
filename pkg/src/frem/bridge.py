"""Forward-reverse estimation of conditional path expectations.

To estimate E[f(intermediate states) | X_{t0} = x, X_{t1} = y] for a Markov
chain pinned at both ends, simulate M ordinary forward paths from x up to a
crossover time c, simulate M' weighted reverse paths from y back to c, and
join the two clouds with a kernel on the crossover mismatch:

    ratio =  sum_{i,j} f_ij * W_j * K_eps(X^i_c - Y^j_c)
           / sum_{i,j}        W_j * K_eps(X^i_c - Y^j_c),

where f_ij evaluates the functional on the concatenation of forward path i's
states and reverse path j's states, and W_j is the reverse weight cascade.
As eps -> 0 (with enough samples) the ratio converges to the bridge
expectation; the denominator, normalized by M*M', estimates the transition
density p_{t0,t1}(x, y).  The double sums run through the box-sorted
evaluator, so the cost is near-linear in the cloud sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .chain import ChainModel, ObservationSet, simulate_forward_batch
from .errors import DegenerateBridgeError, UnsupportedModelError
from .kernels import KernelSpec, default_bandwidth
from .pairsum import (PairSumResult, epanechnikov_bridge_moments,
                      fast_double_sum)
from .reverse import build_reverse, simulate_reverse_batch

#: Denominators at or below this are treated as a collapsed estimate.
DENOMINATOR_FLOOR = 1e-300


@dataclass(frozen=True)
class BridgeQuery:
    """A conditional-expectation query for a doubly pinned chain segment.

    The functional is evaluated on the states at ``sorted(grid + (crossover,))``
    (forward time order); ``grid`` itself must exclude the endpoints and the
    crossover.  The endpoint states are fixed constants available to the
    caller, so functionals simply close over them.  ``match_coords`` selects
    the coordinate subset the kernel matches at the crossover (None = all);
    the unmatched coordinates are then integrated out independently on the
    two sides, which is only meaningful when the conditioning event
    constrains the matched coordinates alone.
    """

    start_time: int
    start_state: np.ndarray
    end_time: int
    end_state: np.ndarray
    crossover: int
    functional: Callable
    grid: tuple[int, ...] = ()
    match_coords: np.ndarray | None = None

    def __post_init__(self):
        start = np.atleast_1d(np.asarray(self.start_state, dtype=float))
        end = np.atleast_1d(np.asarray(self.end_state, dtype=float))
        if start.shape != end.shape or start.ndim != 1:
            raise ValueError("endpoint states must be 1-d and same shape")
        object.__setattr__(self, "start_state", start)
        object.__setattr__(self, "end_state", end)
        if self.end_time <= self.start_time:
            raise ValueError("end_time must exceed start_time")
        if not (self.start_time <= self.crossover < self.end_time):
            raise ValueError("crossover must lie in [start_time, end_time)")
        grid = tuple(int(t) for t in self.grid)
        if list(grid) != sorted(set(grid)):
            raise ValueError("grid times must be strictly increasing")
        if any(t <= self.start_time or t >= self.end_time or t == self.crossover
               for t in grid):
            raise ValueError("grid times must lie strictly between the "
                             "endpoints and differ from the crossover")
        object.__setattr__(self, "grid", grid)
        if self.match_coords is not None:
            mc = np.asarray(self.match_coords, dtype=bool)
            if mc.shape != start.shape:
                raise ValueError("match_coords must be a boolean mask over "
                                 "state coordinates")
            if not mc.any():
                raise ValueError("match_coords must select >= 1 coordinate")
            object.__setattr__(self, "match_coords", mc)

    @property
    def dim(self) -> int:
        return self.start_state.shape[0]


@dataclass(frozen=True)
class FrEstimate:
    """A forward-reverse ratio estimate with its diagnostics.

    ``denominator`` is the kernel-weighted density estimate of
    p_{t0,t1}(x, y) (already normalized by the two cloud sizes);
    ``weight_cv`` is the coefficient of variation of the terminal reverse
    weights — a large value signals a poorly conditioned reverse proposal.
    """

    numerator: np.ndarray
    denominator: float
    ratio: np.ndarray
    n_pairs_hit: int
    forward_count: int
    reverse_count: int
    bandwidth: float
    weight_cv: float


@dataclass(frozen=True)
class ZVectorResult:
    """Conditional sufficient-statistic totals and per-gap diagnostics."""

    z: np.ndarray
    gap_estimates: tuple  # FrEstimate per bridged gap, None for exact gaps

    @property
    def n_bridged(self) -> int:
        return sum(e is not None for e in self.gap_estimates)


def _functional_values(functional, states):
    vals = np.asarray(functional(states), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.ndim != 2 or vals.shape[0] != states.shape[0]:
        raise ValueError(
            "functional must map a (n, k_times, dim) state block to an "
            f"(n,) or (n, m) array, got shape {vals.shape}")
    return vals


def estimate_bridge(model: ChainModel, theta, query: BridgeQuery,
                    n_forward: int, rng: np.random.Generator,
                    n_reverse: int | None = None,
                    kernel: KernelSpec | None = None,
                    bandwidth: float | None = None,
                    box_scale: float = 1.5,
                    pair_plan=None) -> FrEstimate:
    """Run one forward-reverse estimate of a bridge query.

    ``n_reverse`` defaults to ``n_forward``.  ``kernel`` overrides the
    default product-Epanechnikov kernel; ``bandwidth`` overrides only the
    bandwidth of the default kernel (the rule-based value is used when both
    are None).  Raises :class:`DegenerateBridgeError` when no kernel-active
    pair exists or the denominator collapses.

    ``pair_plan`` is an object exposing ``fwd_features``, ``rev_features``
    and ``pair_coeffs`` (see :class:`frem.em.SuffStatModel`): the summand
    is then a bilinear form of precomputed per-path features instead of
    ``query.functional``, which avoids per-pair state blocks — and for a
    one-dimensional Epanechnikov match the double sum is evaluated in
    closed form from sorted prefix sums without enumerating pairs at all.
    It requires a grid covering every interior time and at least one step
    on each side of the crossover.
    """
    theta = model.require_admissible(theta)
    if n_forward < 1:
        raise ValueError("n_forward must be >= 1")
    n_reverse = n_forward if n_reverse is None else n_reverse
    if n_reverse < 1:
        raise ValueError("n_reverse must be >= 1")
    d = query.dim
    if d != model.dim:
        raise ValueError(f"query dim {d} does not match model dim {model.dim}")

    steps_fwd = query.crossover - query.start_time
    steps_rev = query.end_time - query.crossover
    grid_fwd = [t for t in query.grid if t < query.crossover]
    grid_rev = [t for t in query.grid if t > query.crossover]
    if pair_plan is not None:
        full_interior = query.end_time - query.start_time - 2
        if len(query.grid) != full_interior:
            raise ValueError("pair_plan requires a grid covering every "
                             "interior time")
        if steps_fwd < 1 or steps_rev < 2:
            raise ValueError("pair_plan needs >= 1 forward step and >= 1 "
                             "reverse state beyond the crossover")

    # Forward cloud: states at the forward grid times plus the crossover.
    if steps_fwd == 0:
        x_pts = np.broadcast_to(query.start_state, (1, d)).copy()
        fwd_payload = x_pts.copy()
        n_fwd_eff = 1
    elif pair_plan is not None:
        fwd = simulate_forward_batch(model, theta, query.start_state,
                                     query.start_time, query.crossover,
                                     n_forward, rng)
        x_pts = fwd[steps_fwd]
        fwd_payload = np.asarray(
            pair_plan.fwd_features(query.start_state, fwd[1:]), dtype=float)
        n_fwd_eff = n_forward
    else:
        fwd = simulate_forward_batch(model, theta, query.start_state,
                                     query.start_time, query.crossover,
                                     n_forward, rng)
        take = [t - query.start_time for t in grid_fwd] + [steps_fwd]
        block = fwd[take]                      # (n_times, M, d)
        x_pts = fwd[steps_fwd]
        fwd_payload = np.moveaxis(block, 0, 1).reshape(n_forward, -1)
        n_fwd_eff = n_forward

    # Reverse cloud: anchored at the end state; reverse index m holds the
    # state at forward time end_time - m.
    rspec = build_reverse(model, theta, horizon=query.end_time)
    rstates, rlogw = simulate_reverse_batch(rspec, query.end_state, steps_rev,
                                            n_reverse, rng)
    y_pts = rstates[steps_rev]
    logw = rlogw[steps_rev]
    logw_max = logw.max()
    if not np.isfinite(logw_max):
        raise DegenerateBridgeError(
            "all reverse weights vanished; the reverse proposal does not "
            "cover the anchored transition")
    w_scaled = np.exp(logw - logw_max)
    if pair_plan is not None:
        # states at forward times crossover+1 .. end_time-1, time-major
        take = [query.end_time - t for t in range(query.crossover + 1,
                                                  query.end_time)]
        rev_feat = np.asarray(
            pair_plan.rev_features(rstates[take], query.end_state),
            dtype=float)
        rev_payload = None  # only the generic fallback materializes it
    else:
        # reverse grid states in forward time order, then the weight column
        take = [query.end_time - t for t in sorted(grid_rev, reverse=True)]
        rev_block = rstates[take][::-1] if take else rstates[:0]
        rev_payload = np.concatenate(
            [np.moveaxis(rev_block, 0, 1).reshape(n_reverse, -1),
             w_scaled[:, None]], axis=1)

    mean_w = w_scaled.mean()
    weight_cv = float(w_scaled.std() / mean_w) if mean_w > 0 else np.inf

    if query.match_coords is not None:
        cols = np.flatnonzero(query.match_coords)
        x_match, y_match = x_pts[:, cols], y_pts[:, cols]
    else:
        x_match, y_match = x_pts, y_pts
    d_eff = x_match.shape[1]
    if kernel is None:
        eps = bandwidth if bandwidth is not None else default_bandwidth(
            max(n_fwd_eff, n_reverse), d_eff)
        kernel = KernelSpec(dim=d_eff, bandwidth=eps)
    elif kernel.dim != d_eff:
        raise ValueError(f"kernel dim {kernel.dim} does not match the "
                         f"{d_eff} matched coordinates")

    n_f_times = len(grid_fwd) + 1
    n_r_times = len(grid_rev)
    functional = query.functional

    if pair_plan is not None:
        coeffs = np.asarray(pair_plan.pair_coeffs, dtype=float)
        if (coeffs.shape[1] != fwd_payload.shape[1] + 1
                or coeffs.shape[2] != rev_feat.shape[1] + 1):
            raise ValueError("pair_coeffs shape does not match the plan's "
                             "feature widths")
        if d_eff == 1 and kernel.family == "epanechnikov":
            # One compiled merge join yields the full weighted moment
            # matrix; every statistic is a contraction of it.
            S, n_hit = epanechnikov_bridge_moments(
                x_match, y_match, kernel, fwd_payload, rev_feat, w_scaled)
            values = np.empty(coeffs.shape[0] + 1)
            np.einsum("crs,rs->c", coeffs, S, out=values[:-1])
            values[-1] = S[0, 0]
            result = PairSumResult(values=values, n_pairs=n_hit)
        else:
            rev_payload = np.concatenate([rev_feat, w_scaled[:, None]],
                                         axis=1)

            def combine(fp, rp):
                w = rp[:, -1:]
                fa = np.concatenate([np.ones((fp.shape[0], 1)), fp], axis=1)
                ra = np.concatenate([np.ones((rp.shape[0], 1)), rp[:, :-1]],
                                    axis=1)
                vals = np.einsum("nr,crs,ns->nc", fa, coeffs, ra)
                return np.concatenate([vals * w, w], axis=1)

            result = fast_double_sum(x_match, y_match, kernel, combine,
                                     x_payload=fwd_payload,
                                     y_payload=rev_payload,
                                     box_scale=box_scale)
    else:
        def combine(fp, rp):
            n = fp.shape[0]
            f_states = fp.reshape(n, n_f_times, d)
            r_states = rp[:, :-1].reshape(n, n_r_times, d)
            w = rp[:, -1]
            vals = _functional_values(
                functional, np.concatenate([f_states, r_states], axis=1))
            return np.concatenate([vals * w[:, None], w[:, None]], axis=1)

        result = fast_double_sum(x_match, y_match, kernel, combine,
                                 x_payload=fwd_payload, y_payload=rev_payload,
                                 box_scale=box_scale)
    if result.n_pairs == 0:
        raise DegenerateBridgeError(
            f"no kernel-active forward-reverse pairs at bandwidth "
            f"{kernel.bandwidth:g}; increase the bandwidth or sample count")
    norm = np.exp(logw_max) / (n_fwd_eff * n_reverse)
    denominator = float(result.values[-1] * norm)
    numerator = result.values[:-1] * norm
    if not np.isfinite(denominator) or denominator <= DENOMINATOR_FLOOR:
        raise DegenerateBridgeError(
            f"bridge denominator collapsed ({denominator:g}); increase the "
            f"bandwidth or sample count")
    ratio = numerator / denominator
    return FrEstimate(numerator=numerator, denominator=denominator,
                      ratio=ratio, n_pairs_hit=result.n_pairs,
                      forward_count=n_fwd_eff, reverse_count=n_reverse,
                      bandwidth=float(kernel.bandwidth),
                      weight_cv=weight_cv)


def default_crossover(t0: int, t1: int) -> int:
    """Midpoint crossover used for automatically built gap bridges."""
    return t0 + (t1 - t0) // 2


def estimate_z_vector(model: ChainModel, stats, theta, obs: ObservationSet,
                      n_samples: int, rng: np.random.Generator,
                      bandwidth: float | None = None,
                      kernel: KernelSpec | None = None,
                      box_scale: float = 1.5) -> ZVectorResult:
    """Estimate conditional sufficient-statistic totals from observations.

    The statistic total decomposes over the gaps between consecutive fully
    observed states; each gap of length one is evaluated exactly, and each
    longer gap runs one forward-reverse bridge with the crossover at the gap
    midpoint.  Partially observed states strictly inside a gap are not
    conditioned on (bridges match full states at the gap boundaries only).

    ``stats`` is a :class:`frem.em.SuffStatModel`; the returned vector sums
    the per-gap conditional expectations of its statistics.
    """
    theta = model.require_admissible(theta)
    full = obs.fully_observed()
    if not (full[0] and full[-1]):
        raise UnsupportedModelError(
            "the first and last observation times must observe the full "
            "state to anchor the gap decomposition")
    times = obs.times[full]
    values = obs.values[full]
    d = obs.dim
    z = np.zeros(stats.stat_dim)
    reports = []
    for g in range(times.shape[0] - 1):
        t0, t1 = int(times[g]), int(times[g + 1])
        a, b = values[g], values[g + 1]
        length = t1 - t0
        if length == 1:
            z += stats.gap_stats(a[None, :], b[None, :],
                                 np.empty((1, 0, d)))[0]
            reports.append(None)
            continue
        c = default_crossover(t0, t1)
        grid = tuple(t for t in range(t0 + 1, t1) if t != c)

        def functional(states, a=a, b=b):
            return stats.gap_stats(a, b, states)

        query = BridgeQuery(start_time=t0, start_state=a, end_time=t1,
                            end_state=b, crossover=c, grid=grid,
                            functional=functional)
        # The factorized payload path needs an interior state on each side
        # of the crossover; shorter gaps take the generic route.
        plan = stats if (length >= 3 and getattr(
            stats, "has_pair_factorization", False)) else None
        try:
            est = estimate_bridge(model, theta, query, n_samples, rng,
                                  kernel=kernel, bandwidth=bandwidth,
                                  box_scale=box_scale, pair_plan=plan)
        except DegenerateBridgeError as err:
            raise DegenerateBridgeError(
                f"gap [{t0}, {t1}]: {err}", gap=(t0, t1)) from err
        z += est.ratio
        reports.append(est)
    return ZVectorResult(z=z, gap_estimates=tuple(reports))
