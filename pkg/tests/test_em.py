import dataclasses

import numpy as np
import pytest

from frem.chain import ObservationSet, simulate_forward
from frem.em import (FremConfig, FremState, IterationRecord, SuffStatModel,
                     geometric_schedule, init_state, m_step, q_function,
                     run_frem, run_frem_replicates, stable_iterate)
from frem.errors import MStepFailureError
from frem.models import ou
from frem.rng import substream

DT = 0.1


@pytest.fixture
def ou_pieces():
    return ou.make_model(DT), ou.make_suffstats(DT)


def small_obs():
    return ObservationSet(times=[0, 2], values=[[0.1], [0.2]])


def manual_config(theta0, n_iter, samples, eps, halfwidth=1.0, seed=0):
    return FremConfig(theta0=np.atleast_1d(theta0), n_iterations=n_iter,
                      sample_schedule=(samples,) * n_iter,
                      bandwidth_schedule=(eps,) * n_iter,
                      compact_halfwidth=halfwidth, seed=seed)


# ---------------------------------------------------------------------------
# objective and maximizer


def test_q_function_hand_value(ou_pieces):
    _, stats = ou_pieces
    z = np.array([2.0, 0.32, 2.44, 0.5])
    lam = 1.1
    want = (2.0 * (-0.5 * np.log(2 * np.pi * DT)) + lam * 0.32
            - 0.5 * lam ** 2 * DT * 2.44 - 0.5 / DT * 0.5)
    assert q_function(stats, [lam], z) == pytest.approx(want, rel=1e-13)


def test_q_function_scales_with_statistics(ou_pieces):
    # phi == 0 for this model, so Q is linear in z.
    _, stats = ou_pieces
    z = np.array([3.0, 0.5, 1.5, 0.7])
    base = q_function(stats, [0.8], z)
    assert q_function(stats, [0.8], 2.5 * z) == pytest.approx(2.5 * base)
    with pytest.raises(ValueError):
        q_function(stats, [0.8], z[:3])


def test_m_step_closed_form_and_numeric_agree(ou_pieces):
    _, stats = ou_pieces
    z = np.array([2.0, 0.32, 2.44, 0.5])
    closed = m_step(stats, z)
    assert closed[0] == pytest.approx(0.32 / (DT * 2.44), rel=1e-13)
    numeric = m_step(dataclasses.replace(stats, m_step=None), z,
                     theta_prev=[0.5])
    assert numeric[0] == pytest.approx(closed[0], abs=1e-6)


def test_m_step_failure_modes(ou_pieces):
    _, stats = ou_pieces
    z = np.array([2.0, 0.32, 2.44, 0.5])
    with pytest.raises(MStepFailureError):
        m_step(dataclasses.replace(stats, m_step=None), z)  # no start point
    with pytest.raises(MStepFailureError):
        m_step(dataclasses.replace(
            stats, m_step=lambda z: np.array([np.nan])), z)


def test_suffstat_model_validation(ou_pieces):
    _, stats = ou_pieces
    with pytest.raises(ValueError):
        SuffStatModel(name="bad", param_dim=0, stat_dim=4, phi=stats.phi,
                      psi=stats.psi, gap_stats=stats.gap_stats)
    with pytest.raises(ValueError):
        dataclasses.replace(stats, pair_coeffs=np.zeros((2, 3, 3)))


# ---------------------------------------------------------------------------
# schedules and configuration


def test_geometric_schedule_values():
    assert geometric_schedule(2000, 4.0, 6) == (
        2000, 8000, 32000, 128000, 512000, 2048000)
    eps = geometric_schedule(5e-4, 0.25, 6)
    np.testing.assert_allclose(eps, [5e-4 * 4.0 ** -m for m in range(6)],
                               rtol=1e-15)
    assert geometric_schedule(10, 2.0, 0) == ()
    with pytest.raises(ValueError):
        geometric_schedule(10, 2.0, -1)


def test_geometric_config_matches_schedules():
    cfg = FremConfig.geometric(np.array([1.0]), 6, seed=5)
    assert cfg.sample_schedule == geometric_schedule(2000, 4.0, 6)
    np.testing.assert_allclose(cfg.bandwidth_schedule,
                               geometric_schedule(5e-4, 0.25, 6))
    assert cfg.seed == 5 and cfg.n_iterations == 6


def test_config_validation():
    ok = dict(theta0=[1.0], n_iterations=2, sample_schedule=(10, 20),
              bandwidth_schedule=(0.1, 0.05))
    FremConfig(**ok)
    with pytest.raises(ValueError):
        FremConfig(**{**ok, "sample_schedule": (10,)})
    with pytest.raises(ValueError):
        FremConfig(**{**ok, "bandwidth_schedule": (0.1,)})
    with pytest.raises(ValueError):
        FremConfig(**{**ok, "sample_schedule": (20, 10)})
    with pytest.raises(ValueError):
        FremConfig(**{**ok, "sample_schedule": (0, 20)})
    with pytest.raises(ValueError):
        FremConfig(**{**ok, "bandwidth_schedule": (0.1, 0.0)})
    with pytest.raises(ValueError):
        FremConfig(**{**ok, "compact_halfwidth": 0.0})
    with pytest.raises(ValueError):
        FremConfig(**{**ok, "n_iterations": -1})


# ---------------------------------------------------------------------------
# stabilized iteration


def test_escaping_maximizer_resets_and_box_doubles(ou_pieces):
    model, stats = ou_pieces
    # A maximizer pinned 1.5 away from the start escapes the unit box but
    # fits the doubled one, so: reset once, then accept.
    pinned = dataclasses.replace(stats, m_step=lambda z: np.array([2.5]))
    cfg = manual_config([1.0], 2, samples=60, eps=0.5)
    state = init_state(cfg)
    state = stable_iterate(model, pinned, small_obs(), cfg, state,
                           substream(1, 0))
    assert state.reset_count == 1 and state.compact_level == 1
    first = state.trace[0]
    assert first.reset and np.isnan(first.q_value)
    np.testing.assert_array_equal(state.theta, [1.0])
    assert len(first.n_pairs) == 1 and first.n_pairs[0] > 0

    state = stable_iterate(model, pinned, small_obs(), cfg, state,
                           substream(1, 1))
    assert state.reset_count == 1 and state.compact_level == 1
    second = state.trace[1]
    assert not second.reset and np.isfinite(second.q_value)
    np.testing.assert_array_equal(state.theta, [2.5])


def test_inadmissible_maximizer_resets(ou_pieces):
    model, stats = ou_pieces
    # Inside the box but outside the model's admissible set.
    pinned = dataclasses.replace(stats, m_step=lambda z: np.array([-11.0]))
    cfg = manual_config([-5.0], 1, samples=60, eps=0.5, halfwidth=10.0)
    state = stable_iterate(model, pinned, small_obs(), cfg, init_state(cfg),
                           substream(2, 0))
    assert state.reset_count == 1
    np.testing.assert_array_equal(state.theta, [-5.0])


def test_maximizer_error_resets_with_diagnostics(ou_pieces):
    model, stats = ou_pieces

    def boom(z):
        raise MStepFailureError("forced")

    failing = dataclasses.replace(stats, m_step=boom)
    cfg = manual_config([1.0], 1, samples=60, eps=0.5)
    state = stable_iterate(model, failing, small_obs(), cfg, init_state(cfg),
                           substream(3, 0))
    record = state.trace[0]
    assert record.reset and state.reset_count == 1
    assert np.all(np.isfinite(record.z))  # estimation succeeded first
    assert record.n_pairs and record.n_pairs[0] > 0


def test_degenerate_bridge_resets_with_empty_diagnostics(ou_pieces):
    model, stats = ou_pieces
    cfg = manual_config([1.0], 1, samples=20, eps=1e-15)
    state = stable_iterate(model, stats, small_obs(), cfg, init_state(cfg),
                           substream(4, 0))
    record = state.trace[0]
    assert record.reset and state.reset_count == 1
    assert np.all(np.isnan(record.z))
    assert record.n_pairs == () and record.weight_cv == ()


def test_iterating_past_schedule_raises(ou_pieces):
    model, stats = ou_pieces
    cfg = manual_config([1.0], 1, samples=20, eps=0.5)
    state = stable_iterate(model, stats, small_obs(), cfg, init_state(cfg),
                           substream(5, 0))
    with pytest.raises(ValueError):
        stable_iterate(model, stats, small_obs(), cfg, state, substream(5, 1))


# ---------------------------------------------------------------------------
# full runs


def test_fully_observed_run_is_deterministic_em(ou_pieces, rng_factory):
    model, stats = ou_pieces
    path = simulate_forward(model, [0.9], [0.5], 0, 30, rng_factory("full"))
    obs = ObservationSet(times=path.times, values=path.states)
    x = path.states[:, 0]
    s1 = float(np.sum(x[:-1] * np.diff(x)))
    s2 = float(np.sum(x[:-1] ** 2))
    mle = s1 / (DT * s2)

    cfg = manual_config([0.2], 2, samples=5, eps=1e-6, halfwidth=50.0)
    state = run_frem(model, stats, obs, cfg)
    # Unit gaps are evaluated exactly: one step reaches the complete-data
    # maximizer, the second confirms the fixed point.
    assert state.reset_count == 0
    assert state.trace[0].theta[0] == pytest.approx(mle, rel=1e-12)
    assert state.trace[1].step_norm == 0.0
    assert state.theta[0] == pytest.approx(mle, rel=1e-12)


def frem_test_setup(rng_factory):
    model = ou.make_model(DT)
    stats = ou.make_suffstats(DT)
    path = simulate_forward(model, [1.0], [0.3], 0, 20, rng_factory("part"))
    times = np.arange(0, 21, 5)
    obs = ObservationSet(times=times, values=path.states[times])
    cfg = FremConfig.geometric(np.array([0.8]), 2, m0=1000, eps0=0.1,
                               compact_halfwidth=4.0, seed=11)
    return model, stats, obs, cfg


def test_run_frem_reproducible_and_replicates_differ(rng_factory):
    model, stats, obs, cfg = frem_test_setup(rng_factory)
    a = run_frem(model, stats, obs, cfg, replicate_id=0)
    b = run_frem(model, stats, obs, cfg, replicate_id=0)
    c = run_frem(model, stats, obs, cfg, replicate_id=1)
    np.testing.assert_array_equal(a.theta, b.theta)
    for ra, rb in zip(a.trace, b.trace):
        np.testing.assert_array_equal(ra.z, rb.z)
    assert not np.array_equal(a.theta, c.theta)
    assert a.reset_count == 0
    # Both iterates move toward the exact incomplete-data maximizer.
    mle, _ = ou.exact_mle(obs.times, obs.values, DT)
    gaps = [abs(cfg.theta0[0] - mle)] + [abs(r.theta[0] - mle)
                                         for r in a.trace]
    assert gaps[0] > gaps[1] > gaps[2]


def test_replicates_independent_of_scheduling(rng_factory):
    _, _, obs, cfg = frem_test_setup(rng_factory)
    spec = ("ou", {"dt": DT})
    serial = run_frem_replicates(obs, cfg, 3, model_spec=spec, threads=1)
    pooled = run_frem_replicates(obs, cfg, 3, model_spec=spec, threads=2)
    for s, p in zip(serial, pooled):
        np.testing.assert_array_equal(s.theta, p.theta)
        assert s.reset_count == p.reset_count
        for rs, rp in zip(s.trace, p.trace):
            np.testing.assert_array_equal(rs.z, rp.z)


def test_replicate_argument_validation(ou_pieces, rng_factory):
    model, stats, obs, cfg = frem_test_setup(rng_factory)
    with pytest.raises(ValueError):
        run_frem_replicates(obs, cfg, 0, model_spec=("ou", {"dt": DT}))
    with pytest.raises(ValueError):
        run_frem_replicates(obs, cfg, 2, threads=2)  # needs model_spec
    with pytest.raises(ValueError):
        run_frem_replicates(obs, cfg, 2)  # needs model+stats or spec
