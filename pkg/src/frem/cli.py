"""Command-line interface.

Four subcommands, each driven by a YAML config file:

    frem simulate --config cfg.yaml   forward trajectories
    frem bridge   --config cfg.yaml   one forward-reverse bridge estimate
    frem frem     --config cfg.yaml   EM parameter estimation runs
    frem bench    --config cfg.yaml   pair-summation timing comparison

``--seed``, ``--threads`` and ``--out`` override the matching config keys.
All tabular output is comma-separated UTF-8 with a header row, decimal
points and LF line endings; figures are PNG files written next to the
tables.  Exit codes: 0 success, 2 configuration problem, 3 numerical
degeneracy during estimation.
"""

from __future__ import annotations

import csv
import functools
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import figures, models
from .bridge import BridgeQuery, default_crossover, estimate_bridge
from .chain import ObservationSet, simulate_forward_batch
from .config import (_as_float, _as_int, _as_vector, command_section,
                     common_options, load_config, model_section)
from .em import FremConfig, run_frem_replicates
from .errors import DEGENERACY_ERRORS, ConfigError
from .kernels import KernelSpec, default_bandwidth
from .pairsum import fast_double_sum, naive_double_sum
from .reverse import build_reverse, simulate_reverse_batch
from .rng import substream

EXIT_CONFIG = 2
EXIT_DEGENERATE = 3


def write_csv(path, header, rows) -> Path:
    """Comma-separated, UTF-8, LF, header row, '.' decimal point."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(c) for c in row])
    return path


def _format_cell(value):
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def _handle_errors(func):
    """Map library errors onto the documented exit codes."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ConfigError as err:
            click.echo(f"config error: {err}", err=True)
            sys.exit(EXIT_CONFIG)
        except DEGENERACY_ERRORS as err:
            click.echo(f"numerical degeneracy: {err}", err=True)
            sys.exit(EXIT_DEGENERATE)

    return wrapper


def _common_params(func):
    func = click.option("--out", type=click.Path(file_okay=False),
                        default=None, help="Output directory.")(func)
    func = click.option("--threads", type=click.IntRange(min=1), default=None,
                        help="Worker count for replicate-level parallelism.")(func)
    func = click.option("--seed", type=click.IntRange(0, 2**64 - 1),
                        default=None, help="Master seed (unsigned 64-bit).")(func)
    func = click.option("--config", "config_path", required=True,
                        type=click.Path(exists=False),
                        help="YAML run configuration.")(func)
    return func


@click.group()
@click.version_option(package_name="frem")
def main():
    """Forward-reverse simulation and EM estimation for Markov chains."""


# ---------------------------------------------------------------------------
# simulate


@main.command()
@_common_params
@_handle_errors
def simulate(config_path, seed, threads, out):
    """Simulate forward trajectories and report path statistics."""
    cfg = load_config(config_path)
    seed, threads, out_dir = common_options(cfg, seed, threads, out)
    name, params = model_section(cfg)
    model, _ = models.build(name, **params)
    section = command_section(cfg, "simulate")

    n_steps = _as_int(section.get("n_steps", 100), "simulate.n_steps", 1)
    n_paths = _as_int(section.get("n_paths", 100), "simulate.n_paths", 1)
    theta = _as_vector(section.get("theta"), "simulate.theta")
    start = _as_vector(section.get("start", [0.0] * model.dim),
                       "simulate.start")
    if start.shape[0] != model.dim:
        raise ConfigError(f"simulate.start must have {model.dim} entries")
    try:
        model.require_admissible(theta)
    except Exception as err:
        raise ConfigError(f"simulate.theta: {err}") from None

    # Same substream label as frem's self-simulated data, so a simulate run
    # and a frem generate block with equal seeds see identical paths and the
    # two pipelines round-trip bit-exactly.
    rng = substream(seed, "data")
    states = simulate_forward_batch(model, theta, start, 0, n_steps,
                                    n_paths, rng)

    steps = np.arange(n_steps + 1)
    rows = []
    for j in range(n_paths):
        for t in steps:
            rows.append([j, t, *states[t, j]])
    header = ["path", "step"] + [f"x{d}" for d in range(model.dim)]
    paths_csv = write_csv(out_dir / "paths.csv", header, rows)

    terminal = states[-1]
    summary_rows = [
        ["terminal_mean", *terminal.mean(axis=0)],
        ["terminal_std", *terminal.std(axis=0, ddof=1 if n_paths > 1 else 0)],
        ["terminal_min", *terminal.min(axis=0)],
        ["terminal_max", *terminal.max(axis=0)],
    ]
    write_csv(out_dir / "summary.csv",
              ["statistic"] + [f"x{d}" for d in range(model.dim)],
              summary_rows)

    figures.plot_paths(steps, states, out_dir / "paths.png",
                       title=f"{name}: {n_paths} paths")
    figures.plot_terminal_histogram(terminal[:, 0], out_dir / "terminal.png",
                                    title=f"{name}: terminal coordinate 0")
    click.echo(f"wrote {paths_csv} ({n_paths} paths, {n_steps} steps)")


# ---------------------------------------------------------------------------
# bridge


@main.command()
@_common_params
@_handle_errors
def bridge(config_path, seed, threads, out):
    """Estimate a doubly pinned conditional expectation."""
    cfg = load_config(config_path)
    seed, threads, out_dir = common_options(cfg, seed, threads, out)
    name, params = model_section(cfg)
    model, _ = models.build(name, **params)
    section = command_section(cfg, "bridge")

    theta = _as_vector(section.get("theta"), "bridge.theta")
    start_time = _as_int(section.get("start_time", 0), "bridge.start_time", 0)
    end_time = _as_int(section.get("end_time"), "bridge.end_time",
                       start_time + 1)
    start_state = _as_vector(section.get("start_state"), "bridge.start_state")
    end_state = _as_vector(section.get("end_state"), "bridge.end_state")
    n_forward = _as_int(section.get("n_forward", 10000), "bridge.n_forward", 1)
    n_reverse = section.get("n_reverse")
    if n_reverse is not None:
        n_reverse = _as_int(n_reverse, "bridge.n_reverse", 1)
    crossover = section.get("crossover")
    if crossover is None:
        crossover = default_crossover(start_time, end_time)
    else:
        crossover = _as_int(crossover, "bridge.crossover", 0)
    bandwidth = section.get("bandwidth")
    if bandwidth is not None:
        bandwidth = _as_float(bandwidth, "bridge.bandwidth", positive=True)
    grid = section.get("grid", [])
    if not isinstance(grid, list):
        raise ConfigError("bridge.grid must be a list of times")
    grid = tuple(_as_int(t, "bridge.grid entry", 0) for t in grid)

    eval_times = tuple(sorted(set(grid) | {crossover}))

    def moments(states):
        flat = states.reshape(states.shape[0], -1)
        return np.concatenate([flat, flat ** 2], axis=1)

    try:
        model.require_admissible(theta)
    except Exception as err:
        raise ConfigError(f"bridge.theta: {err}") from None
    try:
        query = BridgeQuery(start_time=start_time, start_state=start_state,
                            end_time=end_time, end_state=end_state,
                            crossover=crossover, functional=moments, grid=grid)
    except ValueError as err:
        raise ConfigError(f"bridge query: {err}") from None

    rng = substream(seed, "bridge")
    est = estimate_bridge(model, theta, query, n_forward, rng,
                          n_reverse=n_reverse, bandwidth=bandwidth)

    # Standard errors from independent batch replicates (variance of the
    # ratio scales like 1/M, so batch spread rescaled by sqrt(B) estimates
    # the full-sample error).
    batches = _as_int(section.get("batches", 0), "bridge.batches", 0)
    se_ratio, se_den = None, ""
    if batches >= 2:
        m_batch = max(n_forward // batches, 2)
        r_batch = None if n_reverse is None else max(n_reverse // batches, 2)
        ratios, denoms = [], []
        for b in range(batches):
            b_est = estimate_bridge(model, theta, query, m_batch,
                                    substream(seed, "bridge-batch", b),
                                    n_reverse=r_batch, bandwidth=bandwidth)
            ratios.append(b_est.ratio)
            denoms.append(b_est.denominator)
        se_ratio = np.std(ratios, axis=0, ddof=1) / np.sqrt(batches)
        se_den = float(np.std(denoms, ddof=1) / np.sqrt(batches))

    d = model.dim
    k = len(eval_times)
    means = est.ratio[:k * d].reshape(k, d)
    second_moments = est.ratio[k * d:].reshape(k, d)
    numer = est.numerator.reshape(2, k, d)

    def _se(flat_index):
        return "" if se_ratio is None else se_ratio[flat_index]

    rows = [["density", end_time, "", est.denominator, "", se_den]]
    for i, t in enumerate(eval_times):
        for c in range(d):
            flat = i * d + c
            rows.append(["mean", t, c, means[i, c], numer[0, i, c],
                         _se(flat)])
            rows.append(["second_moment", t, c, second_moments[i, c],
                         numer[1, i, c], _se(k * d + flat)])
    write_csv(out_dir / "bridge.csv",
              ["quantity", "time", "coordinate", "value", "numerator", "se"],
              rows)
    write_csv(out_dir / "diagnostics.csv",
              ["n_pairs_hit", "forward_count", "reverse_count",
               "bandwidth", "weight_cv"],
              [[est.n_pairs_hit, est.forward_count, est.reverse_count,
                est.bandwidth, est.weight_cv]])

    # Small illustrative clouds for the figure (separate substream).
    fig_rng = substream(seed, "bridge-figure")
    n_fig = min(4000, n_forward)
    fwd = simulate_forward_batch(model, theta, start_state, start_time,
                                 crossover, n_fig, fig_rng)[-1]
    rev_spec = build_reverse(model, theta, end_time - start_time)
    rstates, _ = simulate_reverse_batch(rev_spec, end_state,
                                        end_time - crossover, n_fig, fig_rng)
    rev = rstates[-1]
    figures.plot_bridge_cloud(fwd, rev, out_dir / "clouds.png",
                              title=f"{name}: crossover clouds at t={crossover}")
    click.echo(f"wrote {out_dir / 'bridge.csv'} "
               f"(density {est.denominator:.6g}, pairs {est.n_pairs_hit})")


# ---------------------------------------------------------------------------
# frem


def _load_observations(section, model):
    """Observations either inline (``data``) or self-simulated (``generate``)."""
    if ("data" in section) == ("generate" in section):
        raise ConfigError("frem section needs exactly one of data / generate")
    if "data" in section:
        data = section["data"]
        if not isinstance(data, dict):
            raise ConfigError("frem.data must be a mapping")
        times = np.asarray(data.get("times", []), dtype=int)
        values = np.asarray(data.get("values", []), dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.size == 0 or values.shape[0] != times.shape[0]:
            raise ConfigError("frem.data times/values lengths disagree")
        if values.shape[1] != model.dim:
            raise ConfigError(f"frem.data values must have {model.dim} "
                              "columns")
        mask = data.get("mask")
        mask = None if mask is None else np.asarray(mask, dtype=bool)
        try:
            return ObservationSet(times=times, values=values, mask=mask)
        except ValueError as err:
            raise ConfigError(f"frem.data: {err}") from None
    gen = section["generate"]
    if not isinstance(gen, dict):
        raise ConfigError("frem.generate must be a mapping")
    n_steps = _as_int(gen.get("n_steps", 40), "generate.n_steps", 1)
    every = _as_int(gen.get("observe_every", 10), "generate.observe_every", 1)
    theta_true = _as_vector(gen.get("theta"), "generate.theta")
    start = _as_vector(gen.get("start", [0.0] * model.dim), "generate.start")
    data_seed = _as_int(gen.get("seed", 0), "generate.seed", 0)
    if start.shape[0] != model.dim:
        raise ConfigError(f"generate.start must have {model.dim} entries")
    try:
        model.require_admissible(theta_true)
    except Exception as err:
        raise ConfigError(f"generate.theta: {err}") from None
    rng = substream(data_seed, "data")
    path = simulate_forward_batch(model, theta_true, start, 0, n_steps, 1,
                                  rng)[:, 0, :]
    obs_times = np.arange(0, n_steps + 1, every)
    if obs_times[-1] != n_steps:
        obs_times = np.append(obs_times, n_steps)
    return ObservationSet(times=obs_times, values=path[obs_times])


@main.command(name="frem")
@_common_params
@_handle_errors
def frem_cmd(config_path, seed, threads, out):
    """Estimate parameters by forward-reverse EM."""
    cfg = load_config(config_path)
    seed, threads, out_dir = common_options(cfg, seed, threads, out)
    name, params = model_section(cfg)
    model, stats = models.build(name, **params)
    section = command_section(cfg, "frem")

    obs = _load_observations(section, model)
    theta0 = _as_vector(section.get("theta0"), "frem.theta0")
    if theta0.shape[0] != stats.param_dim:
        raise ConfigError(f"frem.theta0 must have {stats.param_dim} entries")
    try:
        model.require_admissible(theta0)
    except Exception as err:
        raise ConfigError(f"frem.theta0: {err}") from None
    n_iter = _as_int(section.get("iterations", 6), "frem.iterations", 1)
    m0 = _as_int(section.get("samples0", 2000), "frem.samples0", 1)
    growth = _as_float(section.get("growth", 4.0), "frem.growth",
                       positive=True)
    eps0 = _as_float(section.get("bandwidth0", 5e-4), "frem.bandwidth0",
                     positive=True)
    decay = _as_float(section.get("decay", 4.0), "frem.decay", positive=True)
    halfwidth = _as_float(section.get("compact_halfwidth", 1.0),
                          "frem.compact_halfwidth", positive=True)
    n_rep = _as_int(section.get("replicates", 1), "frem.replicates", 1)

    try:
        run_cfg = FremConfig.geometric(theta0, n_iter, m0=m0, growth=growth,
                                       eps0=eps0, decay=decay,
                                       compact_halfwidth=halfwidth, seed=seed)
    except ValueError as err:
        raise ConfigError(f"frem schedule: {err}") from None

    states = run_frem_replicates(obs, run_cfg, n_rep, model=model,
                                 stats=stats, model_spec=(name, params),
                                 threads=threads)

    span = int(obs.times[-1] - obs.times[0])
    p = stats.param_dim
    header = (["replicate", "iteration"] + [f"theta{i}" for i in range(p)]
              + ["q_per_step", "n_samples", "bandwidth", "reset"])
    rows = []
    for r, st in enumerate(states):
        for rec in st.trace:
            rows.append([r, rec.iteration, *rec.theta,
                         rec.q_value / span, rec.n_samples, rec.bandwidth,
                         int(rec.reset)])
    write_csv(out_dir / "iterations.csv", header, rows)

    finals = np.array([st.theta for st in states])
    frows = [[r, *finals[r], states[r].reset_count] for r in range(n_rep)]
    write_csv(out_dir / "final.csv",
              ["replicate"] + [f"theta{i}" for i in range(p)] + ["resets"],
              frows)

    # Per-iteration aggregate across replicates (std columns empty for a
    # single replicate).
    theta_it = np.array([[rec.theta for rec in st.trace] for st in states])
    q_it = np.array([[rec.q_value / span for rec in st.trace]
                     for st in states])
    tab_rows = []
    for m in range(n_iter):
        rec0 = states[0].trace[m]
        std_t = (theta_it[:, m].std(axis=0, ddof=1) if n_rep > 1
                 else [""] * p)
        std_q = q_it[:, m].std(ddof=1) if n_rep > 1 else ""
        tab_rows.append([m, rec0.n_samples, rec0.bandwidth,
                         *theta_it[:, m].mean(axis=0), *std_t,
                         q_it[:, m].mean(), std_q])
    write_csv(out_dir / "table.csv",
              ["iteration", "n_samples", "bandwidth"]
              + [f"mean_theta{i}" for i in range(p)]
              + [f"std_theta{i}" for i in range(p)]
              + ["mean_q_per_step", "std_q_per_step"], tab_rows)

    # Replicate-estimate snapshots after an early and a late iteration.
    hist_iters = [i for i in (1, 5) if i <= n_iter]
    write_csv(out_dir / "estimate_histograms.csv",
              ["iteration", "replicate"] + [f"theta{i}" for i in range(p)],
              [[it, r, *theta_it[r, it - 1]]
               for it in hist_iters for r in range(n_rep)])
    if n_rep > 1:
        for it in hist_iters:
            figures.plot_terminal_histogram(
                theta_it[:, it - 1, 0], out_dir / f"hist_iter{it}.png",
                title=f"{name}: {n_rep} estimates after iteration {it}")

    exact = None
    if name == "ou" and obs.fully_observed().all():
        lam_hat, loglik = models.ou_exact_mle(obs, float(params.get("dt", 0.1)))
        exact = [lam_hat]
        write_csv(out_dir / "exact_optimum.csv",
                  ["lam_hat", "loglik"], [[lam_hat, loglik]])
    traces = [np.vstack([run_cfg.theta0[None, :]]
                        + [rec.theta[None, :] for rec in st.trace])
              for st in states]
    figures.plot_frem_trace(traces, out_dir / "iterates.png", exact=exact,
                            title=f"{name}: EM iterates "
                                  f"({n_rep} replicate{'s' if n_rep > 1 else ''})")
    mean_final = finals.mean(axis=0)
    click.echo(f"wrote {out_dir / 'final.csv'} "
               f"(mean final estimate {np.array2string(mean_final, precision=5)})")


# ---------------------------------------------------------------------------
# bench


@main.command()
@_common_params
@_handle_errors
def bench(config_path, seed, threads, out):
    """Time the fast pair summation against the quadratic reference."""
    cfg = load_config(config_path)
    seed, threads, out_dir = common_options(cfg, seed, threads, out)
    section = command_section(cfg, "bench")

    sizes = section.get("sizes", [1000, 2000, 4000, 8000])
    if not isinstance(sizes, list) or not sizes:
        raise ConfigError("bench.sizes must be a non-empty list")
    sizes = [_as_int(n, "bench.sizes entry", 2) for n in sizes]
    dim = _as_int(section.get("dim", 1), "bench.dim", 1)
    repeats = _as_int(section.get("repeats", 3), "bench.repeats", 1)
    naive_cap = _as_int(section.get("naive_cap", 2 ** 15), "bench.naive_cap", 2)

    rng = substream(seed, "bench")
    rows = []
    fast_times, naive_times, naive_sizes = [], [], []
    max_rel_dev = None
    for n in sizes:
        x = rng.uniform(0.0, 1.0, size=(n, dim))
        y = rng.uniform(0.0, 1.0, size=(n, dim))
        kernel = KernelSpec(dim=dim, bandwidth=default_bandwidth(n, dim))
        best_fast = min(_time_once(fast_double_sum, x, y, kernel)
                        for _ in range(repeats))
        fast_times.append(best_fast)
        rows.append(["fast", n, best_fast])
        if n <= naive_cap:
            best_naive = min(_time_once(naive_double_sum, x, y, kernel)
                             for _ in range(repeats))
            naive_times.append(best_naive)
            naive_sizes.append(n)
            rows.append(["naive", n, best_naive])
            fast_vals = fast_double_sum(x, y, kernel).values
            naive_vals = naive_double_sum(x, y, kernel).values
            dev = float(np.max(np.abs(fast_vals - naive_vals)
                               / np.maximum(np.abs(naive_vals), 1e-300)))
            max_rel_dev = dev if max_rel_dev is None else max(max_rel_dev, dev)
    write_csv(out_dir / "timing.csv", ["method", "n", "seconds"], rows)

    def _fitted_exponent(ns, secs):
        if len(ns) < 2:
            return ""
        return float(np.polyfit(np.log(ns), np.log(secs), 1)[0])

    write_csv(out_dir / "scaling.csv",
              ["fast_exponent", "naive_exponent", "max_rel_deviation"],
              [[_fitted_exponent(sizes, fast_times),
                _fitted_exponent(naive_sizes, naive_times),
                "" if max_rel_dev is None else max_rel_dev]])

    curves = [fast_times]
    labels = ["fast (sorted boxes)"]
    if naive_times:
        curves = [fast_times[:len(naive_times)], naive_times]
        labels = ["fast (sorted boxes)", "naive (all pairs)"]
        figures.plot_timing(sizes[:len(naive_times)], curves,
                            out_dir / "timing.png", labels=labels)
    else:
        figures.plot_timing(sizes, curves, out_dir / "timing.png",
                            labels=labels)
    click.echo(f"wrote {out_dir / 'timing.csv'} ({len(sizes)} sizes)")


def _time_once(func, x, y, kernel):
    t0 = time.perf_counter()
    func(x, y, kernel)
    return time.perf_counter() - t0


if __name__ == "__main__":
    main()
