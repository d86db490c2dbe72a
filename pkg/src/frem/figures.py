"""Figure rendering for the command-line reports.

Every public helper writes a single PNG next to the delimited output and
returns the path.  Matplotlib is forced onto the ``Agg`` backend so the
commands work in headless environments.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402


def _finish(fig, out_path) -> Path:
    out_path = Path(out_path)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_paths(times, states, out_path, title="Simulated paths") -> Path:
    """Trajectory fan: ``states`` has shape (n_times, n_paths, dim)."""
    states = np.asarray(states)
    n_show = min(states.shape[1], 50)
    fig, axes = plt.subplots(
        states.shape[2], 1, figsize=(7, 2.8 * states.shape[2]), squeeze=False)
    for d in range(states.shape[2]):
        ax = axes[d, 0]
        ax.plot(times, states[:, :n_show, d], lw=0.7, alpha=0.6)
        ax.set_xlabel("time")
        ax.set_ylabel(f"coordinate {d}")
    axes[0, 0].set_title(title)
    return _finish(fig, out_path)


def plot_terminal_histogram(values, out_path,
                            title="Terminal-state histogram") -> Path:
    values = np.asarray(values)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(values, bins=40, density=True, color="tab:blue", alpha=0.8)
    ax.set_xlabel("value")
    ax.set_ylabel("density")
    ax.set_title(title)
    return _finish(fig, out_path)


def plot_bridge_cloud(forward_points, reverse_points, out_path,
                      title="Crossover clouds") -> Path:
    """Forward and reverse crossover samples, first coordinate only."""
    fwd = np.asarray(forward_points)[:, 0]
    rev = np.asarray(reverse_points)[:, 0]
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.histogram_bin_edges(np.concatenate([fwd, rev]), bins=50)
    ax.hist(fwd, bins=bins, density=True, alpha=0.55, label="forward cloud")
    ax.hist(rev, bins=bins, density=True, alpha=0.55, label="reverse cloud")
    ax.set_xlabel("crossover state (coordinate 0)")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend()
    return _finish(fig, out_path)


def plot_frem_trace(traces, out_path, exact=None,
                    title="Parameter iterates") -> Path:
    """Iterate trajectories: ``traces`` is a list of (n_iter+1, p) arrays."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, trace in enumerate(traces):
        trace = np.asarray(trace)
        label = "replicate" if i == 0 else None
        ax.plot(np.arange(trace.shape[0]), trace[:, 0],
                marker="o", ms=3, lw=0.9, alpha=0.7, color="tab:blue",
                label=label)
    if exact is not None:
        ax.axhline(float(np.atleast_1d(exact)[0]), color="tab:red",
                   ls="--", lw=1.2, label="exact optimum")
    ax.set_xlabel("iteration")
    ax.set_ylabel("parameter (coordinate 0)")
    ax.set_title(title)
    ax.legend()
    return _finish(fig, out_path)


def plot_timing(sizes, seconds, out_path, labels=None,
                title="Pair-sum timing") -> Path:
    """Log-log runtime curves; ``seconds`` is (n_methods, n_sizes)."""
    sizes = np.asarray(sizes, dtype=float)
    seconds = np.atleast_2d(np.asarray(seconds, dtype=float))
    if labels is None:
        labels = [f"method {i}" for i in range(seconds.shape[0])]
    fig, ax = plt.subplots(figsize=(6, 4))
    for row, label in zip(seconds, labels):
        ax.loglog(sizes, row, marker="o", label=label)
    ref = seconds[0, 0] * (sizes / sizes[0])
    ax.loglog(sizes, ref, ls=":", color="gray", label="linear reference")
    ax.set_xlabel("sample count")
    ax.set_ylabel("seconds")
    ax.set_title(title)
    ax.legend()
    return _finish(fig, out_path)
