"""Kernel-weighted double sums over two point clouds.

Both routines evaluate

    sum_i sum_j F(payload_x[i], payload_y[j]) * K_eps(x[i] - y[j])

for a compactly supported kernel.  ``naive_double_sum`` visits all n_x*n_y
pairs (in x-chunks, to bound memory) and serves as the exactness oracle.
``fast_double_sum`` restricts the enumeration to pairs that can actually
carry kernel mass.  In one dimension it sorts the second cloud and turns
each x point into one contiguous run of within-support y positions (two
binary searches per point).  In higher dimensions it bins both clouds into
axis-aligned boxes whose sides are at least ``box_scale * support_radius *
bandwidth`` (box_scale > 1), groups the second cloud by box with a counting
index, and enumerates candidates from the neighboring boxes; along the last
coordinate the three neighbor boxes are consecutive, so each x point again
contributes contiguous runs.  Total work is O((n_x + n_y) log n_y +
#candidates).  The kernel is evaluated on the original coordinates, so up
to floating-point reassociation the two routines return identical values.

``combine(px, py) -> (n, out_dim)`` folds pair payloads into the summand and
must be vectorized (and accept zero-length blocks).  ``combine=None`` sums
the kernel weights themselves.

For bilinear summands under the one-dimensional Epanechnikov kernel,
``epanechnikov_bridge_moments`` skips pair materialization altogether: a
compiled merge join walks both sorted clouds once and accumulates the
weighted moment matrix of the feature rows in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numba
import numpy as np

from .kernels import KernelSpec, eval_kernel

#: Upper bound on candidate pairs materialized at once.
PAIR_CHUNK = 1 << 21

#: Cap on the total box count (bounds the counting-index memory).
_MAX_TOTAL_BOXES = 1 << 23


@dataclass(frozen=True)
class PairSumResult:
    values: np.ndarray  # (out_dim,)
    n_pairs: int        # pairs with a nonzero kernel weight


def _as_cloud(pts, dim_hint=None):
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError("point cloud must be a (n, d) array")
    if dim_hint is not None and pts.shape[1] != dim_hint:
        raise ValueError(f"point clouds disagree in dimension: "
                         f"{pts.shape[1]} vs {dim_hint}")
    return pts


def _payload(arr, n):
    if arr is None:
        return np.empty((n, 0))
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] != n:
        raise ValueError("payload row count does not match point count")
    return arr


def _out_dim(combine, px, py):
    if combine is None:
        return 1
    # Probe with one real pair when possible; zero-size inputs trip up
    # functionals that reshape with inferred dimensions.
    k = 1 if (px.shape[0] and py.shape[0]) else 0
    probe = np.asarray(combine(px[:k], py[:k]), dtype=float)
    if probe.ndim == 1:
        return 1
    return probe.shape[1]


def _accumulate(acc, kv, combine, px, py, xi, yj):
    """Add the contribution of candidate pairs (xi, yj); returns #active."""
    nz = np.flatnonzero(kv)
    if nz.size == 0:
        return 0
    kv = kv[nz]
    if combine is None:
        acc[0] += kv.sum()
    else:
        f = np.asarray(combine(px[xi[nz]], py[yj[nz]]), dtype=float)
        if f.ndim == 1:
            f = f[:, None]
        acc += kv @ f
    return int(nz.size)


def naive_double_sum(x_pts, y_pts, kernel: KernelSpec, combine=None,
                     x_payload=None, y_payload=None,
                     pair_chunk: int = PAIR_CHUNK) -> PairSumResult:
    """Reference quadratic evaluation of the kernel-weighted double sum."""
    x_pts = _as_cloud(x_pts)
    y_pts = _as_cloud(y_pts, x_pts.shape[1])
    px = _payload(x_payload, x_pts.shape[0])
    py = _payload(y_payload, y_pts.shape[0])
    out_dim = _out_dim(combine, px, py)
    acc = np.zeros(out_dim)
    n_pairs = 0
    n_x, n_y = x_pts.shape[0], y_pts.shape[0]
    if n_x and n_y:
        rows = max(1, pair_chunk // n_y)
        all_j = np.arange(n_y)
        for lo in range(0, n_x, rows):
            hi = min(lo + rows, n_x)
            diff = x_pts[lo:hi, None, :] - y_pts[None, :, :]
            kv = eval_kernel(kernel, diff.reshape(-1, x_pts.shape[1]))
            xi = np.repeat(np.arange(lo, hi), n_y)
            yj = np.tile(all_j, hi - lo)
            n_pairs += _accumulate(acc, kv, combine, px, py, xi, yj)
    return PairSumResult(values=acc, n_pairs=n_pairs)


def _sum_over_runs(acc, x_ids, start, counts, order, x_pts, y_pts, kernel,
                   combine, px, py, pair_chunk):
    """Accumulate candidate runs against the sorted y cloud.

    Run ``k`` pairs x point ``x_ids[k]`` with sorted positions
    ``[start[k], start[k] + counts[k])``; ``order`` maps sorted positions
    back to y rows.  Runs are materialized in chunks of at most
    ``pair_chunk`` pairs.  Returns the number of pairs with nonzero kernel
    weight.
    """
    have = np.flatnonzero(counts > 0)
    if have.size == 0:
        return 0
    counts = counts[have]
    x_ids = x_ids[have]
    start = start[have]
    n_pairs = 0
    cum = np.cumsum(counts)
    bounds = np.searchsorted(cum, np.arange(pair_chunk, cum[-1], pair_chunk,
                                            dtype=np.int64),
                             side="left") + 1
    for sl_lo, sl_hi in zip(np.r_[0, bounds], np.r_[bounds, counts.size]):
        if sl_lo >= sl_hi:
            continue
        c = counts[sl_lo:sl_hi]
        total = int(c.sum())
        xi = np.repeat(x_ids[sl_lo:sl_hi], c)
        first = np.repeat(np.cumsum(c) - c, c)
        pos = np.repeat(start[sl_lo:sl_hi], c) + np.arange(total) - first
        yj = order[pos]
        kv = eval_kernel(kernel, x_pts[xi] - y_pts[yj])
        n_pairs += _accumulate(acc, kv, combine, px, py, xi, yj)
    return n_pairs


def _box_grid(x_pts, y_pts, reach):
    """Per-dimension box counts/edges covering both clouds.

    Box sides never fall below ``reach``; the total box count is capped at a
    small multiple of the cloud size (finer boxes than that cost more in
    index memory than they save in candidates), so the counting index
    allocates O(min(n, cap)) memory.  Larger boxes only add candidate pairs,
    never lose active ones.
    """
    lo = np.minimum(x_pts.min(axis=0), y_pts.min(axis=0))
    hi = np.maximum(x_pts.max(axis=0), y_pts.max(axis=0))
    span = hi - lo
    n_boxes = np.maximum((span / reach).astype(np.int64), 1)
    total = float(np.prod(n_boxes.astype(float)))
    cap = min(_MAX_TOTAL_BOXES,
              max(4 * max(x_pts.shape[0], y_pts.shape[0]), 4096))
    if total > cap:
        shrink = (cap / total) ** (1.0 / len(span))
        n_boxes = np.maximum((n_boxes * shrink).astype(np.int64), 1)
    side = span / n_boxes
    side[side == 0] = 1.0  # flat dimension: every point lands in box 0
    return lo, side, n_boxes


def fast_double_sum(x_pts, y_pts, kernel: KernelSpec, combine=None,
                    x_payload=None, y_payload=None, box_scale: float = 1.5,
                    pair_chunk: int = PAIR_CHUNK) -> PairSumResult:
    """Box-sorted evaluation; agrees with :func:`naive_double_sum` exactly
    up to floating-point summation order."""
    if box_scale <= 1.0:
        raise ValueError("box_scale must exceed 1 (boxes must cover the "
                         "kernel support)")
    x_pts = _as_cloud(x_pts)
    y_pts = _as_cloud(y_pts, x_pts.shape[1])
    px = _payload(x_payload, x_pts.shape[0])
    py = _payload(y_payload, y_pts.shape[0])
    out_dim = _out_dim(combine, px, py)
    n_x, n_y = x_pts.shape[0], y_pts.shape[0]
    if n_x == 0 or n_y == 0:
        return PairSumResult(values=np.zeros(out_dim), n_pairs=0)

    d = x_pts.shape[1]
    if d == 1:
        # Sorting the y cloud gives the exact within-support candidate set:
        # one contiguous run per x point, found by two binary searches.
        # Sorting the x queries as well keeps consecutive searches on the
        # same tree path, which is several times faster than random order.
        acc = np.zeros(out_dim)
        order = np.argsort(y_pts[:, 0]).astype(np.int32)
        ys = y_pts[order, 0]
        xo = np.argsort(x_pts[:, 0]).astype(np.int32)
        xs = x_pts[xo, 0]
        h = kernel.support_radius * kernel.bandwidth
        start = np.searchsorted(ys, xs - h, side="left")
        stop = np.searchsorted(ys, xs + h, side="right")
        n_pairs = _sum_over_runs(acc, xo, start, stop - start, order,
                                 x_pts, y_pts, kernel, combine,
                                 px, py, pair_chunk)
        return PairSumResult(values=acc, n_pairs=n_pairs)

    reach = box_scale * kernel.support_radius * kernel.bandwidth
    lo, side, n_boxes = _box_grid(x_pts, y_pts, reach)
    if np.all(n_boxes == 1):
        # Whole domain fits in one box: nothing to gain from sorting.
        return naive_double_sum(x_pts, y_pts, kernel, combine, px, py,
                                pair_chunk)

    def cells_of(pts):
        c = np.floor((pts - lo) / side).astype(np.int64)
        np.clip(c, 0, n_boxes - 1, out=c)  # top faces fold into the last box
        return c

    # Row-major linear box index and a counting index over the y cloud:
    # ends[t] = #(y in boxes 0..t), so box t occupies sorted positions
    # [ends[t-1], ends[t]).
    strides = np.ones(d, dtype=np.int64)
    for k in range(d - 2, -1, -1):
        strides[k] = strides[k + 1] * n_boxes[k + 1]
    total_boxes = int(strides[0] * n_boxes[0])
    x_cells = cells_of(x_pts)
    y_idx = cells_of(y_pts) @ strides
    order = np.argsort(y_idx, kind="stable").astype(np.int32)
    ends = np.zeros(total_boxes + 1, dtype=np.int64)
    np.cumsum(np.bincount(y_idx, minlength=total_boxes), out=ends[1:])

    x_last = x_cells[:, d - 1]
    nb_last = int(n_boxes[d - 1])
    acc = np.zeros(out_dim)
    n_pairs = 0
    for offset in product((-1, 0, 1), repeat=d - 1):
        shifted = x_cells[:, :-1] + np.asarray(offset, dtype=np.int64)
        valid = np.flatnonzero(
            ((shifted >= 0) & (shifted < n_boxes[:-1])).all(axis=1))
        if valid.size == 0:
            continue
        base = shifted[valid] @ strides[:-1]
        # The three last-dimension neighbors are consecutive boxes: one
        # contiguous run of sorted y positions per x point.
        cl = x_last[valid]
        start = ends[base + np.maximum(cl - 1, 0)]
        stop = ends[base + np.minimum(cl + 1, nb_last - 1) + 1]
        n_pairs += _sum_over_runs(acc, valid, start, stop - start, order,
                                  x_pts, y_pts, kernel, combine, px, py,
                                  pair_chunk)
    return PairSumResult(values=acc, n_pairs=n_pairs)


@numba.njit(cache=True, nogil=True)
def _bridge_join(xs, ys, xo, yo, f_mat, r_mat, weights, eps, S):
    """Merge join of two sorted 1-d clouds under the Epanechnikov kernel.

    For every within-support pair (i, j) this accumulates

        (eps^2 - (x_i - y_j)^2) * weights[j] * [1, f_i] [1, r_j]^T

    into ``S`` (the caller applies the kernel's constant factor) and
    returns the number of pairs with nonzero kernel weight.  ``xo``/``yo``
    map sorted positions back to feature rows.  The left run edge advances
    monotonically, so the scan is linear in the cloud sizes plus the number
    of active pairs; feature rows are touched while their window is hot.
    """
    n_y = ys.shape[0]
    pf = f_mat.shape[1]
    pr = r_mat.shape[1]
    eps2 = eps * eps
    n_pairs = 0
    j_lo = 0
    for i in range(xs.shape[0]):
        x = xs[i]
        left = x - eps
        right = x + eps
        while j_lo < n_y and ys[j_lo] < left:
            j_lo += 1
        xi = xo[i]
        for j in range(j_lo, n_y):
            y = ys[j]
            if y > right:
                break
            k = eps2 - (x - y) * (x - y)
            if k > 0.0:
                n_pairs += 1
                yj = yo[j]
                wk = k * weights[yj]
                S[0, 0] += wk
                for s in range(pr):
                    S[0, s + 1] += wk * r_mat[yj, s]
                for r in range(pf):
                    awk = f_mat[xi, r] * wk
                    S[r + 1, 0] += awk
                    for s in range(pr):
                        S[r + 1, s + 1] += awk * r_mat[yj, s]
    return n_pairs


def epanechnikov_bridge_moments(x_pts, y_pts, kernel: KernelSpec,
                                fwd_feat, rev_feat,
                                weights) -> tuple[np.ndarray, int]:
    """Weighted moment matrix of a forward-reverse pairing under the 1-d
    Epanechnikov kernel,

        S[r, s] = sum_ij K_eps(x_i - y_j) w_j [1, f_i]_r [1, r_j]_s,

    for feature rows ``f_i`` of ``fwd_feat`` (n_x, pf) and ``r_j`` of
    ``rev_feat`` (n_y, pr) with per-point weights ``w_j``; the result has
    shape (1 + pf, 1 + pr), so S[0, 0] is the plain weighted kernel mass.
    Every bilinear statistic of the pairing is a contraction of S.

    Sorting both clouds turns the support test into a merge join: each x
    point meets one contiguous run of y positions whose left edge only
    moves forward, and a compiled scan accumulates the rank-one updates
    directly — no candidate arrays, no augmented feature copies.  The
    summand per pair is identical to the pairwise evaluation, so the two
    agree up to summation order.
    """
    if kernel.family != "epanechnikov" or kernel.dim != 1:
        raise ValueError("bridge moments require the 1-d Epanechnikov "
                         "kernel")
    x_pts = _as_cloud(x_pts)
    y_pts = _as_cloud(y_pts, x_pts.shape[1])
    fwd_feat = np.ascontiguousarray(fwd_feat, dtype=float)
    rev_feat = np.ascontiguousarray(rev_feat, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    n_x, n_y = x_pts.shape[0], y_pts.shape[0]
    if fwd_feat.ndim != 2 or fwd_feat.shape[0] != n_x:
        raise ValueError("fwd_feat must be a (n_x, pf) array")
    if rev_feat.ndim != 2 or rev_feat.shape[0] != n_y:
        raise ValueError("rev_feat must be a (n_y, pr) array")
    if weights.shape != (n_y,):
        raise ValueError("weights must be a (n_y,) array")
    S = np.zeros((1 + fwd_feat.shape[1], 1 + rev_feat.shape[1]))
    if n_x == 0 or n_y == 0:
        return S, 0

    eps = float(kernel.bandwidth)
    xo = np.argsort(x_pts[:, 0]).astype(np.int32)
    yo = np.argsort(y_pts[:, 0]).astype(np.int32)
    xs = x_pts[xo, 0]
    ys = y_pts[yo, 0]
    n_pairs = _bridge_join(xs, ys, xo, yo, fwd_feat, rev_feat, weights,
                           eps, S)
    S *= 0.75 / (eps * eps * eps)
    return S, int(n_pairs)
