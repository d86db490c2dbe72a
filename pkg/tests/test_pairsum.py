import numpy as np
import pytest

from frem.kernels import KernelSpec, default_bandwidth, eval_kernel
from frem.pairsum import (PairSumResult, epanechnikov_bridge_moments,
                          fast_double_sum, naive_double_sum)


def assert_norm_close(got, want, rtol):
    """Normwise comparison: reassociation noise scales with the largest
    component, so per-component relative checks can trip on cancellation."""
    scale = max(float(np.max(np.abs(want))), 1e-300)
    assert float(np.max(np.abs(got - want))) <= rtol * scale


def triple_loop_sum(x, y, kernel, combine=None, px=None, py=None):
    """Scalar-loop reference, deliberately free of any shared helper."""
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    y = np.atleast_2d(np.asarray(y, dtype=float).T).T
    acc = None
    n_pairs = 0
    for i in range(x.shape[0]):
        for j in range(y.shape[0]):
            kv = float(eval_kernel(kernel, (x[i] - y[j])[None, :])[0])
            if kv == 0.0:
                continue
            n_pairs += 1
            if combine is None:
                term = np.array([kv])
            else:
                term = kv * np.asarray(
                    combine(px[i][None, :], py[j][None, :]),
                    dtype=float).reshape(-1)
            acc = term if acc is None else acc + term
    if acc is None:
        acc = np.zeros(1 if combine is None else
                       np.asarray(combine(px[:1], py[:1])).reshape(1, -1)
                       .shape[1])
    return acc, n_pairs


def random_instance(rng, n_max=200, with_payload=True):
    d = int(rng.integers(1, 3))
    n_x = int(rng.integers(1, n_max))
    n_y = int(rng.integers(1, n_max))
    x = rng.normal(size=(n_x, d))
    y = rng.normal(size=(n_y, d))
    eps = default_bandwidth(max(n_x, n_y), d) * rng.uniform(0.5, 40.0)
    kernel = KernelSpec(dim=d, bandwidth=eps)
    if not with_payload:
        return x, y, kernel, None, None, None
    px = rng.normal(size=(n_x, int(rng.integers(1, 4))))
    py = rng.normal(size=(n_y, int(rng.integers(1, 4))))

    def combine(fa, ra):
        left = np.concatenate([fa, fa[:, :1] * fa], axis=1)
        right = np.concatenate([ra, np.ones((ra.shape[0], 1))], axis=1)
        return np.einsum("np,nq->n", left, right)[:, None] * np.stack(
            [np.ones(fa.shape[0]), fa[:, 0] * ra[:, 0]], axis=1)

    return x, y, kernel, combine, px, py


def test_naive_matches_scalar_loops(rng):
    for _ in range(12):
        x, y, kernel, combine, px, py = random_instance(rng, n_max=40)
        got = naive_double_sum(x, y, kernel, combine, px, py)
        want, n_pairs = triple_loop_sum(x, y, kernel, combine, px, py)
        assert got.n_pairs == n_pairs
        assert_norm_close(got.values, want, 1e-10)


def test_fast_matches_naive_with_payloads(rng):
    for _ in range(25):
        x, y, kernel, combine, px, py = random_instance(rng)
        fast = fast_double_sum(x, y, kernel, combine, px, py)
        naive = naive_double_sum(x, y, kernel, combine, px, py)
        assert fast.n_pairs == naive.n_pairs
        assert_norm_close(fast.values, naive.values, 1e-10)


def test_fast_matches_naive_plain_kernel_mass(rng):
    for _ in range(25):
        x, y, kernel, _, _, _ = random_instance(rng, with_payload=False)
        fast = fast_double_sum(x, y, kernel)
        naive = naive_double_sum(x, y, kernel)
        assert fast.n_pairs == naive.n_pairs
        assert_norm_close(fast.values, naive.values, 1e-10)


def test_gaussian_family_agrees_too(rng):
    x = rng.normal(size=(300, 2))
    y = rng.normal(size=(280, 2))
    kernel = KernelSpec(dim=2, bandwidth=0.25, family="gaussian")
    fast = fast_double_sum(x, y, kernel)
    naive = naive_double_sum(x, y, kernel)
    assert fast.n_pairs == naive.n_pairs
    assert_norm_close(fast.values, naive.values, 1e-10)


def test_small_chunk_size_changes_nothing(rng):
    x, y, kernel, combine, px, py = random_instance(rng)
    a = fast_double_sum(x, y, kernel, combine, px, py, pair_chunk=17)
    b = fast_double_sum(x, y, kernel, combine, px, py)
    assert a.n_pairs == b.n_pairs
    assert_norm_close(a.values, b.values, 1e-11)


def test_no_active_pairs():
    x = np.zeros((5, 1))
    y = np.full((4, 1), 10.0)
    kernel = KernelSpec(dim=1, bandwidth=0.1)
    for func in (fast_double_sum, naive_double_sum):
        res = func(x, y, kernel)
        assert res.n_pairs == 0
        np.testing.assert_array_equal(res.values, [0.0])


def test_empty_cloud():
    kernel = KernelSpec(dim=1, bandwidth=0.1)
    res = fast_double_sum(np.empty((0, 1)), np.zeros((3, 1)), kernel)
    assert isinstance(res, PairSumResult)
    assert res.n_pairs == 0
    assert res.values.shape == (1,) and res.values[0] == 0.0


def test_payload_row_mismatch_rejected():
    kernel = KernelSpec(dim=1, bandwidth=0.5)
    with pytest.raises(ValueError):
        naive_double_sum(np.zeros((3, 1)), np.zeros((3, 1)), kernel,
                         combine=lambda a, b: a[:, 0],
                         x_payload=np.zeros((2, 1)),
                         y_payload=np.zeros((3, 1)))


def test_dimension_mismatch_rejected():
    kernel = KernelSpec(dim=2, bandwidth=0.5)
    with pytest.raises(ValueError):
        fast_double_sum(np.zeros((3, 2)), np.zeros((3, 1)), kernel)


def test_box_scale_must_cover_support():
    kernel = KernelSpec(dim=2, bandwidth=0.5)
    with pytest.raises(ValueError):
        fast_double_sum(np.zeros((3, 2)), np.zeros((3, 2)), kernel,
                        box_scale=1.0)


# ---------------------------------------------------------------------------
# fused bridge moment matrix


def dense_bridge_moments(x, y, kernel, f, r, w):
    aug_f = np.concatenate([np.ones((f.shape[0], 1)), f], axis=1)
    aug_r = np.concatenate([np.ones((r.shape[0], 1)), r], axis=1)
    kv = eval_kernel(kernel, (x[:, None, 0] - y[None, :, 0]).reshape(-1))
    kmat = kv.reshape(x.shape[0], y.shape[0])
    S = np.einsum("ij,ip,j,jq->pq", kmat, aug_f, w, aug_r)
    return S, int(np.count_nonzero(kmat))


def test_bridge_moments_match_dense_expansion(rng):
    for _ in range(10):
        n_x = int(rng.integers(2, 300))
        n_y = int(rng.integers(2, 300))
        x = rng.normal(size=(n_x, 1))
        y = rng.normal(size=(n_y, 1))
        kernel = KernelSpec(dim=1, bandwidth=float(rng.uniform(0.05, 0.6)))
        f = rng.normal(size=(n_x, int(rng.integers(1, 7))))
        r = rng.normal(size=(n_y, int(rng.integers(1, 7))))
        w = rng.uniform(0.1, 2.0, size=n_y)
        S, n_pairs = epanechnikov_bridge_moments(x, y, kernel, f, r, w)
        S_ref, n_ref = dense_bridge_moments(x, y, kernel, f, r, w)
        assert n_pairs == n_ref
        assert_norm_close(S, S_ref, 1e-10)


def test_bridge_moments_empty_and_disjoint():
    kernel = KernelSpec(dim=1, bandwidth=0.1)
    f = np.ones((3, 2))
    r = np.ones((2, 1))
    w = np.ones(2)
    S, n = epanechnikov_bridge_moments(np.zeros((3, 1)) + 5.0,
                                       np.zeros((2, 1)), kernel, f, r, w)
    assert n == 0 and np.all(S == 0.0) and S.shape == (3, 2)


def test_bridge_moments_input_validation():
    kernel = KernelSpec(dim=1, bandwidth=0.1)
    gauss = KernelSpec(dim=1, bandwidth=0.1, family="gaussian")
    two_d = KernelSpec(dim=2, bandwidth=0.1)
    x = np.zeros((3, 1))
    y = np.zeros((2, 1))
    f = np.zeros((3, 2))
    r = np.zeros((2, 2))
    w = np.ones(2)
    with pytest.raises(ValueError):
        epanechnikov_bridge_moments(x, y, gauss, f, r, w)
    with pytest.raises(ValueError):
        epanechnikov_bridge_moments(np.zeros((3, 2)), np.zeros((2, 2)),
                                    two_d, f, r, w)
    with pytest.raises(ValueError):
        epanechnikov_bridge_moments(x, y, kernel, np.zeros(3), r, w)
    with pytest.raises(ValueError):
        epanechnikov_bridge_moments(x, y, kernel, f, np.zeros((3, 2)), w)
    with pytest.raises(ValueError):
        epanechnikov_bridge_moments(x, y, kernel, f, r, np.ones(3))
