import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from yoeo import _kernels_py, kernels

try:
    from yoeo import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

needs_ext = pytest.mark.skipif(_kernels_c is None, reason="compiled kernels not built")


def _episodes(rng, n_eps=6, max_len=9):
    lengths = rng.integers(1, max_len, size=n_eps)
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    n = int(lengths.sum())
    dones = np.zeros(n, dtype=bool)
    ends = starts + lengths
    for e in ends:
        dones[e - 1] = rng.random() < 0.5
    episode_end = np.repeat(ends, lengths).astype(np.int64)
    return rng.normal(size=n), dones, episode_end


def _naive_nstep(rewards, dones, episode_end, t, n, gamma):
    total, k = 0.0, 0
    while k < n and t + k < episode_end[t]:
        total += gamma**k * rewards[t + k]
        k += 1
        if dones[t + k - 1]:
            return total, k, True
    return total, k, False


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")


@given(seed=st.integers(0, 10_000), n=st.integers(1, 12))
def test_nstep_matches_naive_loop(seed, n):
    rng = np.random.default_rng(seed)
    rewards, dones, episode_end = _episodes(rng)
    starts = np.arange(len(rewards))
    sums, k, term = kernels.nstep_returns(rewards, dones, episode_end, starts, n, 0.97)
    for t in starts:
        want = _naive_nstep(rewards, dones, episode_end, t, n, 0.97)
        assert sums[t] == pytest.approx(want[0], rel=1e-12, abs=1e-12)
        assert (k[t], bool(term[t])) == want[1:]


@given(seed=st.integers(0, 10_000), k=st.integers(1, 40))
def test_knn_matches_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    pts = rng.integers(-3, 4, size=(30, 2)).astype(float)  # many exact ties
    q = rng.integers(-3, 4, size=2).astype(float)
    d = ((pts - q) ** 2).sum(axis=1)
    want = np.lexsort((np.arange(len(pts)), d))[: min(k, len(pts))]
    np.testing.assert_array_equal(kernels.knn_indices(pts, q, k), want)


def test_logsumexp_is_stable_for_large_inputs():
    x = np.array([[1000.0, 1000.0], [-1000.0, -1001.0]])
    lse, w = kernels.logsumexp_weights(x)
    assert lse[0] == pytest.approx(1000.0 + np.log(2.0))
    assert lse[1] == pytest.approx(-1000.0 + np.log1p(np.exp(-1.0)))
    np.testing.assert_allclose(w.sum(axis=1), 1.0)


@needs_ext
@given(seed=st.integers(0, 10_000))
def test_backends_agree(seed):
    rng = np.random.default_rng(seed)
    pred = rng.normal(size=(4, 5))
    targ = rng.normal(size=(4, 7)) * 3
    taus = rng.uniform(0.01, 0.99, size=(4, 5))
    a = _kernels_py.quantile_huber(pred, targ, taus, 1.0)
    b = _kernels_c.quantile_huber(pred, targ, taus, 1.0)
    assert a[0] == pytest.approx(b[0], rel=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-12, atol=1e-15)

    x = rng.normal(size=(6, 11)) * 50
    for u, v in zip(_kernels_py.logsumexp_weights(x), _kernels_c.logsumexp_weights(x)):
        np.testing.assert_allclose(u, v, rtol=1e-12)

    rewards, dones, episode_end = _episodes(rng)
    idx = rng.integers(0, len(rewards), size=20)
    for u, v in zip(_kernels_py.nstep_returns(rewards, dones, episode_end, idx, 4, 0.9),
                    _kernels_c.nstep_returns(rewards, dones, episode_end, idx, 4, 0.9)):
        np.testing.assert_allclose(np.asarray(u, dtype=float), np.asarray(v, dtype=float), rtol=1e-12)

    pts = rng.normal(size=(50, 3))
    np.testing.assert_array_equal(_kernels_py.knn_indices(pts, pts[0], 7), _kernels_c.knn_indices(pts, pts[0], 7))

    t = rng.uniform(0, 1, size=(3, 4))
    np.testing.assert_allclose(_kernels_py.cosine_basis(t, 64), _kernels_c.cosine_basis(t, 64), atol=1e-12)
