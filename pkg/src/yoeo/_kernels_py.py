"""Numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` argument for argument and are used whenever the
compiled extension is unavailable (or ``YOEO_PURE_PYTHON=1`` is set).
"""

import numpy as np


def quantile_huber(pred, target, taus, kappa):
    """Quantile-Huber loss and its gradient w.r.t. ``pred``.

    pred: (B, N) predicted quantile values at levels ``taus`` (B, N).
    target: (B, M) target samples.
    Returns (loss, grad) where loss = mean_b sum_i mean_j rho(target_bj - pred_bi).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    taus = np.asarray(taus, dtype=np.float64)
    B, M = target.shape
    u = target[:, None, :] - pred[:, :, None]  # (B, N, M)
    abs_u = np.abs(u)
    quad = abs_u <= kappa
    huber = np.where(quad, 0.5 * u * u, kappa * (abs_u - 0.5 * kappa))
    weight = np.abs(taus[:, :, None] - (u < 0.0))
    loss = float((weight * huber).sum() / (kappa * M * B))
    # d huber / du is u inside the band and kappa*sign(u) outside
    dh = np.where(quad, u, kappa * np.sign(u))
    grad = -(weight * dh).sum(axis=2) / (kappa * M * B)
    return loss, grad


def logsumexp_weights(x):
    """Row-wise stabilized log-sum-exp and its softmax gradient."""
    x = np.asarray(x, dtype=np.float64)
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=1, keepdims=True)
    return (m + np.log(s))[:, 0], e / s


def nstep_returns(rewards, dones, episode_end, starts, n, gamma):
    """Truncated n-step discounted reward sums.

    For each start index t the window covers t .. min(t + n, episode_end[t]) - 1
    and stops early at a terminal transition. Returns (sums, k, terminal) where
    k is the number of reward terms used.
    """
    starts = np.asarray(starts, dtype=np.int64)
    B = starts.shape[0]
    sums = np.zeros(B)
    k = np.zeros(B, dtype=np.int64)
    terminal = np.zeros(B, dtype=bool)
    alive = np.ones(B, dtype=bool)
    limit = np.minimum(starts + n, episode_end[starts])
    disc = 1.0
    for i in range(n):
        idx = starts + i
        alive &= idx < limit
        if not alive.any():
            break
        safe = np.where(alive, idx, 0)
        sums += np.where(alive, disc * rewards[safe], 0.0)
        k += alive
        hit = alive & dones[safe]
        terminal |= hit
        alive &= ~hit
        disc *= gamma
    return sums, k, terminal


def knn_indices(points, query, k):
    """Indices of the ``k`` nearest rows of ``points`` to ``query``.

    Ordered by (squared distance, index) so equal distances resolve to the
    lowest index.
    """
    points = np.asarray(points, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    n = points.shape[0]
    k = min(int(k), n)
    diff = points - query
    d = np.einsum("ij,ij->i", diff, diff)
    if k < n:
        kth = np.partition(d, k - 1)[k - 1]
        below = np.flatnonzero(d < kth)
        ties = np.flatnonzero(d == kth)[: k - below.size]
        cand = np.concatenate([below, ties])
    else:
        cand = np.arange(n)
    order = np.lexsort((cand, d[cand]))
    return cand[order].astype(np.int64)


def cosine_basis(taus, n_cos):
    """cos(pi * i * tau) for i < n_cos along a new trailing axis."""
    taus = np.asarray(taus, dtype=np.float64)
    return np.cos(np.pi * taus[..., None] * np.arange(n_cos))
