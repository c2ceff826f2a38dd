# cython: language_level=3
"""Compiled hot kernels. Signatures match ``yoeo._kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, exp, log, fabs

cnp.import_array()


def quantile_huber(pred, target, taus, double kappa):
    cdef const double[:, ::1] p = np.ascontiguousarray(pred, dtype=np.float64)
    cdef const double[:, ::1] t = np.ascontiguousarray(target, dtype=np.float64)
    cdef const double[:, ::1] tau = np.ascontiguousarray(taus, dtype=np.float64)
    cdef Py_ssize_t B = p.shape[0], N = p.shape[1], M = t.shape[1]
    out = np.zeros((B, N), dtype=np.float64)
    cdef double[:, ::1] g = out
    cdef double scale = 1.0 / (kappa * M * B)
    cdef double total = 0.0, u, au, w, h, dh, acc
    cdef Py_ssize_t b, i, j
    for b in range(B):
        for i in range(N):
            acc = 0.0
            for j in range(M):
                u = t[b, j] - p[b, i]
                au = fabs(u)
                if u < 0.0:
                    w = 1.0 - tau[b, i]
                else:
                    w = tau[b, i]
                if au <= kappa:
                    h = 0.5 * u * u
                    dh = u
                else:
                    h = kappa * (au - 0.5 * kappa)
                    dh = kappa if u > 0.0 else -kappa
                total += w * h
                acc += w * dh
            g[b, i] = -acc * scale
    return total * scale, out


def logsumexp_weights(x):
    cdef const double[:, ::1] a = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t B = a.shape[0], K = a.shape[1]
    lse_arr = np.empty(B, dtype=np.float64)
    w_arr = np.empty((B, K), dtype=np.float64)
    cdef double[::1] lse = lse_arr
    cdef double[:, ::1] w = w_arr
    cdef double m, s, e
    cdef Py_ssize_t b, j
    for b in range(B):
        m = a[b, 0]
        for j in range(1, K):
            if a[b, j] > m:
                m = a[b, j]
        s = 0.0
        for j in range(K):
            e = exp(a[b, j] - m)
            w[b, j] = e
            s += e
        for j in range(K):
            w[b, j] /= s
        lse[b] = m + log(s)
    return lse_arr, w_arr


def nstep_returns(rewards, dones, episode_end, starts, Py_ssize_t n, double gamma):
    cdef const double[::1] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef const cnp.uint8_t[::1] d = np.ascontiguousarray(dones, dtype=np.uint8)
    cdef const cnp.int64_t[::1] end = np.ascontiguousarray(episode_end, dtype=np.int64)
    cdef const cnp.int64_t[::1] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef Py_ssize_t B = st.shape[0]
    sums_arr = np.zeros(B, dtype=np.float64)
    k_arr = np.zeros(B, dtype=np.int64)
    term_arr = np.zeros(B, dtype=bool)
    cdef double[::1] sums = sums_arr
    cdef cnp.int64_t[::1] k = k_arr
    cdef cnp.uint8_t[::1] term = term_arr.view(np.uint8)
    cdef Py_ssize_t b, t0, t, limit
    cdef double disc, acc
    for b in range(B):
        t0 = st[b]
        limit = t0 + n
        if end[t0] < limit:
            limit = end[t0]
        disc = 1.0
        acc = 0.0
        t = t0
        while t < limit:
            acc += disc * r[t]
            disc *= gamma
            t += 1
            if d[t - 1]:
                term[b] = 1
                break
        sums[b] = acc
        k[b] = t - t0
    return sums_arr, k_arr, term_arr


def knn_indices(points, query, Py_ssize_t k):
    cdef const double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[::1] q = np.ascontiguousarray(query, dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0], dim = P.shape[1]
    if k > n:
        k = n
    dist_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] dist = dist_arr
    cdef Py_ssize_t i, j
    cdef double acc, diff
    for i in range(n):
        acc = 0.0
        for j in range(dim):
            diff = P[i, j] - q[j]
            acc += diff * diff
        dist[i] = acc
    if k < n:
        kth = np.partition(dist_arr, k - 1)[k - 1]
        below = np.flatnonzero(dist_arr < kth)
        ties = np.flatnonzero(dist_arr == kth)[: k - below.size]
        cand = np.concatenate([below, ties])
    else:
        cand = np.arange(n)
    order = np.lexsort((cand, dist_arr[cand]))
    return cand[order].astype(np.int64)


def cosine_basis(taus, Py_ssize_t n_cos):
    """cos(pi * i * tau) for i < n_cos by the Chebyshev recurrence."""
    flat = np.ascontiguousarray(taus, dtype=np.float64).reshape(-1)
    cdef const double[::1] tau = flat
    cdef Py_ssize_t m = tau.shape[0]
    out_arr = np.empty((m, n_cos), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double c1, prev, cur, nxt
    cdef Py_ssize_t r, i
    for r in range(m):
        c1 = cos(3.141592653589793 * tau[r])
        prev = 1.0
        cur = c1
        out[r, 0] = 1.0
        if n_cos > 1:
            out[r, 1] = c1
        for i in range(2, n_cos):
            nxt = 2.0 * c1 * cur - prev
            out[r, i] = nxt
            prev = cur
            cur = nxt
    return out_arr.reshape(np.shape(taus) + (n_cos,))
