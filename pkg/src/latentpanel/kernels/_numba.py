"""Numba-compiled kernels. Same contracts as ``_numpy``."""
import os

import numba
import numpy as np
from numba import njit, prange

# the TBB layer warns and disables itself on older TBB builds; prefer OpenMP
if "NUMBA_THREADING_LAYER" not in os.environ:
    try:
        from numba.np.ufunc import omppool  # noqa: F401
        numba.config.THREADING_LAYER = "omp"
    except ImportError:
        numba.config.THREADING_LAYER = "workqueue"


@njit(cache=True, parallel=True)
def cross_moments(Y):
    # Kahan-compensated, ascending t; one pair per (i, k), k >= i
    n, t = Y.shape
    G = np.empty((n, n))
    for i in prange(n):
        for k in range(i, n):
            s = 0.0
            c = 0.0
            for s_t in range(t):
                y = Y[i, s_t] * Y[k, s_t] - c
                tmp = s + y
                c = (tmp - s) - y
                s = tmp
            v = s / t
            G[i, k] = v
            G[k, i] = v
    return G


@njit(cache=True, parallel=True)
def discrepancy_matrix(G):
    n = G.shape[0]
    D = np.zeros((n, n))
    for i in prange(n):
        for j in range(i + 1, n):
            best = 0.0
            for k in range(n):
                if k == i or k == j:
                    continue
                d = abs(G[i, k] - G[j, k])
                if d > best:
                    best = d
            D[i, j] = best
            D[j, i] = best
    return D


@njit(cache=True)
def causal_pair(Y, ctrl, i, j, s_min):
    n, t = Y.shape
    m = n - 2
    n_pairs = m * (m - 1) // 2
    tp = 0
    for s_t in range(t):
        if ctrl[i, s_t] and ctrl[j, s_t]:
            tp += 1
    if tp == 0:
        return np.inf, n_pairs, n_pairs
    idx = np.empty(tp, dtype=np.int64)
    tp = 0
    for s_t in range(t):
        if ctrl[i, s_t] and ctrl[j, s_t]:
            idx[tp] = s_t
            tp += 1
    others = np.empty(m, dtype=np.int64)
    r = 0
    for k in range(n):
        if k != i and k != j:
            others[r] = k
            r += 1
    cc = np.empty((m, tp))
    cc32 = np.empty((m, tp), dtype=np.float32)
    Z = np.empty((m, tp))
    for a in range(m):
        k = others[a]
        for b in range(tp):
            s_t = idx[b]
            v = 1.0 if ctrl[k, s_t] else 0.0
            cc[a, b] = v
            cc32[a, b] = v
            Z[a, b] = Y[k, s_t] * v * (Y[i, s_t] - Y[j, s_t])
    F = np.dot(Z, cc.T)
    cnt = np.dot(cc32, cc32.T)
    best = -1.0
    n_skipped = 0
    for a in range(m):
        for b in range(a + 1, m):
            c = cnt[a, b]
            if c < s_min or c == 0:
                n_skipped += 1
                continue
            v = (abs(F[a, b]) + abs(F[b, a])) / c
            if v > best:
                best = v
    if best < 0.0:
        return np.inf, n_skipped, n_pairs
    return best, n_skipped, n_pairs


@njit(cache=True, parallel=True)
def _causal_matrix(Y, ctrl, want, s_min):
    n = Y.shape[0]
    D = np.full((n, n), np.nan)
    skipped = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        D[i, i] = 0.0
    # row i writes only (i, j) and (j, i) with j > i: no two iterations collide
    for i in prange(n):
        for j in range(i + 1, n):
            if not (want[i] or want[j]):
                continue
            v, s, _ = causal_pair(Y, ctrl, i, j, s_min)
            D[i, j] = v
            D[j, i] = v
            skipped[i, j] = s
            skipped[j, i] = s
    return D, skipped


def causal_matrix(Y, ctrl, rows, s_min):
    want = np.zeros(Y.shape[0], dtype=np.bool_)
    want[rows] = True
    return _causal_matrix(np.ascontiguousarray(Y, dtype=np.float64),
                          np.ascontiguousarray(ctrl, dtype=np.bool_), want, s_min)


@njit(cache=True)
def ks_distance(a_sorted, b_sorted):
    na = a_sorted.size
    nb = b_sorted.size
    ia = 0
    ib = 0
    best = 0.0
    while ia < na and ib < nb:
        # step past every copy of the smaller value in both samples
        x = a_sorted[ia] if a_sorted[ia] <= b_sorted[ib] else b_sorted[ib]
        while ia < na and a_sorted[ia] <= x:
            ia += 1
        while ib < nb and b_sorted[ib] <= x:
            ib += 1
        d = abs(ia / na - ib / nb)
        if d > best:
            best = d
    return best


@njit(cache=True, parallel=True)
def ks_matrix(S):
    n = S.shape[0]
    K = np.zeros((n, n))
    for i in prange(n):
        for j in range(i + 1, n):
            v = ks_distance(S[i], S[j])
            K[i, j] = v
            K[j, i] = v
    return K
