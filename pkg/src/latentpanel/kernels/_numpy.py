"""Pure-numpy reference kernels.

Every function here has a twin in ``_numba`` with the same signature and the
same results up to floating-point summation order.
"""
import numpy as np


def cross_moments(Y):
    """(1/T) * sum_t Y_it Y_kt for every unordered pair, mirrored.

    Uses numpy's pairwise reduction along the contiguous time axis, one row
    block at a time, so each entry is summed in a fixed order.
    """
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    n, t = Y.shape
    G = np.empty((n, n))
    for i in range(n):
        row = (Y[i:] * Y[i]).sum(axis=1) / t
        G[i, i:] = row
        G[i:, i] = row
    return G


def discrepancy_matrix(G):
    """D_ij = max over k not in {i, j} of |G_ik - G_jk|."""
    n = G.shape[0]
    D = np.zeros((n, n))
    diag = np.arange(n)
    for i in range(n):
        diff = np.abs(G[i][None, :] - G)
        diff[:, i] = 0.0
        diff[diag, diag] = 0.0
        D[i] = diff.max(axis=1)
    D[diag, diag] = 0.0
    # max is order-free, but mirror anyway so D is symmetric by construction
    iu = np.triu_indices(n, 1)
    D[(iu[1], iu[0])] = D[iu]
    return D


def causal_pair(Y, ctrl, i, j, s_min):
    """Causal discrepancy for one pair (i, j).

    Returns ``(value, n_skipped, n_pairs)``; ``value`` is ``inf`` when every
    comparison pair {k, l} has fewer than ``s_min`` shared control periods.
    """
    n = Y.shape[0]
    both = ctrl[i] & ctrl[j]
    others = np.ones(n, dtype=bool)
    others[[i, j]] = False
    n_pairs = (n - 2) * (n - 3) // 2
    if not both.any():
        return np.inf, n_pairs, n_pairs
    cc = ctrl[others][:, both].astype(np.float64)
    u = Y[i, both] - Y[j, both]
    Z = Y[others][:, both] * cc * u
    F = Z @ cc.T
    cnt = cc.astype(np.float32) @ cc.T.astype(np.float32)
    m = cc.shape[0]
    ku, lu = np.triu_indices(m, 1)
    c = cnt[ku, lu].astype(np.float64)
    ok = (c >= s_min) & (c > 0)
    n_skipped = int(n_pairs - ok.sum())
    if not ok.any():
        return np.inf, n_skipped, n_pairs
    stat = (np.abs(F[ku, lu][ok]) + np.abs(F[lu, ku][ok])) / c[ok]
    return float(stat.max()), n_skipped, n_pairs


def causal_matrix(Y, ctrl, rows, s_min):
    """Causal discrepancies for every pair touching a unit in ``rows``.

    Entries not computed are NaN; the diagonal is 0.
    """
    n = Y.shape[0]
    D = np.full((n, n), np.nan)
    skipped = np.zeros((n, n), dtype=np.int64)
    np.fill_diagonal(D, 0.0)
    want = np.zeros(n, dtype=bool)
    want[rows] = True
    for i in range(n):
        for j in range(i + 1, n):
            if not (want[i] or want[j]):
                continue
            v, s, _ = causal_pair(Y, ctrl, i, j, s_min)
            D[i, j] = D[j, i] = v
            skipped[i, j] = skipped[j, i] = s
    return D, skipped


def ks_distance(a_sorted, b_sorted):
    """Two-sample sup distance between right-continuous empirical CDFs."""
    grid = np.concatenate((a_sorted, b_sorted))
    fa = np.searchsorted(a_sorted, grid, side="right") / a_sorted.size
    fb = np.searchsorted(b_sorted, grid, side="right") / b_sorted.size
    return float(np.abs(fa - fb).max())


def ks_matrix(S):
    """All-pairs KS distances between the (pre-sorted) rows of ``S``."""
    n = S.shape[0]
    K = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            K[i, j] = K[j, i] = ks_distance(S[i], S[j])
    return K
