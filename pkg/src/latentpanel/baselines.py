"""Single-unit matching strategies and a TWFE comparator.

Row-mean, L2 and KS matching each look only at a unit's own outcome path;
they work under additive (TWFE) structure and fail outside it. They are kept
here for comparison with the cross-moment neighbor sets.

All matchers accept an optional mask; when given, only untreated cells enter
the criteria (pairwise criteria use periods where both units are untreated).
"""
from __future__ import annotations

import math
from enum import Enum
from typing import Optional

import numpy as np

from . import kernels
from .exceptions import EstimationError
from .panel import Panel, TreatmentMask, require_valid


class MatcherKind(str, Enum):
    ROW_MEAN = "row_mean"
    L2 = "l2"
    KS = "ks"
    TWFE_REGRESSION = "twfe_regression"


def _ctrl(panel, mask):
    return np.ones(panel.shape, dtype=bool) if mask is None else mask.control


def _top_k(dist, i, k):
    n = dist.size
    if not 1 <= k < n:
        raise EstimationError(f"k must satisfy 1 <= k < N={n}, got {k}")
    d = np.array(dist, dtype=float)
    d[i] = np.inf
    order = np.lexsort((np.arange(n), d))  # by distance, then lower index
    order = order[order != i]
    return [int(j) for j in order[:k]]


def row_mean_distances(i, panel: Panel, mask: Optional[TreatmentMask] = None):
    Y, c = panel.outcomes, _ctrl(panel, mask)
    cnt = c.sum(axis=1)
    means = np.where(cnt > 0, np.where(c, Y, 0.0).sum(axis=1) / np.maximum(cnt, 1), np.nan)
    d = np.abs(means - means[i])
    return np.where(np.isnan(d), np.inf, d)


def l2_distances(i, panel: Panel, mask: Optional[TreatmentMask] = None):
    Y, c = panel.outcomes, _ctrl(panel, mask)
    both = c & c[i]
    cnt = both.sum(axis=1)
    sq = np.where(both, (Y - Y[i]) ** 2, 0.0).sum(axis=1)
    return np.where(cnt > 0, sq / np.maximum(cnt, 1), np.inf)


def ks_distances(i, panel: Panel, mask: Optional[TreatmentMask] = None):
    Y, c = panel.outcomes, _ctrl(panel, mask)
    ks = kernels.get("ks_distance")
    a = np.sort(Y[i, c[i]])
    out = np.full(panel.n_units, np.inf)
    if a.size == 0:
        return out
    for j in range(panel.n_units):
        b = np.sort(Y[j, c[j]])
        if b.size:
            out[j] = ks(a, b)
    out[i] = 0.0
    return out


def ks_matrix(panel: Panel) -> np.ndarray:
    """All-pairs KS distances between the rows of a fully observed panel."""
    S = np.sort(panel.outcomes, axis=1)
    return kernels.get("ks_matrix")(np.ascontiguousarray(S))


def match_row_mean(i: int, panel: Panel, k: int, mask: Optional[TreatmentMask] = None):
    """k units whose time-averaged outcome is closest to unit i's."""
    return _top_k(row_mean_distances(i, panel, mask), i, k)


def match_l2(i: int, panel: Panel, k: int, mask: Optional[TreatmentMask] = None):
    """k units minimising (1/T) sum_t (Y_jt - Y_it)^2."""
    return _top_k(l2_distances(i, panel, mask), i, k)


def match_ks(i: int, panel: Panel, k: int, mask: Optional[TreatmentMask] = None):
    """k units minimising the sup distance between empirical CDFs."""
    return _top_k(ks_distances(i, panel, mask), i, k)


MATCHERS = {
    MatcherKind.ROW_MEAN: (match_row_mean, row_mean_distances),
    MatcherKind.L2: (match_l2, l2_distances),
    MatcherKind.KS: (match_ks, ks_distances),
}


def two_way_demean(X, tol=1e-10, max_iter=1000):
    """Alternate row and column demeaning until both means are below ``tol``."""
    X = np.array(X, dtype=float)
    for _ in range(max_iter):
        X -= X.mean(axis=1, keepdims=True)
        X -= X.mean(axis=0, keepdims=True)
        if (np.abs(X.mean(axis=1)).max() < tol and np.abs(X.mean(axis=0)).max() < tol):
            return X
    raise EstimationError("two-way demeaning did not converge")


def twfe_fit(panel: Panel, mask: TreatmentMask) -> float:
    """Coefficient on W in Y ~ unit FE + time FE + W."""
    require_valid(panel, mask)
    w = two_way_demean(mask.assignments.astype(float))
    ww = float(np.sum(w * w))
    if ww <= 1e-12 * w.size:
        raise EstimationError("treatment has no variation after two-way demeaning")
    # w is already orthogonal to both sets of dummies; demeaning y as well
    # removes any outcome shift before the product, not just in expectation
    y = two_way_demean(panel.outcomes)
    return float(np.sum(y * w) / ww)


def matcher_imputation(panel: Panel, mask: TreatmentMask, kind, k: int):
    """Impute every treated cell from top-k matches of its unit.

    Returns ``(tau_hat, cells, mu_hat, matches)``. A cell whose matches are
    all treated at t falls back to the closest untreated unit at t.
    """
    kind = MatcherKind(kind)
    _, dist_fn = MATCHERS[kind]
    Y, ctrl, W = panel.outcomes, mask.control, mask.treated
    cells, mu_hat, matches = [], [], {}
    for i in np.nonzero(W.any(axis=1))[0]:
        dist = dist_fn(i, panel, mask)
        m = np.array(_top_k(dist, i, min(k, panel.n_units - 1)))
        matches[int(i)] = m.tolist()
        for t in np.nonzero(W[i])[0]:
            use = m[ctrl[m, t]]
            if use.size:
                val = math.fsum(Y[use, t].tolist()) / use.size
            else:
                d = np.where(ctrl[:, t], dist, np.inf)
                d[i] = np.inf
                j = int(np.argmin(d))
                val = float(Y[j, t]) if np.isfinite(d[j]) else math.nan
            cells.append((i, t))
            mu_hat.append(val)
    cells = np.array(cells, dtype=np.int64).reshape(-1, 2)
    mu_hat = np.array(mu_hat)
    ok = np.isfinite(mu_hat)
    if not ok.any():
        raise EstimationError("no treated cell could be imputed")
    resid = Y[cells[ok, 0], cells[ok, 1]] - mu_hat[ok]
    return math.fsum(resid.tolist()) / int(ok.sum()), cells, mu_hat, matches
