"""Cross-moment neighbor sets.

Two units i and j are neighbors when their cross moments against every other
unit agree: max_k |G_ik - G_jk| <= nu, with G_ik = (1/T) sum_t Y_it Y_kt.
Under missingness the moments are taken over the periods in which all units
involved are untreated, and the statistic maximises over pairs {k, l}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .dgp import DgpSpec, beta_quadrature
from .exceptions import NeighborError
from .panel import Panel, TreatmentMask, require_valid

DEFAULT_S_MIN = 30


@dataclass(frozen=True, eq=False)
class CrossMomentMatrix:
    values: np.ndarray
    n_units: int
    n_periods: int
    demeaned: bool = False

    def __post_init__(self):
        self.values.setflags(write=False)


@dataclass(frozen=True, eq=False)
class NeighborSet:
    """Neighbors of ``center``.

    ``stats[j]`` is the discrepancy between ``center`` and ``j`` (0 for the
    center itself, ``inf`` when no comparison pair had enough shared control
    periods). ``excluded`` records rule-based exclusions by unit. When no
    candidate passes ``nu`` in causal mode, the single nearest candidate is
    admitted and ``forced_1nn`` is set.
    """

    center: int
    members: tuple
    nu: float
    stats: np.ndarray
    mode: str
    excluded: dict = field(default_factory=dict)
    forced_1nn: bool = False

    def __len__(self):
        return len(self.members)

    def __contains__(self, j):
        return j in self.members

    def to_dict(self):
        return {
            "center": int(self.center),
            "members": [int(j) for j in self.members],
            "nu": float(self.nu),
            "mode": self.mode,
            "stats": [None if not math.isfinite(s) else float(s) for s in self.stats],
            "excluded": {str(k): v for k, v in sorted(self.excluded.items())},
            "forced_1nn": self.forced_1nn,
        }


@dataclass(frozen=True)
class ControlPeriodSet:
    units: tuple
    periods: tuple

    def __len__(self):
        return len(self.periods)


@dataclass(frozen=True, eq=False)
class CausalStats:
    """Causal discrepancies for a panel/mask pair.

    ``values[i, j]`` is NaN where not computed (neither unit requested).
    ``skipped[i, j]`` counts comparison pairs dropped for having fewer than
    ``s_min`` shared control periods, out of ``n_pairs`` per (i, j).
    """

    values: np.ndarray
    skipped: np.ndarray
    s_min: int
    n_pairs: int


# ---------------------------------------------------------------------------
# prediction mode

def cross_moments(panel: Panel, demean: bool = False) -> CrossMomentMatrix:
    """Matrix of raw product moments (1/T) sum_t Y_it Y_kt.

    With ``demean=True`` each row is centred first, giving sample covariances.
    """
    require_valid(panel)
    Y = panel.outcomes
    if demean:
        Y = Y - Y.mean(axis=1, keepdims=True)
    G = kernels.get("cross_moments")(np.ascontiguousarray(Y))
    n, t = Y.shape
    return CrossMomentMatrix(G, n, t, demean)


def _check_pair(i, j, n):
    if i == j:
        raise NeighborError("discrepancy needs two distinct units")
    if not (0 <= i < n and 0 <= j < n):
        raise NeighborError(f"unit index out of range for N={n}")


def discrepancy(i: int, j: int, gm: CrossMomentMatrix) -> float:
    """max over k not in {i, j} of |G_ik - G_jk|."""
    n = gm.n_units
    _check_pair(i, j, n)
    if n < 3:
        raise NeighborError("need N >= 3 for a comparison unit k")
    G = gm.values
    d = np.abs(G[i] - G[j])
    d[[i, j]] = -np.inf
    return float(d.max())


def discrepancy_matrix(gm: CrossMomentMatrix) -> np.ndarray:
    """All pairwise discrepancies; symmetric with zero diagonal."""
    if gm.n_units < 3:
        raise NeighborError("need N >= 3 for a comparison unit k")
    return kernels.get("discrepancy_matrix")(np.ascontiguousarray(gm.values))


def neighbor_set(i: int, nu: float, gm: CrossMomentMatrix, stats=None) -> NeighborSet:
    """{ j : discrepancy(i, j) <= nu } together with i itself.

    ``stats`` may carry a precomputed row of :func:`discrepancy_matrix`.
    """
    if nu < 0:
        raise NeighborError("nu must be nonnegative")
    if stats is None:
        G = gm.values
        if gm.n_units < 3:
            raise NeighborError("need N >= 3 for a comparison unit k")
        d = np.abs(G[i][None, :] - G)
        d[:, i] = 0.0
        d[np.arange(gm.n_units), np.arange(gm.n_units)] = 0.0
        stats = d.max(axis=1)
    stats = np.array(stats, dtype=float)
    stats[i] = 0.0
    members = tuple(int(j) for j in np.nonzero(stats <= nu)[0])
    return NeighborSet(i, members, float(nu), stats, "prediction")


# ---------------------------------------------------------------------------
# causal mode

def control_periods(units, mask: TreatmentMask) -> ControlPeriodSet:
    """Periods in which every unit in ``units`` is untreated."""
    units = tuple(sorted(set(int(u) for u in units)))
    if not units:
        raise NeighborError("control_periods needs a nonempty unit set")
    ok = mask.control[list(units)].all(axis=0)
    return ControlPeriodSet(units, tuple(int(t) for t in np.nonzero(ok)[0]))


def _causal_inputs(panel, mask):
    require_valid(panel, mask)
    if panel.n_units < 4:
        raise NeighborError("causal discrepancy needs N >= 4")
    return (np.ascontiguousarray(panel.outcomes),
            np.ascontiguousarray(mask.control))


def causal_discrepancy_detail(i, j, panel: Panel, mask: TreatmentMask, s_min=DEFAULT_S_MIN):
    """``(value, n_skipped, n_pairs)`` for one unit pair."""
    Y, ctrl = _causal_inputs(panel, mask)
    _check_pair(i, j, panel.n_units)
    v, skipped, total = kernels.get("causal_pair")(Y, ctrl, int(i), int(j), int(s_min))
    return float(v), int(skipped), int(total)


def causal_discrepancy(i: int, j: int, panel: Panel, mask: TreatmentMask,
                       s_min: int = DEFAULT_S_MIN) -> float:
    """Causal discrepancy between units i and j.

    For every pair {k, l} disjoint from {i, j} with at least ``s_min`` periods
    in which i, j, k and l are all untreated, sums |mean (Y_i - Y_j) Y_k| and
    |mean (Y_i - Y_j) Y_l| over those periods; returns the largest sum.
    Returns ``math.inf`` (the "insufficient overlap" sentinel) when every
    pair is skipped.
    """
    return causal_discrepancy_detail(i, j, panel, mask, s_min)[0]


def causal_matrix(panel: Panel, mask: TreatmentMask, s_min: int = DEFAULT_S_MIN,
                  rows=None) -> CausalStats:
    """Causal discrepancies for all pairs involving a unit in ``rows``
    (default: all units)."""
    Y, ctrl = _causal_inputs(panel, mask)
    n = panel.n_units
    rows = np.arange(n) if rows is None else np.unique(np.asarray(rows, dtype=np.int64))
    values, skipped = kernels.get("causal_matrix")(Y, ctrl, rows, int(s_min))
    return CausalStats(values, skipped, int(s_min), (n - 2) * (n - 3) // 2)


def causal_neighbor_set(i: int, nu: float, panel: Optional[Panel] = None,
                        mask: Optional[TreatmentMask] = None, s_min: int = DEFAULT_S_MIN,
                        stats=None, fallback: bool = True) -> NeighborSet:
    """{ j != i : causal_discrepancy(i, j) <= nu }.

    The center is never a member. Candidates whose statistic is the
    insufficient-overlap sentinel are recorded in ``excluded``. If nothing
    qualifies and ``fallback`` is on, the smallest-statistic candidate is
    admitted with ``forced_1nn=True``.
    """
    if nu < 0:
        raise NeighborError("nu must be nonnegative")
    if stats is None:
        stats = causal_matrix(panel, mask, s_min, rows=[i]).values[i]
    stats = np.array(stats, dtype=float)
    n = stats.size
    stats[i] = 0.0
    others = np.arange(n) != i
    excluded = {int(j): "insufficient overlap" for j in np.nonzero(others & ~np.isfinite(stats))[0]}
    members = tuple(int(j) for j in np.nonzero(others & (stats <= nu))[0])
    forced = False
    if not members and fallback:
        cand = np.where(others & np.isfinite(stats), stats, np.inf)
        if np.isfinite(cand).any():
            members = (int(np.argmin(cand)),)
            forced = True
    return NeighborSet(i, members, float(nu), stats, "causal", excluded, forced)


# ---------------------------------------------------------------------------
# tolerance policies

def default_k(n_units: int) -> int:
    """ceil(log N) + 4."""
    return math.ceil(math.log(n_units)) + 4


@dataclass(frozen=True)
class NuPolicy:
    """How to pick nu for a unit: ``theory`` (xi / 8), ``k_nearest`` (k-th
    smallest statistic) or ``quantile`` (midpoint-interpolated q-quantile).

    ``k_nearest`` with ``value=None`` means :func:`default_k`.
    """

    kind: str = "k_nearest"
    value: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("theory", "k_nearest", "quantile"):
            raise NeighborError(f"unknown nu policy {self.kind!r}")
        if self.kind == "theory" and not (self.value and self.value > 0):
            raise NeighborError("theory policy needs xi > 0")
        if self.kind == "quantile" and not (self.value is not None and 0 <= self.value <= 1):
            raise NeighborError("quantile policy needs q in [0, 1]")
        if self.kind == "k_nearest" and self.value is not None and (
                self.value < 1 or int(self.value) != self.value):
            raise NeighborError("k_nearest policy needs integer k >= 1")

    @classmethod
    def theory(cls, xi):
        return cls("theory", float(xi))

    @classmethod
    def k_nearest(cls, k=None):
        return cls("k_nearest", None if k is None else int(k))

    @classmethod
    def quantile(cls, q):
        return cls("quantile", float(q))

    @classmethod
    def parse(cls, text):
        """Parse ``theory:XI``, ``knn:K``, ``knn`` or ``quantile:Q``."""
        name, _, arg = str(text).partition(":")
        name = name.strip().lower()
        try:
            if name == "theory":
                return cls.theory(float(arg))
            if name in ("knn", "k_nearest"):
                return cls.k_nearest(int(arg) if arg else None)
            if name == "quantile":
                return cls.quantile(float(arg))
        except ValueError as exc:
            raise NeighborError(f"bad nu policy {text!r}: {exc}") from None
        raise NeighborError(f"unknown nu policy {text!r}")

    def label(self):
        if self.kind == "theory":
            return f"theory:{self.value!r}"
        if self.kind == "quantile":
            return f"quantile:{self.value!r}"
        return "knn" if self.value is None else f"knn:{int(self.value)}"

    def k_for(self, n_units):
        return default_k(n_units) if self.value is None else int(self.value)


def adaptive_nu(i: int, stats, policy: NuPolicy, n_units: Optional[int] = None) -> float:
    """Tolerance for unit ``i`` from its candidate statistics.

    ``stats`` holds the statistics of candidates other than ``i``;
    non-finite entries (insufficient overlap) are ignored.
    """
    s = np.asarray(stats, dtype=float)
    s = s[np.isfinite(s)]
    if policy.kind == "theory":
        return policy.value / 8.0
    if s.size == 0:
        raise NeighborError(f"unit {i}: no candidate statistics")
    if policy.kind == "quantile":
        return float(np.quantile(s, policy.value, method="midpoint"))
    k = policy.k_for(n_units if n_units is not None else s.size + 1)
    if k > s.size:
        raise NeighborError(f"unit {i}: k={k} exceeds the {s.size} available candidates")
    return float(np.partition(s, k - 1)[k - 1])


def candidate_stats(i, row):
    """Row of a discrepancy matrix without the center entry."""
    return np.delete(np.asarray(row, dtype=float), i)


# ---------------------------------------------------------------------------
# population oracle (testing only)

def _mu_on_nodes(spec, alphas, nodes):
    a = np.asarray(alphas, dtype=float).reshape(len(alphas), -1)
    return spec.scale * spec.mu(a[:, None, :], nodes[None, :, :])


def l2_mu_distance(spec: DgpSpec, alpha, alpha_prime, quad=None) -> float:
    """E_beta[(mu(alpha, beta) - mu(alpha', beta))^2] by quadrature."""
    nodes, w = beta_quadrature(spec) if quad is None else quad
    m = _mu_on_nodes(spec, [alpha, alpha_prime], nodes)
    return float(w @ (m[0] - m[1]) ** 2)


def pairwise_l2_mu(spec: DgpSpec, alphas, quad=None) -> np.ndarray:
    """Matrix of E_beta[(mu(alpha_i, beta) - mu(alpha_j, beta))^2]."""
    nodes, w = beta_quadrature(spec) if quad is None else quad
    M = _mu_on_nodes(spec, alphas, nodes)
    sq = (M * M) @ w
    cross = (M * w) @ M.T
    out = sq[:, None] + sq[None, :] - 2 * cross
    np.fill_diagonal(out, 0.0)
    return np.maximum(out, 0.0)


def oracle_jstar(spec: DgpSpec, alpha, alpha_grid, beta_quad=None, tol: float = 1e-8):
    """Grid values alpha' whose covariance profile matches alpha's.

    Accepts alpha' when sup over alpha'' in ``alpha_grid`` of
    |E_beta[(mu(alpha, .) - mu(alpha', .)) mu(alpha'', .)]| <= tol.
    Returns the accepted rows of ``alpha_grid``.
    """
    grid = np.asarray(alpha_grid, dtype=float)
    grid2 = grid.reshape(len(grid), -1)
    nodes, w = beta_quadrature(spec) if beta_quad is None else beta_quad
    M = _mu_on_nodes(spec, grid2, nodes)
    m_a = _mu_on_nodes(spec, [np.atleast_1d(alpha)], nodes)[0]
    # row r: E[(mu_a - mu_r) mu_s] for every s on the grid
    cov = ((m_a[None, :] - M) * w) @ M.T
    sup = np.abs(cov).max(axis=1)
    return grid[sup <= tol]
