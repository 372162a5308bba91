"""Counterfactual imputation, ATT, prediction of mu, and gap decomposition."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import EstimationError, NeighborError, OverlapFailure
from .neighbors import (DEFAULT_S_MIN, CausalStats, NeighborSet, NuPolicy, adaptive_nu,
                        candidate_stats, causal_matrix, causal_neighbor_set, cross_moments,
                        discrepancy_matrix, neighbor_set)
from .panel import CellIndex, Panel, TreatmentMask, require_valid


@dataclass(eq=False)
class AttResult:
    """ATT estimate with the per-cell imputations behind it.

    ``cells`` is a (n, 2) array of (unit, time) for every treated cell;
    ``mu_hat`` is NaN for cells that could not be imputed (excluded from
    ``tau_hat`` and listed in diagnostics).
    """

    tau_hat: float
    cells: np.ndarray
    y_obs: np.ndarray
    mu_hat: np.ndarray
    n_neighbors: np.ndarray
    forced: np.ndarray
    neighbor_sets: dict
    diagnostics: dict = field(default_factory=dict)

    @property
    def treated_cells(self):
        return [CellIndex(int(i), int(t)) for i, t in self.cells]

    def recompute_tau(self):
        ok = np.isfinite(self.mu_hat)
        return math.fsum((self.y_obs[ok] - self.mu_hat[ok]).tolist()) / int(ok.sum())

    def to_dict(self):
        return {
            "tau_hat": self.tau_hat,
            "n_treated_cells": int(len(self.cells)),
            "n_imputed_cells": int(np.isfinite(self.mu_hat).sum()),
            "diagnostics": self.diagnostics,
        }

    def cell_rows(self, panel: Optional[Panel] = None):
        """Per-cell table rows: unit, time, y_obs, mu_hat, n_neighbors, flags."""
        for (i, t), y, m, k, f in zip(self.cells, self.y_obs, self.mu_hat,
                                      self.n_neighbors, self.forced):
            flags = "forced-1NN" if f else ("unimputable" if not np.isfinite(m) else "")
            unit = panel.unit_ids[i] if panel is not None else int(i)
            time = panel.time_ids[t] if panel is not None else int(t)
            yield unit, time, float(y), float(m), int(k), flags


@dataclass(eq=False)
class PredictionResult:
    mu_hat: np.ndarray
    n_neighbors: np.ndarray
    nu: np.ndarray
    neighbor_sets: list
    forced_units: list


@dataclass(eq=False)
class DecompositionResult:
    """Group-gap decomposition.

    total_gap = mean(Y | group 1) - mean(Y | group 0), split as
    unexplained = mean(Y | group 1) - counterfactual_mean and
    explained = counterfactual_mean - mean(Y | group 0), where
    counterfactual_mean estimates the group-0 mean outcome function averaged
    over group-1 latents. ``explained`` is stored as total_gap - unexplained
    so the three figures add up exactly.
    """

    total_gap: float
    unexplained: float
    explained: float
    counterfactual_mean: float
    mean_group1: float
    mean_group0: float
    att: AttResult

    def to_dict(self):
        return {
            "total_gap": self.total_gap,
            "unexplained": self.unexplained,
            "explained": self.explained,
            "counterfactual_mean": self.counterfactual_mean,
            "mean_group1": self.mean_group1,
            "mean_group0": self.mean_group0,
            "diagnostics": self.att.diagnostics,
        }


def _mean(values):
    values = np.asarray(values, dtype=float).ravel()
    return math.fsum(values.tolist()) / values.size


def impute_cell(cell, jset: NeighborSet, panel: Panel, mask: Optional[TreatmentMask] = None,
                fallback: bool = False) -> float:
    """Mean of Y_jt over neighbors j of ``cell.unit`` that are untreated at t.

    The center never contributes. With ``fallback`` on, a cell whose
    neighbors are all treated at t is imputed from the untreated candidate
    with the smallest statistic instead.
    """
    i, t = int(cell[0]), int(cell[1])
    if jset.center != i:
        raise EstimationError(f"neighbor set is centred on {jset.center}, not unit {i}")
    ctrl = np.ones(panel.shape, dtype=bool) if mask is None else mask.control
    val, _, _ = _impute_one(i, t, np.asarray(jset.members, dtype=np.int64), panel.outcomes,
                            ctrl, jset.stats, fallback)
    if not np.isfinite(val):
        raise EstimationError(f"no untreated neighbor for cell ({i}, {t})")
    return val


def _impute_one(i, t, members, Y, ctrl, stats, fallback):
    members = members[members != i]
    use = members[ctrl[members, t]]
    if use.size:
        return math.fsum(Y[use, t].tolist()) / use.size, use.size, False
    if fallback:
        cand = np.where(ctrl[:, t] & np.isfinite(stats), stats, np.inf)
        cand[i] = np.inf
        j = int(np.argmin(cand))
        if np.isfinite(cand[j]):
            return float(Y[j, t]), 1, True
    return math.nan, 0, False


def _impute_unit(i, times, members, Y, ctrl, stats):
    """Vectorised imputation of unit i at ``times`` from ``members``."""
    members = np.asarray([j for j in members if j != i], dtype=np.int64)
    vals = np.full(len(times), math.nan)
    counts = np.zeros(len(times), dtype=np.int64)
    forced = np.zeros(len(times), dtype=bool)
    if members.size:
        c = ctrl[np.ix_(members, times)]
        counts = c.sum(axis=0)
        # fixed member order, then fsum per cell, keeps results reproducible
        sub = np.where(c, Y[np.ix_(members, times)], 0.0)
        for idx in np.nonzero(counts)[0]:
            vals[idx] = math.fsum(sub[:, idx].tolist()) / counts[idx]
    for idx in np.nonzero(counts == 0)[0]:
        v, k, f = _impute_one(i, times[idx], members, Y, ctrl, stats, True)
        vals[idx], counts[idx], forced[idx] = v, k, f
    return vals, counts, forced


def _nu_for(i, row, policy, n_units, diag):
    cand = candidate_stats(i, row)
    finite = cand[np.isfinite(cand)]
    if policy.kind == "k_nearest" and finite.size:
        k = policy.k_for(n_units)
        if k > finite.size:
            diag["k_clamped_units"].append(int(i))
            policy = NuPolicy.k_nearest(int(finite.size))
    if finite.size == 0 and policy.kind != "theory":
        return math.nan
    return adaptive_nu(i, finite, policy, n_units)


def estimate_att(panel: Panel, mask: TreatmentMask, policy: Optional[NuPolicy] = None,
                 s_min: int = DEFAULT_S_MIN, stats: Optional[CausalStats] = None) -> AttResult:
    """ATT from causal neighbor-set imputation of every treated cell.

    One neighbor set is built per treated unit; each treated cell (i, t) is
    imputed by the mean of Y_jt over members j that are untreated at t.
    ``stats`` may carry a precomputed :func:`causal_matrix` for this
    panel/mask (it must cover every treated unit).
    """
    require_valid(panel, mask)
    policy = policy or NuPolicy.k_nearest()
    W = mask.treated
    if not W.any():
        raise EstimationError("no treated cells")
    if not (~W).any():
        raise EstimationError("no control observations")
    n = panel.n_units
    if n < 4:
        raise EstimationError("need N >= 4 units")
    units = np.nonzero(W.any(axis=1))[0]
    if stats is None:
        stats = causal_matrix(panel, mask, s_min, rows=units)
    elif stats.values.shape != (n, n) or np.isnan(stats.values[units]).any():
        raise EstimationError("precomputed stats do not cover the treated units")

    Y, ctrl = panel.outcomes, mask.control
    diag = {"k_clamped_units": [], "forced_1nn_units": [], "no_candidate_units": []}
    cells, y_obs, mu_hat, counts, forced = [], [], [], [], []
    sets, nus = {}, {}
    for i in units:
        row = stats.values[i]
        times = np.nonzero(W[i])[0]
        nu = _nu_for(i, row, policy, n, diag)
        if math.isnan(nu):
            diag["no_candidate_units"].append(int(i))
            jset = NeighborSet(int(i), (), math.nan, row.copy(), "causal",
                               {int(j): "insufficient overlap" for j in range(n) if j != i})
        else:
            jset = causal_neighbor_set(int(i), nu, stats=row)
        if jset.forced_1nn:
            diag["forced_1nn_units"].append(int(i))
        sets[int(i)] = jset
        nus[int(i)] = nu
        v, c, f = _impute_unit(i, times, jset.members, Y, ctrl, jset.stats)
        cells.append(np.column_stack([np.full(times.size, i), times]))
        y_obs.append(Y[i, times])
        mu_hat.append(v)
        counts.append(c)
        forced.append(f)

    cells = np.vstack(cells)
    y_obs = np.concatenate(y_obs)
    mu_hat = np.concatenate(mu_hat)
    counts = np.concatenate(counts)
    forced = np.concatenate(forced)
    ok = np.isfinite(mu_hat)
    if not ok.any():
        raise OverlapFailure("every treated cell is unimputable", cells)

    off = np.ones((len(units), n), dtype=bool)
    off[np.arange(len(units)), units] = False
    skip_rate = stats.skipped[units][off].sum() / (off.sum() * max(1, stats.n_pairs))
    diag.update({
        "policy": policy.label(),
        "s_min": int(s_min),
        "n_treated_cells": int(len(cells)),
        "n_unimputable_cells": int((~ok).sum()),
        "unimputable_cells": cells[~ok].tolist(),
        "forced_1nn_cells": int(forced.sum()),
        "skipped_pair_rate": float(skip_rate),
        "nu": {str(k): (None if math.isnan(v) else v) for k, v in nus.items()},
        "mean_neighbors": float(np.mean([len(s) for s in sets.values()])),
    })
    tau = math.fsum((y_obs[ok] - mu_hat[ok]).tolist()) / int(ok.sum())
    return AttResult(tau, cells, y_obs, mu_hat, counts, forced, sets, diag)


def prediction_sets(panel: Panel, policy: Optional[NuPolicy] = None, demean: bool = False):
    """Prediction-mode neighbor sets for every unit, with the discrepancy matrix."""
    require_valid(panel)
    if panel.n_units < 3:
        raise EstimationError("need N >= 3 units")
    policy = policy or NuPolicy.k_nearest()
    D = discrepancy_matrix(cross_moments(panel, demean))
    sets = []
    n = panel.n_units
    if policy.kind == "k_nearest" and policy.k_for(n) > n - 1:
        policy = NuPolicy.k_nearest(n - 1)  # small panels: every other unit
    for i in range(n):
        nu = adaptive_nu(i, candidate_stats(i, D[i]), policy, n)
        sets.append(neighbor_set(i, nu, None, stats=D[i]))
    return sets, D


def predict_mu_matrix(panel: Panel, policy: Optional[NuPolicy] = None,
                      demean: bool = False) -> PredictionResult:
    """Leave-self-out neighbor mean for every cell of a fully observed panel.

    The center belongs to its own prediction-mode set but is dropped from the
    average. A unit whose set holds only itself borrows its nearest other
    unit and is listed in ``forced_units``.
    """
    sets, D = prediction_sets(panel, policy, demean)
    Y = panel.outcomes
    n, t = Y.shape
    mu_hat = np.empty((n, t))
    counts = np.empty(n, dtype=np.int64)
    forced = []
    for s in sets:
        i = s.center
        others = np.array([j for j in s.members if j != i], dtype=np.int64)
        if others.size == 0:
            d = D[i].copy()
            d[i] = np.inf
            others = np.array([int(np.argmin(d))])
            forced.append(i)
        mu_hat[i] = Y[others].mean(axis=0) if others.size > 1 else Y[others[0]]
        counts[i] = others.size
    return PredictionResult(mu_hat, counts, np.array([s.nu for s in sets]), sets, forced)


def decompose(panel: Panel, groups: TreatmentMask, policy: Optional[NuPolicy] = None,
              s_min: int = DEFAULT_S_MIN, stats: Optional[CausalStats] = None,
              allow_partial: bool = False) -> DecompositionResult:
    """Split the group-1 vs group-0 mean gap into unexplained and explained parts.

    ``groups`` marks group-1 cells. The group-0 outcome function is imputed
    for every group-1 cell with the causal neighbor machinery (group-1 cells
    play the role of treated cells), and the imputations are averaged into
    ``counterfactual_mean``. Raises :class:`OverlapFailure` listing the cells
    that could not be imputed unless ``allow_partial`` is set.
    """
    require_valid(panel, groups)
    W = groups.treated
    if W.sum() < 2 or (~W).sum() < 2:
        raise EstimationError("each group needs at least two cells")
    try:
        att = estimate_att(panel, groups, policy, s_min, stats)
    except OverlapFailure:
        raise
    except NeighborError as exc:
        raise OverlapFailure(str(exc), np.argwhere(W)) from None
    bad = ~np.isfinite(att.mu_hat)
    if bad.any() and not allow_partial:
        raise OverlapFailure(f"{int(bad.sum())} group-1 cells have no group-0 neighbors",
                             att.cells[bad])
    Y = panel.outcomes
    mean1 = _mean(Y[W])
    mean0 = _mean(Y[~W])
    ok = ~bad
    cf = _mean(att.mu_hat[ok])
    if bad.any():
        mean1 = _mean(att.y_obs[ok])
    total = mean1 - mean0
    unexplained = mean1 - cf
    # equals cf - mean0 up to rounding; written this way so that
    # total - unexplained - explained is exactly zero in floating point
    explained = total - unexplained
    return DecompositionResult(total, unexplained, explained, cf, mean1, mean0, att)
