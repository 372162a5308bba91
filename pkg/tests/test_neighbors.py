import itertools

import numpy as np
import pytest
from scipy.stats import spearmanr

import oracles
from latentpanel import Panel, TreatmentMask, preset, simulate
from latentpanel.dgp import beta_quadrature, builtin_assignments
from latentpanel.exceptions import NeighborError
from latentpanel.neighbors import (NuPolicy, adaptive_nu, candidate_stats, causal_discrepancy,
                                   causal_discrepancy_detail, causal_matrix, causal_neighbor_set,
                                   control_periods, cross_moments, default_k, discrepancy,
                                   discrepancy_matrix, l2_mu_distance, neighbor_set, oracle_jstar)
from latentpanel.panel import empirical_bound


# cross moments ----------------------------------------------------------------

def test_cross_moments_all_ones():
    assert np.array_equal(cross_moments(Panel(np.ones((4, 6)))).values, np.ones((4, 4)))


def test_cross_moments_hand_example():
    Y = np.outer([1.0, 2.0], [1.0, -1.0])
    assert np.array_equal(cross_moments(Panel(Y)).values, [[1.0, 2.0], [2.0, 4.0]])


def test_cross_moments_against_triple_loop(rng):
    Y = rng.normal(size=(5, 7))
    assert np.allclose(cross_moments(Panel(Y)).values, oracles.cross_moments(Y), rtol=0, atol=1e-12)


def test_cross_moment_invariants(rng):
    Y = rng.normal(size=(9, 31)) * 3
    G = cross_moments(Panel(Y)).values
    assert np.array_equal(G, G.T)
    assert np.all(np.diag(G) >= 0)
    assert np.abs(G).max() <= empirical_bound(Panel(Y)) ** 2


# prediction-mode discrepancy ---------------------------------------------------

def test_discrepancy_identical_rows_zero(rng):
    Y = rng.normal(size=(5, 20))
    Y[3] = Y[1]
    assert discrepancy(1, 3, cross_moments(Panel(Y))) == 0.0


def test_discrepancy_against_oracle(rng):
    Y = rng.normal(size=(6, 15))
    gm = cross_moments(Panel(Y))
    D = discrepancy_matrix(gm)
    for i, j in itertools.permutations(range(6), 2):
        assert discrepancy(i, j, gm) == pytest.approx(oracles.discrepancy(Y, i, j), abs=1e-12)
        assert D[i, j] == discrepancy(i, j, gm) == discrepancy(j, i, gm)


def test_discrepancy_noiseless_twfe_closed_form():
    sim = simulate(preset("twfe", noise=0.0), 8, 50, seed=2)
    a, b = sim.truth.alpha[:, 0], sim.truth.beta[:, 0]
    gm = cross_moments(sim.panel)
    for i, j in itertools.combinations(range(8), 2):
        others = [k for k in range(8) if k not in (i, j)]
        expect = abs(a[i] - a[j]) * max(abs(a[k] + b.mean()) for k in others)
        assert discrepancy(i, j, gm) == pytest.approx(expect, rel=1e-10)


def test_discrepancy_noiseless_sign_flip_closed_form():
    sim = simulate(preset("sign_flip"), 8, 50, seed=3)
    a, b = sim.truth.alpha[:, 0], sim.truth.beta[:, 0]
    gm = cross_moments(sim.panel)
    v = np.mean((b - 0.5) ** 2)
    for i, j in itertools.combinations(range(8), 2):
        amax = max(a[k] for k in range(8) if k not in (i, j))
        assert discrepancy(i, j, gm) == pytest.approx(abs(a[i] - a[j]) * amax * v, rel=1e-10)


def test_discrepancy_needs_three_units():
    gm = cross_moments(Panel(np.ones((2, 3))))
    with pytest.raises(NeighborError):
        discrepancy(0, 1, gm)


# prediction-mode neighbor sets -------------------------------------------------

def test_large_nu_admits_everyone(rng):
    p = Panel(rng.normal(size=(7, 25)))
    nu = 2 * empirical_bound(p) ** 2
    assert neighbor_set(2, nu, cross_moments(p)).members == tuple(range(7))


def test_zero_nu_keeps_only_center(rng):
    p = Panel(rng.normal(size=(7, 25)))
    s = neighbor_set(4, 0.0, cross_moments(p))
    assert s.members == (4,) and s.stats[4] == 0.0 and s.mode == "prediction"


def test_negative_nu_rejected(rng):
    with pytest.raises(NeighborError):
        neighbor_set(0, -1.0, cross_moments(Panel(rng.normal(size=(4, 5)))))


def test_neighbor_set_members_are_close_in_alpha():
    # 10 members including the center; noiseless sign_flip recovers the alpha order
    # exactly, so misses come from units near the ends of [0, 1]
    hits = 0
    for seed in range(100):
        sim = simulate(preset("sign_flip"), 60, 2000, seed)
        a = sim.truth.alpha[:, 0]
        gm = cross_moments(sim.panel)
        D = discrepancy_matrix(gm)
        nu = adaptive_nu(0, candidate_stats(0, D[0]), NuPolicy.k_nearest(9))
        s = neighbor_set(0, nu, gm, stats=D[0])
        assert len(s) == 10
        hits += all(abs(a[j] - a[0]) < 0.15 for j in s.members)
    assert hits >= 95


# control periods ---------------------------------------------------------------

def test_control_periods_examples():
    assert control_periods([0, 2], TreatmentMask.zeros((3, 5))).periods == tuple(range(5))
    W = np.array([[0, 0, 1, 0], [0, 1, 0, 0]])
    assert control_periods([0, 1], TreatmentMask(W)).periods == (0, 3)
    with pytest.raises(NeighborError):
        control_periods([], TreatmentMask(W))


def test_control_periods_block_count():
    c = 0.1
    spec = preset("twfe", assignment=builtin_assignments()["block"](c))
    inside = 0
    for seed in range(20):
        sim = simulate(spec, 4, 400, seed)
        e = spec.assignment.propensity(sim.truth.alpha[:, None, 0], sim.truth.beta[None, :, 0])
        p = np.prod(1 - e, axis=0)
        expected, sd = p.sum(), np.sqrt((p * (1 - p)).sum())
        assert expected >= 400 * c ** 4
        count = len(control_periods(range(4), sim.mask))
        inside += abs(count - expected) <= 3 * sd
    assert inside >= 19


# causal discrepancy -------------------------------------------------------------

def _random_masked(rng, n, t, p):
    return Panel(rng.normal(size=(n, t))), TreatmentMask((rng.random((n, t)) < p).astype(int))


def test_causal_discrepancy_against_oracle(rng):
    for _ in range(5):
        panel, mask = _random_masked(rng, 7, 40, 0.25)
        for i, j in [(0, 1), (2, 5), (6, 3)]:
            v, skipped, pairs = causal_discrepancy_detail(i, j, panel, mask, s_min=8)
            ov, oskipped, opairs = oracles.causal_discrepancy(panel.outcomes, mask.assignments,
                                                              i, j, 8)
            assert (skipped, pairs) == (oskipped, opairs)
            assert v == pytest.approx(ov, abs=1e-12) or v == ov == np.inf


def test_causal_all_control_reduces_to_two_largest(rng):
    Y = rng.normal(size=(7, 60))
    panel, mask = Panel(Y), TreatmentMask.zeros(Y.shape)
    G = cross_moments(panel).values
    for i, j in [(0, 1), (3, 6)]:
        d = sorted((abs(G[i, k] - G[j, k]) for k in range(7) if k not in (i, j)), reverse=True)
        v = causal_discrepancy(i, j, panel, mask, s_min=1)
        assert d[0] - 1e-12 <= v <= 2 * d[0] + 1e-12
        assert v == pytest.approx(d[0] + d[1], abs=1e-12)


def test_causal_identical_control_rows_zero(rng):
    panel, mask = _random_masked(rng, 6, 80, 0.2)
    Y = panel.outcomes.copy()
    W = mask.assignments.copy()
    Y[4] = Y[1]
    W[4] = W[1]
    assert causal_discrepancy(1, 4, Panel(Y), TreatmentMask(W), s_min=5) == 0.0


def test_causal_errors_and_sentinel(rng):
    with pytest.raises(NeighborError):
        causal_discrepancy(0, 1, Panel(np.ones((3, 10))), TreatmentMask.zeros((3, 10)))
    panel, mask = _random_masked(rng, 5, 20, 0.0)
    assert causal_discrepancy(0, 1, panel, mask, s_min=21) == np.inf


def test_causal_ranking_tracks_alpha():
    spec = preset("sign_flip", noise=0.1, assignment=builtin_assignments()["block"](0.1))
    rho = []
    for seed in range(50):
        sim = simulate(spec, 40, 3000, seed)
        a = sim.truth.alpha[:, 0]
        row = causal_matrix(sim.panel, sim.mask, 30, rows=[0]).values[0]
        rho.append(spearmanr(np.delete(row, 0), np.abs(np.delete(a, 0) - a[0]))[0])
    assert np.mean(rho) > 0.8


def test_causal_matrix_symmetric(rng):
    panel, mask = _random_masked(rng, 8, 120, 0.2)
    V = causal_matrix(panel, mask, 10).values
    assert np.array_equal(V, V.T)
    assert np.all(np.diag(V) == 0)


# causal neighbor sets ------------------------------------------------------------

def test_causal_set_all_control_huge_nu(rng):
    panel = Panel(rng.normal(size=(6, 50)))
    s = causal_neighbor_set(2, 1e9, panel, TreatmentMask.zeros((6, 50)), s_min=5)
    assert s.members == (0, 1, 3, 4, 5) and s.mode == "causal" and not s.forced_1nn


def test_fully_treated_unit_excluded(rng):
    panel, mask = _random_masked(rng, 6, 60, 0.1)
    W = mask.assignments.copy()
    W[3] = 1
    mask = TreatmentMask(W)
    for i in (0, 1, 2, 4, 5):
        s = causal_neighbor_set(i, 1e9, panel, mask, s_min=5)
        assert 3 not in s.members
        assert s.excluded[3] == "insufficient overlap"


def test_causal_forced_1nn_fallback(rng):
    panel = Panel(rng.normal(size=(6, 50)))
    mask = TreatmentMask.zeros((6, 50))
    s = causal_neighbor_set(0, 0.0, panel, mask, s_min=5)
    row = causal_matrix(panel, mask, 5, rows=[0]).values[0]
    assert s.forced_1nn and s.members == (int(np.argmin(np.where(np.arange(6) == 0, np.inf, row))),)
    assert causal_neighbor_set(0, 0.0, panel, mask, s_min=5, fallback=False).members == ()


def test_causal_contains_half_nu_prediction_set(rng):
    for _ in range(6):
        Y = rng.normal(size=(6, 50))
        panel, mask = Panel(Y), TreatmentMask.zeros(Y.shape)
        gm = cross_moments(panel)
        D = discrepancy_matrix(gm)
        C = causal_matrix(panel, mask, 1).values
        for i in range(6):
            for nu in np.unique(np.concatenate([2 * D[i], C[i]])):
                pred = set(neighbor_set(i, nu / 2, gm, stats=D[i]).members) - {i}
                causal = set(causal_neighbor_set(i, nu, stats=C[i], fallback=False).members)
                assert pred <= causal


# tolerance policies ----------------------------------------------------------------

def test_adaptive_nu_examples():
    assert adaptive_nu(0, [0.2], NuPolicy.theory(0.8)) == 0.1
    assert adaptive_nu(0, [0.3, 0.1, 0.5], NuPolicy.k_nearest(1)) == 0.1
    assert adaptive_nu(0, [1, 2, 3, 4], NuPolicy.quantile(0.5)) == 2.5
    with pytest.raises(NeighborError):
        adaptive_nu(0, [0.3, 0.1], NuPolicy.k_nearest(3))
    with pytest.raises(NeighborError):
        adaptive_nu(0, [], NuPolicy.k_nearest(1))
    assert adaptive_nu(0, [np.inf, 0.4, 0.2], NuPolicy.k_nearest(2)) == 0.4


def test_k_nearest_guarantees_k_members(rng):
    p = Panel(rng.normal(size=(12, 30)))
    gm = cross_moments(p)
    D = discrepancy_matrix(gm)
    for k in range(1, 12):
        nu = adaptive_nu(5, candidate_stats(5, D[5]), NuPolicy.k_nearest(k))
        assert len(neighbor_set(5, nu, gm, stats=D[5])) - 1 >= k


def test_policy_parsing_and_default_k():
    assert NuPolicy.parse("theory:0.8") == NuPolicy.theory(0.8)
    assert NuPolicy.parse("knn:7") == NuPolicy.k_nearest(7)
    assert NuPolicy.parse("knn").k_for(100) == default_k(100) == 5 + 4
    assert NuPolicy.parse("quantile:0.25") == NuPolicy.quantile(0.25)
    for bad in ("theory:-1", "quantile:2", "knn:0", "nearest:3", "theory:x"):
        with pytest.raises(NeighborError):
            NuPolicy.parse(bad)
    assert NuPolicy.parse(NuPolicy.theory(0.123456789012).label()) == NuPolicy.theory(0.123456789012)


# population oracle ------------------------------------------------------------------

GRID = np.linspace(0, 1, 101)


def test_jstar_twfe_is_singleton():
    spec = preset("twfe")
    for a in GRID[::10]:
        assert np.array_equal(oracle_jstar(spec, a, GRID), [a])


def test_jstar_symmetric_square_contains_mirror():
    spec = preset("symmetric_square")
    for k in range(0, 101, 7):
        got = oracle_jstar(spec, GRID[k], GRID)
        assert GRID[k] in got and GRID[100 - k] in got


def test_l2_distance_against_midpoint_rule():
    for name in ("twfe", "sign_flip", "scale_noise", "symmetric_square"):
        spec = preset(name)
        for a, b in [(0.1, 0.7), (0.0, 1.0), (0.45, 0.5)]:
            assert l2_mu_distance(spec, a, b) == pytest.approx(
                oracles.l2_uniform_beta(oracles.MU[name], a, b), rel=1e-6, abs=1e-12)


def test_neighbor_set_json():
    s = causal_neighbor_set(0, 1e9, stats=np.array([0.0, 0.5, np.inf, 0.2]))
    d = s.to_dict()
    assert d["members"] == [1, 3] and d["stats"][2] is None and d["excluded"] == {"2": "insufficient overlap"}
