"""Monte Carlo harness, sample-size bounds, and neighbor-quality scoring."""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from typing import Optional

import numpy as np

from .baselines import MATCHERS, MatcherKind, matcher_imputation, twfe_fit
from .dgp import DgpSpec, SimulatedPanel, beta_quadrature, simulate
from .estimation import estimate_att, predict_mu_matrix
from .exceptions import LatentPanelError, SpecError
from .neighbors import NuPolicy, causal_matrix, default_k, pairwise_l2_mu
from .panel import TheoryConstants

ESTIMATORS = ("npm", "row_mean", "l2", "ks", "twfe")
TABLE_COLUMNS = ("N", "T", "estimator", "bias", "rmse_tau", "rmse_mu", "quality_freq")


# ---------------------------------------------------------------------------
# sample-size bounds

def _dec(x):
    # decimal from the shortest repr, so 0.8 means 4/5 rather than its binary neighbour
    return Decimal(repr(float(x)))


def theorem1_rates(xi: float, delta_prob: float, constants: TheoryConstants):
    """(N_min, T_min) at which the neighbor-set guarantee kicks in.

    N_min = ceil(ln(delta * xi / (16 mu' mu)) / ln(1 - xi / (16 mu' mu)))
    T_min = ceil(256 N_min^2 C_Y^2 / (delta^2 xi^2))

    ``delta_prob`` is the failure probability. Evaluated in 50-digit decimal
    arithmetic so that exact integers are not pushed across a ceiling by
    binary rounding.
    """
    if not 0 < delta_prob < 1:
        raise SpecError(f"delta_prob must lie in (0, 1), got {delta_prob}")
    scale = 16 * constants.mu_prime_bar * constants.mu_bar
    if not 0 < xi < scale:
        raise SpecError(f"xi must lie in (0, 16 * mu_prime_bar * mu_bar = {scale}), got {xi}")
    with localcontext() as ctx:
        ctx.prec = 50
        x, d = _dec(xi), _dec(delta_prob)
        s = 16 * _dec(constants.mu_prime_bar) * _dec(constants.mu_bar)
        ratio = (d * x / s).ln() / (1 - x / s).ln()
        n_min = max(1, int(ratio.to_integral_value(rounding="ROUND_CEILING")))
        t = 256 * Decimal(n_min) ** 2 * _dec(constants.c_y) ** 2 / (d * d * x * x)
        t_min = int(t.to_integral_value(rounding="ROUND_CEILING"))
    return n_min, t_min


# ---------------------------------------------------------------------------
# neighbor quality

def _pairs(jsets):
    if isinstance(jsets, dict):
        items = jsets.items()
    else:
        items = ((s.center, s.members) for s in jsets)
    out = []
    for i, members in items:
        if hasattr(members, "members"):
            members = members.members
        out.extend((int(i), int(j)) for j in members if int(j) != int(i))
    return out


def neighbor_quality(sim: SimulatedPanel, jsets, xi: float, spec: Optional[DgpSpec] = None):
    """Share of accepted pairs (i, j) whose mu-profiles differ by more than xi.

    The distance is E_beta[(mu(alpha_i, beta) - mu(alpha_j, beta))^2],
    computed by quadrature over the beta marginal from the stored latents.
    ``jsets`` is a list of :class:`NeighborSet` or a mapping center -> members.
    Returns NaN when there are no pairs.
    """
    spec = sim.spec if spec is None else spec
    pairs = _pairs(jsets)
    if not pairs:
        return math.nan
    units = sorted({u for p in pairs for u in p})
    pos = {u: k for k, u in enumerate(units)}
    L2 = pairwise_l2_mu(spec, sim.truth.alpha[units], beta_quadrature(spec))
    d = np.array([L2[pos[i], pos[j]] for i, j in pairs])
    return float(np.mean(d > xi))


# ---------------------------------------------------------------------------
# Monte Carlo

@dataclass
class McConfig:
    """Monte Carlo design: one DGP over a grid of (N, T) sizes."""

    dgp: DgpSpec
    grid: list
    replications: int = 1
    policies: list = field(default_factory=lambda: [NuPolicy.k_nearest()])
    estimators: list = field(default_factory=lambda: ["npm"])
    master_seed: int = 0
    s_min: int = 30
    xi: float = 0.02
    k_match: Optional[int] = None
    archive: Optional[str] = None
    report: Optional[str] = None
    table: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        self.grid = [tuple(int(v) for v in g) for g in self.grid]
        self.policies = [p if isinstance(p, NuPolicy) else NuPolicy.parse(p)
                         for p in self.policies]
        if not self.grid:
            raise SpecError("McConfig.grid is empty")
        if self.replications < 1:
            raise SpecError("replications must be >= 1")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise SpecError(f"unknown estimators {sorted(bad)}; choose from {ESTIMATORS}")

    def to_dict(self):
        return {
            "dgp": self.dgp.to_dict(),
            "grid": [list(g) for g in self.grid],
            "replications": self.replications,
            "policies": [p.label() for p in self.policies],
            "estimators": list(self.estimators),
            "master_seed": self.master_seed,
            "s_min": self.s_min,
            "xi": self.xi,
            "k_match": self.k_match,
            "archive": self.archive,
            "report": self.report,
            "table": self.table,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["dgp"] = DgpSpec.from_dict(d["dgp"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown McConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def replicate_seed(master_seed, grid_index, rep):
    """Seed for replicate ``rep`` at grid point ``grid_index``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(grid_index), int(rep)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _rmse(a, b):
    ok = np.isfinite(a)
    if not ok.any():
        return math.nan
    return math.sqrt(math.fsum(((a[ok] - b[ok]) ** 2).tolist()) / int(ok.sum()))


def _score_npm(sim, policy, cfg, stats):
    if sim.mask.treated.any():
        att = estimate_att(sim.panel, sim.mask, policy, cfg.s_min, stats)
        mu = sim.mu[att.cells[:, 0], att.cells[:, 1]]
        return {
            "tau_hat": _num(att.tau_hat),
            "rmse_mu": _num(_rmse(att.mu_hat, mu)),
            "quality_freq": _num(neighbor_quality(sim, list(att.neighbor_sets.values()), cfg.xi)),
            "forced_1nn_cells": int(att.diagnostics["forced_1nn_cells"]),
        }
    pred = predict_mu_matrix(sim.panel, policy)
    return {
        "tau_hat": None,
        "rmse_mu": _num(_rmse(pred.mu_hat.ravel(), sim.mu.ravel())),
        "quality_freq": _num(neighbor_quality(sim, pred.neighbor_sets, cfg.xi)),
    }


def _score_matcher(sim, kind, k):
    panel, mask = sim.panel, sim.mask
    if mask.treated.any():
        tau, cells, mu_hat, matches = matcher_imputation(panel, mask, kind, k)
        mu = sim.mu[cells[:, 0], cells[:, 1]]
        return tau, _rmse(mu_hat, mu), matches
    match, _ = MATCHERS[MatcherKind(kind)]
    Y = panel.outcomes
    mu_hat = np.empty_like(Y)
    matches = {}
    for i in range(panel.n_units):
        m = match(i, panel, k)
        matches[i] = m
        mu_hat[i] = Y[m].mean(axis=0)
    return math.nan, _rmse(mu_hat.ravel(), sim.mu.ravel()), matches


def run_replicate(cfg: McConfig, grid_index: int, rep: int) -> dict:
    """Simulate one panel and score every configured estimator on it."""
    n, t = cfg.grid[grid_index]
    seed = replicate_seed(cfg.master_seed, grid_index, rep)
    sim = simulate(cfg.dgp, n, t, seed)
    treated = bool(sim.mask.treated.any())
    record = {"grid": [n, t], "grid_index": grid_index, "rep": rep, "seed": seed,
              "true_att": _num(sim.true_att), "results": {}}
    k = min(cfg.k_match or default_k(n), n - 1)
    stats = None
    for est in cfg.estimators:
        labels = ([f"npm[{p.label()}]" for p in cfg.policies] if est == "npm" else [est])
        for li, label in enumerate(labels):
            try:
                if est == "npm":
                    if treated and stats is None:
                        units = np.nonzero(sim.mask.treated.any(axis=1))[0]
                        stats = causal_matrix(sim.panel, sim.mask, cfg.s_min, rows=units)
                    out = _score_npm(sim, cfg.policies[li], cfg, stats)
                elif est == "twfe":
                    if not treated:
                        raise LatentPanelError("twfe needs treated cells")
                    out = {"tau_hat": _num(twfe_fit(sim.panel, sim.mask)), "rmse_mu": None,
                           "quality_freq": None}
                else:
                    tau, rmse, matches = _score_matcher(sim, est, k)
                    out = {"tau_hat": _num(tau), "rmse_mu": _num(rmse),
                           "quality_freq": _num(neighbor_quality(sim, matches, cfg.xi))}
                out["error"] = None
            except LatentPanelError as exc:
                out = {"tau_hat": None, "rmse_mu": None, "quality_freq": None,
                       "error": f"{type(exc).__name__}: {exc}"}
            record["results"][label] = out
    return record


def _run_task(args):
    cfg_dict, gi, r = args
    return run_replicate(McConfig.from_dict(cfg_dict), gi, r)


@dataclass
class McReport:
    """Aggregated Monte Carlo results.

    ``rows`` holds one dict per (grid point, estimator) with bias and RMSE of
    tau_hat, mean RMSE of mu_hat, mean neighbor-quality frequency, and counts
    of successful and failed replicates. ``records`` are the per-replicate
    archives the rows are computed from.
    """

    rows: list
    records: list
    runtime_seconds: float
    config: dict

    def to_dict(self):
        return {"rows": self.rows, "runtime_seconds": self.runtime_seconds,
                "config": self.config}


def _fmean(values):
    values = [v for v in values if v is not None]
    return math.fsum(values) / len(values) if values else None


def aggregate(records) -> list:
    """Per (N, T, estimator) summaries, in fixed order."""
    groups = {}
    for rec in sorted(records, key=lambda r: (r["grid_index"], r["rep"])):
        for label, res in rec["results"].items():
            groups.setdefault((tuple(rec["grid"]), label), []).append((rec, res))
    rows = []
    for (grid, label), items in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        ok = [(rec, res) for rec, res in items if res["error"] is None]
        errs = [res["tau_hat"] - rec["true_att"] for rec, res in ok
                if res["tau_hat"] is not None and rec["true_att"] is not None]
        rows.append({
            "N": grid[0], "T": grid[1], "estimator": label,
            "replications": len(items), "failures": len(items) - len(ok),
            "bias": _fmean(errs),
            "rmse_tau": (math.sqrt(math.fsum(e * e for e in errs) / len(errs)) if errs else None),
            "rmse_mu": _fmean(res["rmse_mu"] for _, res in ok),
            "quality_freq": _fmean(res["quality_freq"] for _, res in ok),
        })
    return rows


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def run_mc(cfg: McConfig) -> McReport:
    """Run every replicate of every grid point and aggregate.

    Replicate r at grid point g always draws from seed
    ``replicate_seed(master_seed, g, r)``, so records (and the archive) do not
    depend on ``workers``. Estimator failures are recorded, not raised.
    """
    start = time.perf_counter()
    tasks = [(gi, r) for gi in range(len(cfg.grid)) for r in range(cfg.replications)]
    if cfg.workers > 1:
        import multiprocessing as mp
        payload = [(cfg.to_dict(), gi, r) for gi, r in tasks]
        with ProcessPoolExecutor(cfg.workers, mp_context=mp.get_context("spawn")) as pool:
            records = list(pool.map(_run_task, payload))
    else:
        records = [run_replicate(cfg, gi, r) for gi, r in tasks]
    records.sort(key=lambda r: (r["grid_index"], r["rep"]))
    report = McReport(aggregate(records), records, time.perf_counter() - start, cfg.to_dict())
    if cfg.archive:
        write_archive(records, cfg.archive)
    if cfg.report:
        with open(cfg.report, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    if cfg.table:
        with open(cfg.table, "w") as fh:
            fh.write(convergence_table(report))
    return report


def write_archive(records, path):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(_dumps(rec) + "\n")


def read_archive(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def verify_report(rows, records):
    """Recompute ``rows`` from ``records``; return a list of mismatches."""
    fresh = {(r["N"], r["T"], r["estimator"]): r for r in aggregate(records)}
    problems = []
    for row in rows:
        key = (row["N"], row["T"], row["estimator"])
        if key not in fresh:
            problems.append(f"{key}: not reproducible from the archive")
            continue
        for col, val in row.items():
            if fresh[key].get(col) != val:
                problems.append(f"{key}: {col} is {val!r}, archive gives {fresh[key].get(col)!r}")
    return problems


def _fmt(v):
    if v is None:
        return "nan"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def convergence_table(report) -> str:
    """TSV of (N, T, estimator, bias, rmse_tau, rmse_mu, quality_freq),
    sorted by N, then T, then estimator."""
    rows = report.rows if isinstance(report, McReport) else report
    lines = ["\t".join(TABLE_COLUMNS)]
    for r in sorted(rows, key=lambda r: (r["N"], r["T"], r["estimator"])):
        lines.append("\t".join(_fmt(r[c]) for c in TABLE_COLUMNS))
    return "\n".join(lines) + "\n"
