"""Command-line entry point: ``latentpanel <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import numpy as np

from . import io
from .baselines import MATCHERS, MatcherKind, matcher_imputation
from .dgp import Assignment, DgpSpec, Effect, builtin_assignments, preset, simulate
from .estimation import decompose, estimate_att, predict_mu_matrix
from .exceptions import LatentPanelError, PanelError, SpecError
from .harness import McConfig, read_archive, run_mc, theorem1_rates, verify_report
from .neighbors import NuPolicy, default_k
from .panel import TheoryConstants


def _floats(text):
    return [float(v) for v in text.split(",")] if text else []


def parse_assignment(text) -> Assignment:
    """``none``, ``uniform:P``, ``block:C`` or ``confounded_logistic:A,B,C[,INTERCEPT]``."""
    name, _, arg = text.partition(":")
    makers = builtin_assignments()
    if name == "none":
        return Assignment()
    if name not in makers:
        raise SpecError(f"unknown assignment {name!r}")
    try:
        return makers[name](*_floats(arg))
    except TypeError:
        raise SpecError(f"wrong number of parameters for assignment {name!r}") from None


def parse_effect(text) -> Effect:
    """``none``, ``constant:TAU`` or ``cell:NAME[:TAU]``."""
    parts = text.split(":")
    if parts[0] == "none":
        return Effect()
    if parts[0] == "constant" and len(parts) == 2:
        return Effect("constant", tau=float(parts[1]))
    if parts[0] == "cell" and len(parts) in (2, 3):
        return Effect("cell", tau=float(parts[2]) if len(parts) == 3 else 1.0, fn=parts[1])
    raise SpecError(f"bad effect {text!r}")


def _spec_from_args(args) -> DgpSpec:
    if args.spec:
        with open(args.spec) as fh:
            spec = DgpSpec.from_json(fh.read())
    else:
        spec = preset(args.preset, noise=args.noise)
    changes = {}
    if args.assignment:
        changes["assignment"] = parse_assignment(args.assignment)
    if args.effect:
        changes["effect"] = parse_effect(args.effect)
    return spec.with_(**changes) if changes else spec


def _emit(obj, path):
    text = io.dumps(obj)
    if path and path != "-":
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_simulate(args):
    spec = _spec_from_args(args)
    sim = simulate(spec, args.n, args.t, args.seed)
    io.write_simulation(args.out, args.truth, sim, wide=args.wide)
    print(io.dumps({"out": args.out, "truth": args.truth, "true_att": sim.true_att,
                    "treated_cells": int(sim.mask.treated.sum())}))


def cmd_estimate(args):
    panel, mask = io.read_panel(args.input)
    policy = NuPolicy.parse(args.nu) if args.nu else None
    if args.mode == "prediction":
        pred = predict_mu_matrix(panel, policy)
        out = {
            "mode": "prediction",
            "seed": args.seed,
            "policy": (policy or NuPolicy.k_nearest()).label(),
            "units": [
                {"unit": panel.unit_ids[s.center], "nu": s.nu, "n_neighbors": int(k),
                 "members": [panel.unit_ids[j] for j in s.members]}
                for s, k in zip(pred.neighbor_sets, pred.n_neighbors)
            ],
            "forced_units": [panel.unit_ids[i] for i in pred.forced_units],
        }
        if args.mu_out:
            io.write_wide(args.mu_out, panel.with_outcomes(pred.mu_hat))
    else:
        if mask is None:
            raise PanelError("causal mode needs a long CSV with a treated column")
        att = estimate_att(panel, mask, policy, args.s_min)
        out = {"mode": "causal", "seed": args.seed,
               "policy": (policy or NuPolicy.k_nearest()).label(), "s_min": args.s_min,
               **att.to_dict()}
        if args.cells:
            io.write_cells(args.cells, att, panel)
    _emit(out, args.out)


def cmd_mc(args):
    with open(args.config) as fh:
        cfg = McConfig.from_json(fh.read())
    for name in ("archive", "report", "table", "workers"):
        val = getattr(args, name)
        if val is not None:
            setattr(cfg, name, val)
    report = run_mc(cfg)
    failures = sum(r["failures"] for r in report.rows)
    print(io.dumps({"rows": len(report.rows), "replicates": len(report.records),
                    "failures": failures, "runtime_seconds": report.runtime_seconds}))


def cmd_verify(args):
    with open(args.report) as fh:
        rows = json.load(fh)["rows"]
    problems = verify_report(rows, read_archive(args.archive))
    print(io.dumps({"ok": not problems, "problems": problems}))
    return 1 if problems else 0


def cmd_rates(args):
    consts = TheoryConstants(args.mu_bar, args.mu_prime_bar, args.cy)
    n_min, t_min = theorem1_rates(args.xi, args.delta, consts)
    print(io.dumps({"N_min": n_min, "T_min": t_min}))


def cmd_decompose(args):
    panel, groups = io.read_groups(args.group0, args.group1)
    policy = NuPolicy.parse(args.nu) if args.nu else None
    res = decompose(panel, groups, policy, args.s_min, allow_partial=args.allow_partial)
    _emit(res.to_dict(), args.out)


def _alpha_gap(alpha, matches):
    a = alpha.reshape(alpha.shape[0], -1)
    gaps = [np.linalg.norm(a[m] - a[i], axis=1).mean() for i, m in matches.items() if len(m)]
    return float(np.mean(gaps)) if gaps else math.nan


def cmd_baselines(args):
    panel, mask = io.read_panel(args.input)
    truth = None
    if args.truth:
        with open(args.truth) as fh:
            truth = json.load(fh)
    alpha = np.array(truth["alpha"], dtype=float) if truth else None
    mu = np.array(truth["mu"], dtype=float) if truth else None
    k = args.k or default_k(panel.n_units)
    treated = mask is not None and mask.treated.any()
    Y = panel.outcomes
    rows = []
    for kind in (MatcherKind.ROW_MEAN, MatcherKind.L2, MatcherKind.KS):
        if treated:
            _, cells, mu_hat, matches = matcher_imputation(panel, mask, kind, k)
        else:
            match, _ = MATCHERS[kind]
            matches = {i: match(i, panel, k) for i in range(panel.n_units)}
            cells = np.argwhere(np.ones(panel.shape, dtype=bool))
            mu_hat = np.concatenate([Y[matches[i]].mean(axis=0) for i in range(panel.n_units)])
        rows.append((kind.value, matches, cells, mu_hat))
    if treated:
        att = estimate_att(panel, mask, None, args.s_min)
        matches = {i: [j for j in s.members if j != i] for i, s in att.neighbor_sets.items()}
        rows.append(("npm", matches, att.cells, att.mu_hat))
    else:
        pred = predict_mu_matrix(panel)
        matches = {s.center: [j for j in s.members if j != s.center] for s in pred.neighbor_sets}
        rows.append(("npm", matches, np.argwhere(np.ones(panel.shape, dtype=bool)),
                     pred.mu_hat.ravel()))
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w", newline="")
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["matcher", "mean_abs_alpha_gap", "imputation_rmse"])
        for name, matches, cells, mu_hat in rows:
            gap = _alpha_gap(alpha, matches) if alpha is not None else math.nan
            rmse = math.nan
            if mu is not None:
                ok = np.isfinite(mu_hat)
                err = mu_hat[ok] - mu[cells[ok, 0], cells[ok, 1]]
                rmse = float(np.sqrt(np.mean(err ** 2)))
            w.writerow([name, io.fmt(gap), io.fmt(rmse)])
    finally:
        if out is not sys.stdout:
            out.close()


def _nu_arg(p):
    p.add_argument("--nu", help="theory:XI, knn[:K] or quantile:Q (default knn)")
    p.add_argument("--s-min", type=int, default=30,
                   help="minimum shared control periods per pair (default 30)")


def build_parser():
    ap = argparse.ArgumentParser(prog="latentpanel",
                                 description="Neighbor-set estimation for panel factor models.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a panel from a DGP")
    p.add_argument("--preset", default="twfe")
    p.add_argument("--spec", help="DgpSpec JSON file (overrides --preset)")
    p.add_argument("--noise", type=float, help="sd of normal eps for presets")
    p.add_argument("--assignment", help="none, uniform:P, block:C, confounded_logistic:A,B,C")
    p.add_argument("--effect", help="none, constant:TAU or cell:NAME[:TAU]")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="panel CSV")
    p.add_argument("--truth", required=True, help="sidecar truth JSON")
    p.add_argument("--wide", action="store_true", help="write wide CSV (drops the mask)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="ATT (causal) or mu-matrix (prediction) from a CSV")
    p.add_argument("input")
    p.add_argument("--mode", choices=("prediction", "causal"), default="causal")
    _nu_arg(p)
    p.add_argument("--seed", type=int, default=0, help="recorded only; estimation is deterministic")
    p.add_argument("--out", help="JSON output (default stdout)")
    p.add_argument("--cells", help="causal: per-cell imputation CSV")
    p.add_argument("--mu-out", help="prediction: wide CSV of mu-hat")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("mc", help="run a Monte Carlo config")
    p.add_argument("config")
    p.add_argument("--archive")
    p.add_argument("--report")
    p.add_argument("--table")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("verify", help="recompute a report from its archive")
    p.add_argument("--report", required=True)
    p.add_argument("--archive", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("rates", help="sample sizes from the neighbor-set guarantee")
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--mu-bar", type=float, default=1.0)
    p.add_argument("--mu-prime-bar", type=float, default=1.0)
    p.add_argument("--cy", type=float, default=1.0)
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("decompose", help="explained/unexplained gap from two group CSVs")
    p.add_argument("group0")
    p.add_argument("group1")
    _nu_arg(p)
    p.add_argument("--allow-partial", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("baselines", help="compare matchers on a CSV")
    p.add_argument("input")
    p.add_argument("--truth", help="truth JSON from simulate")
    p.add_argument("--k", type=int)
    p.add_argument("--s-min", type=int, default=30)
    p.add_argument("--out")
    p.set_defaults(func=cmd_baselines)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except LatentPanelError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
