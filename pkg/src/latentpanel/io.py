"""CSV and JSON readers and writers.

Long CSV: ``unit,time,outcome[,treated]``, one row per cell.
Wide CSV: ``unit,<time id>,<time id>,...``, one row per unit.
Floats are written with 17 significant digits so a write/read cycle is bit-exact.
Unit and time labels are read as strings and kept in first-appearance order.
"""
from __future__ import annotations

import csv
import json
import math
from typing import Optional

import numpy as np

from .exceptions import PanelError
from .panel import Panel, TreatmentMask

LONG_HEADER = ("unit", "time", "outcome", "treated")


def fmt(x) -> str:
    return "%.17g" % float(x)


def _parse_float(s, where):
    try:
        return float(s)
    except ValueError:
        raise PanelError(f"non-numeric outcome {s!r} at {where}") from None


def _read_long_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:3] != list(LONG_HEADER[:3]) or header[3:] not in ([], ["treated"]):
            raise PanelError(f"{path}: expected header unit,time,outcome[,treated], got {header}")
        has_w = len(header) == 4
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise PanelError(f"{path}:{lineno}: expected {len(header)} fields")
            w = None
            if has_w:
                if row[3].strip() not in ("0", "1"):
                    raise PanelError(f"{path}:{lineno}: treated must be 0 or 1")
                w = int(row[3])
            rows.append((row[0], row[1], _parse_float(row[2], f"{path}:{lineno}"), w))
    return rows, has_w


def _index(labels):
    out = {}
    for lab in labels:
        out.setdefault(lab, len(out))
    return out


def _grid(rows, path, units=None, times=None):
    units = units or _index(r[0] for r in rows)
    times = times or _index(r[1] for r in rows)
    n, t = len(units), len(times)
    Y = np.full((n, t), np.nan)
    W = np.zeros((n, t), dtype=np.int8)
    seen = np.zeros((n, t), dtype=bool)
    for u, tt, y, w in rows:
        i, j = units[u], times[tt]
        if seen[i, j]:
            raise PanelError(f"{path}: duplicate cell ({u}, {tt})")
        seen[i, j] = True
        Y[i, j] = y
        W[i, j] = w or 0
    return Y, W, seen, list(units), list(times)


def read_long(path) -> tuple[Panel, Optional[TreatmentMask]]:
    """Panel (and mask, if a treated column is present) from a long CSV."""
    rows, has_w = _read_long_rows(path)
    if not rows:
        raise PanelError(f"{path}: no data rows")
    Y, W, seen, units, times = _grid(rows, path)
    if not seen.all():
        i, j = np.argwhere(~seen)[0]
        raise PanelError(f"{path}: unbalanced panel, missing cell ({units[i]}, {times[j]})")
    return Panel(Y, units, times), (TreatmentMask(W) if has_w else None)


def write_long(path, panel: Panel, mask: Optional[TreatmentMask] = None):
    Y = panel.outcomes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LONG_HEADER if mask is not None else LONG_HEADER[:3])
        for i, u in enumerate(panel.unit_ids):
            for j, t in enumerate(panel.time_ids):
                row = [u, t, fmt(Y[i, j])]
                if mask is not None:
                    row.append(int(mask.assignments[i, j]))
                w.writerow(row)


def read_wide(path) -> Panel:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or len(header) < 2:
            raise PanelError(f"{path}: wide CSV needs a unit column and at least one period")
        units, data = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise PanelError(f"{path}:{lineno}: expected {len(header)} fields")
            units.append(row[0])
            data.append([_parse_float(s, f"{path}:{lineno}") for s in row[1:]])
    return Panel(np.array(data, dtype=float).reshape(len(units), len(header) - 1),
                 units, header[1:])


def write_wide(path, panel: Panel):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit", *panel.time_ids])
        for u, row in zip(panel.unit_ids, panel.outcomes):
            w.writerow([u, *map(fmt, row)])


def read_panel(path):
    """Sniff long vs wide from the header."""
    with open(path, newline="") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    if header[:3] == list(LONG_HEADER[:3]):
        return read_long(path)
    return read_wide(path), None


def read_groups(path0, path1) -> tuple[Panel, TreatmentMask]:
    """Stack two long CSVs whose cells partition one balanced grid.

    Returns the combined panel and a mask marking the cells from ``path1``.
    Any treated column in the inputs is ignored.
    """
    r0, _ = _read_long_rows(path0)
    r1, _ = _read_long_rows(path1)
    if not r0 or not r1:
        raise PanelError("both group files need data rows")
    units = _index(r[0] for r in r0 + r1)
    times = _index(r[1] for r in r0 + r1)
    rows = [(u, t, y, 0) for u, t, y, _ in r0] + [(u, t, y, 1) for u, t, y, _ in r1]
    Y, W, seen, units, times = _grid(rows, f"{path0} + {path1}", units, times)
    if not seen.all():
        i, j = np.argwhere(~seen)[0]
        raise PanelError(f"group files leave cell ({units[i]}, {times[j]}) uncovered")
    return Panel(Y, units, times), TreatmentMask(W)


def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps(obj, indent=2) -> str:
    return json.dumps(_clean(obj), indent=indent, sort_keys=True, allow_nan=False)


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj) + "\n")


def write_cells(path, result, panel=None):
    """Per-cell imputation table for an ATT result."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit", "time", "y_obs", "mu_hat", "n_neighbors", "flags"])
        for u, t, y, m, k, flags in result.cell_rows(panel):
            w.writerow([u, t, fmt(y), fmt(m), k, flags])


def write_cross_moments(path, gm, panel=None):
    G = gm.values if hasattr(gm, "values") else np.asarray(gm)
    ids = panel.unit_ids if panel is not None else range(G.shape[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit", *ids])
        for u, row in zip(ids, G):
            w.writerow([u, *map(fmt, row)])


def simulation_truth(sim) -> dict:
    """Sidecar document with the latents and oracle quantities of a simulation."""
    return {
        "seed": sim.seed,
        "spec": sim.spec.to_dict(),
        "true_att": sim.true_att,
        "alpha": sim.truth.alpha,
        "beta": sim.truth.beta,
        "mu": sim.mu,
        "y0": sim.y0,
    }


def write_simulation(csv_path, json_path, sim, wide=False):
    if wide:
        write_wide(csv_path, sim.panel)
    else:
        write_long(csv_path, sim.panel, sim.mask)
    write_json(json_path, simulation_truth(sim))
