"""Artifact files: CSV tables at full precision, binary snapshots, JSON manifests."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .physical import PhysicalState
from .quadrature import RadialGrid


def fmt(x) -> str:
    # 17 significant digits round-trip every double
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    """Write ``rows`` (iterables of numbers or strings) under a mandatory header."""
    header = list(header)
    if not header:
        raise ValueError("CSV output needs a header row")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            row = list(row)
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def read_csv(path):
    """Return ``(header, columns)`` with numeric columns as float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    cols = {}
    for k, name in enumerate(header):
        vals = [r[k] for r in body]
        try:
            cols[name] = np.array([float(v) for v in vals])
        except ValueError:
            cols[name] = vals
    return header, cols


def write_snapshot_blocks(path, snapshots, time_key="t", space_key="r", fields=("u", "ut")):
    """One block of rows per snapshot: ``(time, space, field...)``."""
    def rows():
        for snap in snapshots:
            t = getattr(snap, "s" if time_key == "s" else "t")
            x = snap.grid.nodes
            cols = [getattr(snap, f) for f in fields]
            for k in range(x.size):
                yield [t, x[k]] + [c[k] for c in cols]

    write_csv(path, [time_key, space_key, *fields], rows())


def save_state_npz(path, state: PhysicalState):
    """Bit-exact binary dump of a physical state."""
    np.savez(path, t=np.float64(state.t), t_lo=np.float64(state.t_lo), u=state.u, ut=state.ut,
             nodes=state.grid.nodes, domain_end=np.float64(state.grid.domain_end),
             alive=np.bool_(state.alive))


def load_state_npz(path) -> PhysicalState:
    with np.load(path) as z:
        grid = RadialGrid(z["nodes"].copy(), float(z["domain_end"]))
        return PhysicalState(t=float(z["t"]), u=z["u"].copy(), ut=z["ut"].copy(), grid=grid,
                             alive=bool(z["alive"]), t_lo=float(z["t_lo"]))


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
