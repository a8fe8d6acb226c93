"""Surface and table export.

CSV output uses 12 significant digits. The JSON form stores floats with
``repr`` precision, so a surface read back from JSON is bit-identical.
"""
from __future__ import annotations

import json

import numpy as np

from .pde import PriceSurface

FMT = "{:.12g}"


def write_surface_csv(surface: PriceSurface, path) -> None:
    """Rows ``t,S,u,delta,gamma_c``, time-major then price."""
    with open(path, "w", newline="") as fh:
        fh.write("t,S,u,delta,gamma_c\n")
        for i, t in enumerate(surface.times):
            ts = FMT.format(t)
            for j, s in enumerate(surface.prices):
                fh.write(",".join((ts, FMT.format(s), FMT.format(surface.values[i, j]),
                                   FMT.format(surface.delta[i, j]),
                                   FMT.format(surface.gamma_c[i, j]))) + "\n")


def surface_to_dict(surface: PriceSurface) -> dict:
    return {
        "t": surface.times.tolist(),
        "S": surface.prices.tolist(),
        "u": surface.values.tolist(),
        "delta": surface.delta.tolist(),
        "gamma_c": surface.gamma_c.tolist(),
        "metadata": surface.metadata,
    }


def surface_from_dict(d: dict) -> PriceSurface:
    return PriceSurface(
        times=np.asarray(d["t"], dtype=float),
        prices=np.asarray(d["S"], dtype=float),
        values=np.asarray(d["u"], dtype=float),
        delta=np.asarray(d["delta"], dtype=float),
        gamma_c=np.asarray(d["gamma_c"], dtype=float),
        metadata=dict(d.get("metadata") or {}),
    )


def write_surface_json(surface: PriceSurface, path) -> None:
    with open(path, "w") as fh:
        json.dump(surface_to_dict(surface), fh, sort_keys=True)
        fh.write("\n")


def read_surface_json(path) -> PriceSurface:
    with open(path) as fh:
        return surface_from_dict(json.load(fh))


def write_table_csv(path, header, rows) -> None:
    """Generic CSV writer: ints verbatim, floats at 12 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def write_table_json(path, header, rows) -> None:
    recs = [{h: _plain(v) for h, v in zip(header, row)} for row in rows]
    with open(path, "w") as fh:
        json.dump(recs, fh, indent=1)
        fh.write("\n")


def write_plot(path, header, columns) -> None:
    """Whitespace-separated columns with a ``#`` header line, for plotting tools."""
    cols = [np.asarray(c, dtype=float) for c in columns]
    with open(path, "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for vals in zip(*cols):
            fh.write(" ".join(FMT.format(v) for v in vals) + "\n")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FMT.format(float(v))


def _plain(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v
