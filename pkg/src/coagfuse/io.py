"""CSV and JSON writers.  Floats use ``repr`` so files round-trip exactly and
identical runs produce byte-identical output.

Headers:
    moments     time,k,l,value
    cells       time,v_lo,v_hi,e_lo,e_hi,density
    marginal    time,v_lo,v_hi,mass
    probes      time,delta1,fraction
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .core import MomentRecord, format_float


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_moments(records, path, extra: dict | None = None) -> None:
    """Long-format moments; ``extra`` columns (e.g. lambda, replica) go first."""
    extra = extra or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = _writer(fh)
        out.writerow([*extra.keys(), "time", "k", "l", "value"])
        cols = [str(v) for v in extra.values()]
        for rec in records:
            for (k, l), val in rec.entries.items():
                out.writerow([*cols, format_float(rec.time), format_float(k), format_float(l),
                              format_float(val)])


def read_moments(path) -> list[MomentRecord]:
    by_time: dict[float, dict] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            t = float(row["time"])
            by_time.setdefault(t, {})[(float(row["k"]), float(row["l"]))] = float(row["value"])
    return [MomentRecord(t, entries) for t, entries in by_time.items()]


def write_cells(states, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = _writer(fh)
        out.writerow(["time", "v_lo", "v_hi", "e_lo", "e_hi", "density"])
        for st in states:
            g = st.grid
            t = format_float(st.time)
            for i, j in zip(*st.n.nonzero()):
                out.writerow([t, format_float(g.v_edges[i]), format_float(g.v_edges[i + 1]),
                              format_float(g.e_edges[j]), format_float(g.e_edges[j + 1]),
                              format_float(st.n[i, j])])


def write_marginals(marginals, path, extra_rows: list[dict] | None = None) -> None:
    """``time,v_lo,v_hi,mass`` (plus leading columns when ``extra_rows`` is given)."""
    extra_rows = extra_rows or [{} for _ in marginals]
    keys = list(extra_rows[0].keys()) if extra_rows else []
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = _writer(fh)
        out.writerow([*keys, "time", "v_lo", "v_hi", "mass"])
        for m, extra in zip(marginals, extra_rows):
            cols = [str(extra[k]) for k in keys]
            t = format_float(m.time)
            for lo, hi, mass in zip(m.v_edges[:-1].tolist(), m.v_edges[1:].tolist(),
                                    m.masses.tolist()):
                out.writerow([*cols, t, format_float(lo), format_float(hi), format_float(mass)])


def write_rows(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = _writer(fh)
        out.writerow(header)
        for row in rows:
            out.writerow([format_float(x) if isinstance(x, float) else x for x in row])


@dataclass
class Check:
    name: str
    value: float
    threshold: float | str
    passed: bool

    def as_dict(self) -> dict:
        return {"name": self.name, "value": _jsonable(self.value),
                "threshold": _jsonable(self.threshold), "pass": bool(self.passed)}


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def write_summary(path, config, seed: int, records: list, checks: list[Check],
                  timing: dict | None = None, **extra) -> dict:
    summary = {
        "config_hash": config.hash,
        "config": config.as_dict(),
        "seed": seed,
        "records": _jsonable(records),
        "checks": [c.as_dict() for c in checks],
        **{k: _jsonable(v) for k, v in extra.items()},
        "timing": _jsonable(timing or {}),
    }
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return summary


def record_to_dict(rec: MomentRecord) -> dict:
    return {"time": rec.time,
            "moments": {f"{format_float(k)}:{format_float(l)}": v
                        for (k, l), v in rec.entries.items()}}


PLOT_STUB = '''"""Plot the moment table written next to this file (requires matplotlib)."""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "moments.csv"
series = defaultdict(list)
with open(path, newline="") as fh:
    for row in csv.DictReader(fh):
        series[(row["k"], row["l"])].append((float(row["time"]), float(row["value"])))
for (k, l), pts in sorted(series.items()):
    pts.sort()
    plt.plot([p[0] for p in pts], [p[1] for p in pts], label=f"M_{{{k},{l}}}")
plt.yscale("log")
plt.xlabel("t")
plt.legend()
plt.show()
'''


def write_plot_stub(directory) -> None:
    Path(directory, "plot_moments.py").write_text(PLOT_STUB, encoding="utf-8")

