"""Command line entry point ``coagfuse``.

    coagfuse run-mc --config run.cfg --out results/ [--replicas N] [--seed S]
    coagfuse run-sectional --config run.cfg --out results/
    coagfuse run-smolu1d --config run.cfg --out results/
    coagfuse study fast-fusion|slow-fusion|cross-validate --config run.cfg --out results/
    coagfuse defaults            # print a documented default config
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time as _time
from pathlib import Path

from .config import ConfigError, default_config, documented_defaults, load_config
from .diagnostics import DiagnosticsSpec, v_marginal
from .experiments import (run_ensemble, study_cross_validation, study_fast_fusion,
                          study_slow_fusion)
from .io import (Check, record_to_dict, write_cells, write_marginals, write_moments,
                 write_plot_stub, write_rows, write_summary)
from .sectional import project_points, run_sectional
from .smolu1d import run_smolu1d

log = logging.getLogger("coagfuse")


def _load(args):
    cfg = load_config(args.config) if args.config else default_config()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["sim__seed"] = args.seed
    if getattr(args, "replicas", None) is not None:
        overrides["mc__replicas"] = args.replicas
    return cfg.with_overrides(**overrides) if overrides else cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run_mc(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    start = _time.perf_counter()
    lam = cfg["sim.lambda"]
    spec = DiagnosticsSpec(cfg["diag.exponents"], cfg["diag.checkpoints"], cfg["diag.delta1"])
    outcomes = run_ensemble(cfg, [lam], spec)
    records, moment_rows, probe_rows, checks, events = [], [], [], [], []
    for o in outcomes:
        if o.result is None:
            checks.append(Check(f"replica_{o.replica}_completed", math.nan, "ok", False))
            continue
        for rec in o.result.moments:
            records.append({"replica": o.replica, **record_to_dict(rec)})
            moment_rows.extend([o.replica, rec.time, k, l, val]
                               for (k, l), val in rec.entries.items())
        for p in o.result.probes:
            probe_rows.extend([o.replica, p.time, d, f] for d, f in p.concentration.items())
        first, last = o.result.moments[0], o.result.moments[-1]
        drift = abs(last[(0.0, 1.0)] - first[(0.0, 1.0)]) / first[(0.0, 1.0)]
        checks.append(Check(f"replica_{o.replica}_volume_drift", drift, 1e-10, drift <= 1e-10))
        checks.append(Check(f"replica_{o.replica}_min_excess", o.result.min_excess, 0.0,
                            o.result.min_excess >= 0.0))
        events.append({"replica": o.replica, **o.result.log.as_dict()})
    write_rows(out / "moments.csv", ["replica", "time", "k", "l", "value"], moment_rows)
    write_rows(out / "probes.csv", ["replica", "time", "delta1", "fraction"], probe_rows)
    write_plot_stub(out)
    write_summary(out / "summary.json", cfg, cfg["sim.seed"], records, checks,
                  timing={"wall_time_s": _time.perf_counter() - start,
                          "events": events})
    return 0 if all(c.passed for c in checks) else 1


def cmd_run_sectional(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    start = _time.perf_counter()
    init = cfg.initial_system()
    state0 = project_points(cfg.grid(), init.v, init.e, init.weight)
    times = sorted({*cfg["diag.checkpoints"], cfg["sim.t_end"]})
    times = [t for t in times if t <= cfg["sim.t_end"]]
    history, records = run_sectional(state0, cfg.coag_kernel(), cfg.fusion_kernel(),
                                     cfg["sim.lambda"], cfg["sim.t_end"], times,
                                     cfg["diag.exponents"], cfg.sectional_options())
    write_moments(records, out / "moments.csv")
    write_cells([state0, *history], out / "cells.csv")
    write_plot_stub(out)
    v0 = state0.moment(0, 1) + state0.exits.volume
    checks = []
    for st in history:
        vt = st.moment(0, 1) + st.exits.volume
        drift = abs(vt - v0) / v0 / max(st.time, 1e-300)
        checks.append(Check(f"volume_drift_per_time@t={st.time!r}", drift, 1e-8, drift <= 1e-8))
    write_summary(out / "summary.json", cfg, cfg["sim.seed"],
                  [record_to_dict(r) for r in records], checks,
                  timing={"wall_time_s": _time.perf_counter() - start},
                  exits=vars(history[-1].exits))
    return 0 if all(c.passed for c in checks) else 1


def cmd_run_smolu1d(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    start = _time.perf_counter()
    init = v_marginal(cfg.initial_system(), cfg.marginal_edges())
    times = sorted({*cfg["diag.checkpoints"], cfg["sim.t_end"]})
    history = run_smolu1d(init, cfg.coag_params(), cfg["sim.t_end"],
                          [t for t in times if t <= cfg["sim.t_end"]], cfg["smolu1d.dt_max"])
    write_marginals([init, *history], out / "marginal.csv")
    v0 = float((init.masses * init.pivots).sum()) + init.exits.volume
    checks, records = [], []
    for m in history:
        vt = float((m.masses * m.pivots).sum()) + m.exits.volume
        drift = abs(vt - v0) / v0
        checks.append(Check(f"volume_drift@t={m.time!r}", drift, 1e-8, drift <= 1e-8))
        records.append({"time": m.time, "M0": m.moment(0), "M1": m.moment(1), "M2": m.moment(2)})
    write_summary(out / "summary.json", cfg, cfg["sim.seed"], records, checks,
                  timing={"wall_time_s": _time.perf_counter() - start})
    return 0 if all(c.passed for c in checks) else 1


STUDIES = {
    "fast-fusion": lambda cfg, out: study_fast_fusion(cfg, out=out),
    "slow-fusion": lambda cfg, out: study_slow_fusion(cfg, out=out),
    "cross-validate": lambda cfg, out: study_cross_validation(cfg, out=out),
}


def cmd_study(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    report = STUDIES[args.study](cfg, out)
    for c in report.checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: value={c.value!r} "
              f"threshold={c.threshold!r}")
    for a in report.aborted:
        print(f"[ABORTED] {a}")
    return 0 if report.passed else 1


def cmd_defaults(args) -> int:
    sys.stdout.write(documented_defaults())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coagfuse", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file (defaults if omitted)")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("run-mc", help="Monte Carlo ensemble")
    common(p)
    p.add_argument("--replicas", type=int, help="override mc.replicas")
    p.add_argument("--seed", type=int, help="override sim.seed")
    p.set_defaults(func=cmd_run_mc)

    p = sub.add_parser("run-sectional", help="deterministic 2-D sectional solve")
    common(p)
    p.set_defaults(func=cmd_run_sectional)

    p = sub.add_parser("run-smolu1d", help="one-dimensional limit equation")
    common(p)
    p.set_defaults(func=cmd_run_smolu1d)

    p = sub.add_parser("study", help="automated Lambda studies")
    p.add_argument("study", choices=sorted(STUDIES))
    common(p)
    p.add_argument("--replicas", type=int, help="override mc.replicas")
    p.add_argument("--seed", type=int, help="override sim.seed")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("defaults", help="print the documented default config")
    p.set_defaults(func=cmd_defaults)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        parser.error(str(exc))
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
