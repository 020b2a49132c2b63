"""Replica ensembles and the three automated studies.

* fast fusion: Lambda -> 0 reduces the two-component problem to the
  one-dimensional equation with the sphere-restricted kernel;
* slow fusion: the total-area drift over [0, T] scales like 1/Lambda;
* cross-validation: MC ensemble moments against the sectional solver.

Replicas run in a process pool capped by ``COAGFUSE_THREADS``; results are
always ordered by (Lambda, replica) so output does not depend on scheduling.
"""
from __future__ import annotations

import logging
import math
import os
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .core import MomentRecord
from .diagnostics import DiagnosticsSpec, moments, v_marginal, weak_distance
from .io import Check, write_rows, write_summary
from .mc import McResult, run_mc
from .sectional import project_points, run_sectional
from .smolu1d import run_smolu1d

log = logging.getLogger(__name__)

CROSS_PAIRS = ((0.0, 0.0), (0.0, 2.0), (1.0, 0.0))


def max_workers() -> int:
    cap = os.environ.get("COAGFUSE_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            log.warning("ignoring non-integer COAGFUSE_THREADS=%r", cap)
    return n


# -- replica runner --------------------------------------------------------

@dataclass
class ReplicaOutcome:
    lambda_: float
    replica: int
    result: McResult | None
    error: str | None = None


def _run_replica(job) -> ReplicaOutcome:
    cfg, lambda_, replica, probes = job
    try:
        system = cfg.initial_system()
        _, res = run_mc(system, cfg.coag_kernel(), cfg.fusion_kernel(),
                        cfg.sim_config(lambda_), probes, cfg.flow_options(), replica)
        return ReplicaOutcome(lambda_, replica, res)
    except Exception as exc:  # flagged and reported; the study carries on
        return ReplicaOutcome(lambda_, replica, None, f"{type(exc).__name__}: {exc}")


def run_ensemble(cfg: Config, lambdas, probes: dict | DiagnosticsSpec,
                 replicas: int | None = None, workers: int | None = None
                 ) -> list[ReplicaOutcome]:
    """Run ``replicas`` MC replicas for every Lambda.

    ``probes`` is either one spec or a mapping Lambda -> spec.
    """
    replicas = cfg["mc.replicas"] if replicas is None else replicas
    jobs = []
    for lam in lambdas:
        spec = probes[lam] if isinstance(probes, dict) else probes
        jobs.extend((cfg, float(lam), r, spec) for r in range(replicas))
    workers = min(max_workers() if workers is None else workers, len(jobs))
    if workers <= 1:
        outcomes = [_run_replica(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_replica, jobs))
    for o in outcomes:
        if o.error:
            log.error("replica %d at lambda=%r aborted: %s", o.replica, o.lambda_, o.error)
    return outcomes


def mean_se(values) -> tuple[float, float]:
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


def non_increasing(means, ses, k_se: float = 2.0) -> bool:
    """True if each step up is within ``k_se`` combined standard errors."""
    return all(means[i + 1] <= means[i] + k_se * math.hypot(ses[i], ses[i + 1])
               for i in range(len(means) - 1))


@dataclass
class StudyReport:
    name: str
    rows: list[dict] = field(default_factory=list)
    checks: list[Check] = field(default_factory=list)
    aborted: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks) and not self.aborted

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _aborted(outcomes) -> list[str]:
    return [f"lambda={o.lambda_!r} replica={o.replica}: {o.error}" for o in outcomes if o.error]


def _write_report(report: StudyReport, cfg: Config, out, header, row_keys) -> None:
    if out is None:
        return
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / f"{report.name}.csv", header, [[r[k] for k in row_keys] for r in report.rows])
    write_summary(out / f"{report.name}_summary.json", cfg, cfg["sim.seed"], report.rows,
                  report.checks, timing={"wall_time_s": report.wall_time},
                  aborted=report.aborted, passed=report.passed)


# -- fast fusion -----------------------------------------------------------

def study_fast_fusion(cfg: Config, lambdas=None, out=None, replicas=None,
                      workers=None, probe_time: float = 0.5, delta1: float | None = None,
                      threshold: float = 0.05) -> StudyReport:
    """Concentration on the sphere line and distance to the 1-D limit along a Lambda sweep."""
    start = _time.perf_counter()
    lambdas = sorted(cfg["study.lambdas"] if lambdas is None else lambdas, reverse=True)
    if len(lambdas) < 2:
        raise ValueError("need at least two Lambda values")
    delta1 = cfg["diag.delta1"][0] if delta1 is None else delta1
    checkpoints = tuple(sorted(set(cfg["diag.checkpoints"]) | {probe_time}))
    edges = cfg.marginal_edges()
    init = cfg.initial_system()
    ref = run_smolu1d(v_marginal(init, edges), cfg.coag_params(), max(checkpoints),
                      checkpoints, cfg["smolu1d.dt_max"])
    ref_at = {m.time: m for m in ref}
    probes = {lam: DiagnosticsSpec(((0.0, 1.0),), checkpoints, (delta1,), cfg.cutoff(lam), edges)
              for lam in lambdas}
    outcomes = run_ensemble(cfg, lambdas, probes, replicas, workers)
    report = StudyReport("fast_fusion", aborted=_aborted(outcomes))

    stats = {}  # (lam, t) -> {"fraction": [...], "distance": [...], "volume": [...]}
    for o in outcomes:
        if o.result is None:
            continue
        for p in o.result.probes:
            d = weak_distance(p.marginal, ref_at[p.time])
            s = stats.setdefault((o.lambda_, p.time), {"fraction": [], "distance": [],
                                                        "volume": []})
            s["fraction"].append(p.concentration[delta1])
            s["distance"].append(d)
            s["volume"].append(p.volume)
            report.rows.append({"lambda": o.lambda_, "replica": o.replica, "time": p.time,
                                "fraction": p.concentration[delta1], "distance": d})

    summary = {}
    for (lam, t), s in sorted(stats.items(), key=lambda kv: (-kv[0][0], kv[0][1])):
        summary[(lam, t)] = {k: mean_se(v) for k, v in s.items()}

    def series(t, key):
        vals = [summary[(lam, t)][key] for lam in lambdas if (lam, t) in summary]
        return [m for m, _ in vals], [s for _, s in vals]

    m, s = series(probe_time, "fraction")
    report.checks.append(Check(f"fraction_non_increasing_t{probe_time!r}",
                               _worst_increase(m, s), 2.0, non_increasing(m, s)))
    for t in checkpoints:
        m, s = series(t, "distance")
        report.checks.append(Check(f"distance_non_increasing_t{t!r}", _worst_increase(m, s),
                                   2.0, non_increasing(m, s)))
    small = summary.get((lambdas[-1], probe_time), {}).get("fraction", (math.nan, 0.0))[0]
    report.checks.append(Check(f"fraction_at_lambda_{lambdas[-1]!r}", small, threshold,
                               small < threshold))
    control = summary.get((lambdas[0], probe_time), {}).get("fraction", (math.nan, 0.0))[0]
    report.checks.append(Check(f"control_fraction_at_lambda_{lambdas[0]!r}", control, threshold,
                               control > threshold))
    # total volume of every run against the 1-D reference (grid exits included)
    worst = 0.0
    for (lam, t), sm in summary.items():
        ref_vol = float(np.sum(ref_at[t].masses * ref_at[t].pivots)) + ref_at[t].exits.volume
        worst = max(worst, abs(sm["volume"][0] - ref_vol) / ref_vol)
    report.checks.append(Check("marginal_volume_vs_reference", worst, 1e-8, worst <= 1e-8))
    report.summary = {f"{lam!r}@{t!r}": {k: list(v) for k, v in sm.items()}
                      for (lam, t), sm in summary.items()}
    report.wall_time = _time.perf_counter() - start
    _write_report(report, cfg, out, ["lambda", "replica", "time", "fraction", "distance"],
                  ["lambda", "replica", "time", "fraction", "distance"])
    return report


def _worst_increase(means, ses) -> float:
    """Largest step-up along the sweep in units of combined standard errors."""
    worst = -math.inf
    for i in range(len(means) - 1):
        se = math.hypot(ses[i], ses[i + 1])
        up = means[i + 1] - means[i]
        z = up / se if se > 0.0 else (0.0 if up <= 0.0 else math.inf)
        worst = max(worst, z)
    return worst


# -- slow fusion -----------------------------------------------------------

def study_slow_fusion(cfg: Config, lambdas=None, out=None, replicas=None,
                      workers=None) -> StudyReport:
    """Area drift D(Lambda) = |M_{1,0}(T) - M_{1,0}(0)| / M_{1,0}(0) and its log-log slope."""
    start = _time.perf_counter()
    lambdas = sorted(cfg["study.slow_lambdas"] if lambdas is None else lambdas)
    sweep = [*lambdas, math.inf]
    spec = DiagnosticsSpec(((0.0, 1.0), (1.0, 0.0)), (), ())
    outcomes = run_ensemble(cfg, sweep, spec, replicas, workers)
    report = StudyReport("slow_fusion", aborted=_aborted(outcomes))
    drift: dict[float, list] = {lam: [] for lam in sweep}
    vdrift: dict[float, list] = {lam: [] for lam in sweep}
    for o in outcomes:
        if o.result is None:
            continue
        first, last = o.result.moments[0], o.result.moments[-1]
        d = abs(last[(1.0, 0.0)] - first[(1.0, 0.0)]) / first[(1.0, 0.0)]
        dv = abs(last[(0.0, 1.0)] - first[(0.0, 1.0)]) / first[(0.0, 1.0)]
        drift[o.lambda_].append(d)
        vdrift[o.lambda_].append(dv)
        report.rows.append({"lambda": o.lambda_, "replica": o.replica, "area_drift": d,
                            "volume_drift": dv})
    means = [mean_se(drift[lam])[0] for lam in lambdas]
    slope = float(np.polyfit(np.log(lambdas), np.log(means), 1)[0]) if all(
        m > 0 for m in means) else math.nan
    report.checks.append(Check("area_drift_loglog_slope", slope, "[-1.2, -0.8]",
                               -1.2 <= slope <= -0.8))
    worst_v = max((max(v) for v in vdrift.values() if v), default=math.nan)
    report.checks.append(Check("volume_drift_max", worst_v, 1e-10, worst_v <= 1e-10))
    inf_area = max(drift[math.inf], default=math.nan)
    report.checks.append(Check("area_drift_without_fusion", inf_area, 1e-10, inf_area <= 1e-10))
    report.summary = {repr(lam): mean_se(drift[lam]) for lam in sweep}
    report.wall_time = _time.perf_counter() - start
    _write_report(report, cfg, out, ["lambda", "replica", "area_drift", "volume_drift"],
                  ["lambda", "replica", "area_drift", "volume_drift"])
    return report


# -- cross-validation ------------------------------------------------------

def study_cross_validation(cfg: Config, out=None, replicas=None, workers=None,
                           pairs=CROSS_PAIRS, rel_tol: float = 0.05,
                           k_se: float = 3.0) -> StudyReport:
    """MC ensemble moments against the sectional solver at every checkpoint."""
    start = _time.perf_counter()
    lam = cfg["sim.lambda"]
    t_end = cfg["sim.t_end"]
    checkpoints = sorted({0.0, *[t for t in cfg["diag.checkpoints"] if t <= t_end], t_end})
    spec = DiagnosticsSpec(pairs, (), ())
    cadence_cfg = cfg.with_overrides(sim__record_interval=_common_step(checkpoints))
    outcomes = run_ensemble(cadence_cfg, [lam], spec, replicas, workers)
    report = StudyReport("cross_validation", aborted=_aborted(outcomes))

    init = cfg.initial_system()
    grid = cfg.grid()
    state0 = project_points(grid, init.v, init.e, init.weight)
    _, sect = run_sectional(state0, cfg.coag_kernel(), cfg.fusion_kernel(), lam, t_end,
                            checkpoints, pairs, cfg.sectional_options())
    sect_at = {r.time: r for r in sect}
    sect_at.setdefault(0.0, moments(state0, pairs))

    per_time: dict[float, dict] = {}
    for o in outcomes:
        if o.result is None:
            continue
        for rec in o.result.moments:
            t = _match(rec.time, checkpoints)
            if t is None:
                continue
            for key in pairs:
                per_time.setdefault(t, {}).setdefault(key, []).append(rec[key])

    for t in checkpoints:
        for key in pairs:
            mc_mean, mc_se = mean_se(per_time.get(t, {}).get(key, []))
            ref = sect_at[t][key] if t in sect_at else math.nan
            err = abs(mc_mean - ref)
            tol = max(rel_tol * abs(ref), k_se * mc_se)
            report.rows.append({"time": t, "k": key[0], "l": key[1], "mc_mean": mc_mean,
                                "mc_se": mc_se, "sectional": ref, "abs_err": err,
                                "tolerance": tol})
            report.checks.append(Check(f"M_{key[0]:g}_{key[1]:g}@t={t!r}", err, tol,
                                       bool(err <= tol)))
    report.wall_time = _time.perf_counter() - start
    keys = ["time", "k", "l", "mc_mean", "mc_se", "sectional", "abs_err", "tolerance"]
    _write_report(report, cfg, out, keys, keys)
    return report


def _common_step(times) -> float:
    """Largest cadence from the sequence 0.25, 0.125, ... hitting every time."""
    step = 0.25
    while step > 1e-6:
        if all(abs(t / step - round(t / step)) < 1e-9 for t in times):
            return step
        step /= 2.0
    return 0.05


def _match(t: float, times, tol: float = 1e-9):
    for s in times:
        if abs(t - s) <= tol:
            return s
    return None


def ensemble_moments(outcomes) -> list[tuple[float, int, MomentRecord]]:
    """Flatten to (lambda, replica, record) in deterministic order."""
    out = []
    for o in outcomes:
        if o.result is not None:
            out.extend((o.lambda_, o.replica, rec) for rec in o.result.moments)
    return out

