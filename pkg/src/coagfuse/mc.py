"""Marcus-Lushnikov simulation of coagulation with fusion.

Every unordered pair {i, j} of simulation particles merges at rate
``weight * K(eta_i, eta_j)``.  Events are proposed against the separable
majorant

    Khat_ij = c (w-_i w+_j + w-_j w+_i),   w- = v^-alpha,  w+ = v^beta,

whose total over pairs is ``c (W- W+ - sum_i w-_i w+_i)`` and is maintained by
two Fenwick trees.  A proposed pair is accepted with probability
K / Khat (thinning).

The majorant depends on volumes only, and fusion never changes a volume, so
the exponential clock driven by the majorant stays exact while areas relax
between events.  Each particle therefore carries the time of its last update
and is flowed lazily: when it is drawn into a proposal, and at record times.
The only approximation left is the flow integrator, which is exact for the
closed-form rate families.
"""
from __future__ import annotations

import logging
import math
import time as _time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import C0, TWO_THIRDS, MomentRecord, ParticleSystem, SimConfig, merged_excess
from .diagnostics import DiagnosticsSpec, ProbeRecord, moments, take_probe
from .flow import (CLOSED_FORM, FlowStepSpec, relax_adaptive, relax_closed_form,
                   resolve_method)
from .kernels import (CoagKernel, CoagKernelParams, FusionKernel, FusionKernelParams,
                      as_coag_kernel, as_fusion_kernel)
from .sumtree import FenwickTree

log = logging.getLogger(__name__)

REBUILD_EVERY = 1 << 16
STALL_WINDOW = 1_000_000
STALL_ACCEPTANCE = 1e-4
BETA_WARN = 0.95


class StallError(RuntimeError):
    """Acceptance collapsed; the majorant is far above the true kernel."""


class _Rejected:
    __slots__ = ()

    def __repr__(self):
        return "Rejected"

    def __bool__(self):
        return False


Rejected = _Rejected()


@dataclass
class EventLog:
    proposed: int = 0
    accepted: int = 0
    rejected: int = 0
    self_pair_redraws: int = 0
    index_redraws: int = 0
    tree_rebuilds: int = 0
    wall_time: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FlowOptions:
    method: str = "auto"
    rel_tol: float = 1e-11
    abs_tol: float = 1e-14


@dataclass
class McResult:
    moments: list[MomentRecord] = field(default_factory=list)
    probes: list[ProbeRecord] = field(default_factory=list)
    log: EventLog = field(default_factory=EventLog)
    min_excess: float = math.inf


class UniformStream:
    """Buffered uniforms in [0, 1) from a numpy Generator."""

    def __init__(self, rng: np.random.Generator, block: int = 8192):
        self.rng = rng
        self.block = block
        self._buf: list[float] = []
        self._pos = 0

    def __call__(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self.rng.random(self.block).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


def replica_rng(seed: int, replica: int = 0) -> np.random.Generator:
    """Independent stream for (seed, replica)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, replica])))


def _as_stream(rng) -> UniformStream:
    if isinstance(rng, UniformStream):
        return rng
    if isinstance(rng, np.random.Generator):
        return UniformStream(rng)
    return UniformStream(np.random.default_rng(rng))


class SumTreeIndex:
    """Majorant weights v^-alpha and v^beta of the live particles."""

    def __init__(self, volumes, params: CoagKernelParams, alive=None):
        self.alpha = params.alpha
        self.beta = params.beta
        vol = list(volumes)
        alive = [True] * len(vol) if alive is None else list(alive)
        wm = [v ** -self.alpha if ok else 0.0 for v, ok in zip(vol, alive)]
        wp = [v ** self.beta if ok else 0.0 for v, ok in zip(vol, alive)]
        self.minus = FenwickTree(wm)
        self.plus = FenwickTree(wp)
        self.diag = math.fsum(a * b for a, b in zip(wm, wp))
        self.updates = 0
        self.rebuilds = 0
        self.redraws = 0

    def weights(self, v: float) -> tuple[float, float]:
        return v ** -self.alpha, v ** self.beta

    def set(self, i: int, v: float) -> None:
        wm, wp = self.weights(v)
        self.diag += wm * wp - self.minus[i] * self.plus[i]
        self.minus.set(i, wm)
        self.plus.set(i, wp)
        self._tick()

    def remove(self, i: int) -> None:
        self.diag -= self.minus[i] * self.plus[i]
        self.minus.set(i, 0.0)
        self.plus.set(i, 0.0)
        self._tick()

    def _tick(self) -> None:
        self.updates += 1
        if self.updates % REBUILD_EVERY == 0:
            self.rebuild()

    def rebuild(self) -> None:
        self.minus.rebuild()
        self.plus.rebuild()
        self.diag = math.fsum(a * b for a, b in zip(self.minus.leaves(), self.plus.leaves()))
        self.rebuilds += 1

    def pair_sum(self) -> float:
        """Sum over ordered pairs i != j of w-_i w+_j."""
        return max(self.minus.total * self.plus.total - self.diag, 0.0)

    def draw(self, tree: FenwickTree, uniform) -> int:
        while True:
            i = tree.find(uniform() * tree.total)
            if i < len(tree) and tree[i] > 0.0:
                return i
            self.redraws += 1


class MarcusLushnikov:
    """Event-driven engine state for one replica."""

    def __init__(self, system: ParticleSystem, coag, fusion, lambda_: float,
                 flow: FlowOptions | None = None, rng=None):
        self.kernel: CoagKernel = as_coag_kernel(coag)
        self.fusion: FusionKernel = as_fusion_kernel(fusion)
        self.lambda_ = float(lambda_)
        self.flow = flow or FlowOptions()
        self.weight = system.weight
        self.sim_volume = system.sim_volume
        self.rng_seed = system.rng_seed
        self.time = system.time
        self.v = system.v.tolist()
        self.e = system.e.tolist()
        self.t_last = [system.time] * len(self.v)
        self.alive = [True] * len(self.v)
        self.n_alive = len(self.v)
        self.index = SumTreeIndex(self.v, self.kernel.params)
        self.uniform = _as_stream(rng if rng is not None else replica_rng(system.rng_seed))
        self.log = EventLog()
        self._relax = self._make_relax()
        self._window_proposed = 0
        self._window_accepted = 0

    def _make_relax(self):
        lam = self.lambda_
        if math.isinf(lam):
            return None
        fus = self.fusion
        spec = FlowStepSpec(lam, 0.0, self.flow.method, self.flow.rel_tol, self.flow.abs_tol)
        if resolve_method(fus, spec.method) == CLOSED_FORM:
            params = fus.params
            return lambda e, v, dt: relax_closed_form(e, v, params, lam, dt)
        rt, at = spec.rel_tol, spec.abs_tol
        return lambda e, v, dt: relax_adaptive(e, v, fus, lam, dt, rt, at)

    # -- state access ------------------------------------------------------

    def bring_to(self, i: int, t: float) -> None:
        dt = t - self.t_last[i]
        if dt > 0.0:
            e = self.e[i]
            if e > 0.0 and self._relax is not None:
                new = self._relax(e, self.v[i], dt)
                self.e[i] = new if new < e else e
            self.t_last[i] = t

    def flush(self, t: float) -> None:
        """Flow every live particle to time ``t``."""
        for i in range(len(self.v)):
            if self.alive[i]:
                self.bring_to(i, t)
        if t > self.time:
            self.time = t

    def live_indices(self) -> list[int]:
        return [i for i, ok in enumerate(self.alive) if ok]

    def snapshot(self) -> ParticleSystem:
        self.flush(self.time)
        idx = self.live_indices()
        return ParticleSystem([self.v[i] for i in idx], [self.e[i] for i in idx],
                              self.weight, self.sim_volume, self.rng_seed, self.time)

    # -- rates and sampling -----------------------------------------------

    def total_majorant_rate(self) -> float:
        if self.n_alive < 2:
            return 0.0
        return self.weight * self.kernel.c_scale * self.index.pair_sum()

    def draw_pair(self) -> tuple[int, int]:
        idx, u = self.index, self.uniform
        while True:
            i = idx.draw(idx.minus, u)
            j = idx.draw(idx.plus, u)
            if i != j:
                return i, j
            self.log.self_pair_redraws += 1

    def acceptance_probability(self, i: int, j: int) -> float:
        vi, vj = self.v[i], self.v[j]
        idx = self.index
        khat = self.kernel.c_scale * (idx.minus[i] * idx.plus[j] + idx.minus[j] * idx.plus[i])
        k = self.kernel(self.e[i] + C0 * vi ** TWO_THIRDS, vi,
                        self.e[j] + C0 * vj ** TWO_THIRDS, vj)
        return k / khat

    def sample_event(self):
        """Propose one pair at the current time; return (i, j) or ``Rejected``."""
        i, j = self.draw_pair()
        self.bring_to(i, self.time)
        self.bring_to(j, self.time)
        self.log.proposed += 1
        self._window_proposed += 1
        if self.uniform() < self.acceptance_probability(i, j):
            self.log.accepted += 1
            self._window_accepted += 1
            return (i, j) if i < j else (j, i)
        self.log.rejected += 1
        return Rejected

    def coagulate(self, i: int, j: int) -> None:
        """Replace particles i and j by their aggregate (stored in slot i)."""
        vi, vj = self.v[i], self.v[j]
        self.e[i] = merged_excess(self.e[i], vi, self.e[j], vj)
        self.v[i] = vi + vj
        self.t_last[i] = self.time
        self.alive[j] = False
        self.n_alive -= 1
        self.index.set(i, self.v[i])
        self.index.remove(j)

    def _check_stall(self) -> None:
        if self._window_proposed >= STALL_WINDOW:
            ratio = self._window_accepted / self._window_proposed
            if ratio < STALL_ACCEPTANCE:
                raise StallError(
                    f"acceptance {ratio:.3g} over {self._window_proposed} proposals "
                    f"at t={self.time!r} with {self.n_alive} particles")
            self._window_proposed = 0
            self._window_accepted = 0

    def run(self, t_end: float, record_times=(), on_record=None,
            max_events: int | None = None) -> None:
        """Advance to ``t_end``, calling ``on_record(self, t)`` at each record time.

        With ``max_events`` the run stops right after that many accepted
        coagulations (time stays at the last event); pending records are skipped.
        """
        start = _time.perf_counter()
        pending = sorted(t for t in set(record_times) if self.time <= t <= t_end)
        k = 0
        uniform = self.uniform
        while self.n_alive >= 2:
            rate = self.total_majorant_rate()
            if rate <= 0.0:
                break
            t_next = self.time - math.log1p(-uniform()) / rate
            while k < len(pending) and pending[k] <= t_next:
                self.flush(pending[k])
                if on_record is not None:
                    on_record(self, pending[k])
                k += 1
            if t_next > t_end:
                break
            self.time = t_next
            pair = self.sample_event()
            if pair:
                self.coagulate(*pair)
                if max_events is not None and self.log.accepted >= max_events:
                    self.log.tree_rebuilds = self.index.rebuilds
                    self.log.index_redraws = self.index.redraws
                    self.log.wall_time += _time.perf_counter() - start
                    return
            self._check_stall()
        for t in pending[k:]:
            self.flush(t)
            if on_record is not None:
                on_record(self, t)
        self.flush(t_end)
        self.time = t_end
        self.log.tree_rebuilds = self.index.rebuilds
        self.log.index_redraws = self.index.redraws
        self.log.wall_time += _time.perf_counter() - start


# -- module-level operations ----------------------------------------------

def total_majorant_rate(system: ParticleSystem, params) -> float:
    """Total majorant rate weight * c * sum_{i != j} w-_i w+_j of a system."""
    if len(system) < 2:
        return 0.0
    kernel = as_coag_kernel(params)
    wm, wp = kernel.majorant_weights(system.v)
    pair = math.fsum(wm) * math.fsum(wp) - math.fsum(wm * wp)
    return system.weight * kernel.c_scale * pair


def sample_event(system, params, rng):
    """One thinning proposal on a frozen system (no time advance).

    ``system`` may be a :class:`ParticleSystem` or a live :class:`MarcusLushnikov`.
    """
    if isinstance(system, MarcusLushnikov):
        return system.sample_event()
    if len(system) < 2:
        raise ValueError("need at least two particles")
    engine = MarcusLushnikov(system, params, FusionKernelParams(), math.inf, rng=rng)
    return engine.sample_event()


def default_record_times(cfg: SimConfig, checkpoints=()) -> list[float]:
    n = int(math.floor(cfg.t_end / cfg.record_interval + 1e-9))
    times = {round(k * cfg.record_interval, 12) for k in range(n + 1)}
    times.add(cfg.t_end)
    times.update(float(t) for t in checkpoints if 0.0 <= t <= cfg.t_end)
    return sorted(times)


def run_mc(system: ParticleSystem, coag, fusion, cfg: SimConfig,
           probes: DiagnosticsSpec | None = None, flow: FlowOptions | None = None,
           replica: int = 0) -> tuple[ParticleSystem, McResult]:
    """Simulate one replica from ``system`` up to ``cfg.t_end``.

    Moments are recorded every ``cfg.record_interval`` and probes at the
    checkpoints of ``probes``.  The random stream is derived from
    ``(cfg.seed, replica)``.
    """
    probes = probes or DiagnosticsSpec()
    kernel = as_coag_kernel(coag)
    if len(system) < 2:
        raise ValueError("run_mc needs at least two particles")
    if system.v.min() < cfg.v_min:
        raise ValueError(f"initial volume {system.v.min()!r} below v_min {cfg.v_min!r}")
    if kernel.params.beta >= BETA_WARN:
        warnings.warn(f"beta={kernel.params.beta} is close to 1; outside the proven regime",
                      RuntimeWarning, stacklevel=2)
    engine = MarcusLushnikov(system, kernel, fusion, cfg.lambda_, flow,
                             rng=replica_rng(cfg.seed, replica))
    result = McResult(log=engine.log)
    checkpoints = set(float(t) for t in probes.checkpoints)
    cadence = set(default_record_times(cfg))

    def on_record(eng: MarcusLushnikov, t: float) -> None:
        snap = _live_view(eng, t)
        if len(snap):
            result.min_excess = min(result.min_excess, float(snap.e.min()))
        if t in cadence:
            result.moments.append(moments(snap, probes.exponents))
        if t in checkpoints:
            result.probes.append(take_probe(snap, probes))

    engine.run(cfg.t_end, default_record_times(cfg, probes.checkpoints), on_record)
    final = engine.snapshot()
    log.debug("replica %d: %s", replica, engine.log)
    return final, result


def _live_view(engine: MarcusLushnikov, t: float) -> ParticleSystem:
    idx = engine.live_indices()
    return ParticleSystem([engine.v[i] for i in idx], [engine.e[i] for i in idx],
                          engine.weight, engine.sim_volume, engine.rng_seed, t)
