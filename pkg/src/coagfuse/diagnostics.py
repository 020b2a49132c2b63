"""Observables: moments, concentration near the sphere line, marginals, distances.

All functions are pure and accept either a :class:`ParticleSystem` (exact
weighted sums) or a :class:`GridState` (cell-pivot quadrature).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import MomentRecord, ParticleSystem, as_pairs
from .sectional import ExitTally, GridState
from .smolu1d import Marginal1D, project_volumes

# (area exponent k, volume exponent l); the high/negative orders track the
# moment bounds for mu = 1
DEFAULT_EXPONENTS = ((0, 0), (0, 1), (1, 0), (0, 2), (4, 0), (0, 4), (0, -4))
N_TEST_FUNCTIONS = 64


class DiagnosticsError(ValueError):
    pass


@dataclass(frozen=True)
class CutoffSpec:
    """Area cutoff chi: 1 on (0, 1/eps^2], 0 on [2/eps^2, inf), linear between."""
    epsilon: float

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")

    def chi(self, a):
        lo = 1.0 / self.epsilon ** 2
        return np.clip(2.0 - np.asarray(a, dtype=float) / lo, 0.0, 1.0)


@dataclass(frozen=True)
class DiagnosticsSpec:
    exponents: tuple = DEFAULT_EXPONENTS
    checkpoints: tuple = ()
    delta1: tuple = (0.1,)
    cutoff: CutoffSpec | None = None
    v_edges: np.ndarray | None = field(default=None, compare=False)


@dataclass
class ProbeRecord:
    time: float
    concentration: dict[float, float]
    marginal: Marginal1D | None
    n_particles: int
    volume: float = math.nan


# -- moments ---------------------------------------------------------------

def moments(state, pairs=DEFAULT_EXPONENTS) -> MomentRecord:
    """M_{k,l} = sum w a^k v^l for every (k, l) in ``pairs``."""
    entries = {}
    if isinstance(state, GridState):
        for k, l in as_pairs(pairs):
            val = state.moment(k, l)
            if not math.isfinite(val):
                raise DiagnosticsError(f"moment M_{k},{l} is not finite")
            entries[(k, l)] = val
        return MomentRecord(state.time, entries)
    a = state.a
    v = state.v
    for k, l in as_pairs(pairs):
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            terms = a ** k * v ** l
        val = state.weight * math.fsum(terms.tolist())
        if not math.isfinite(val):
            raise DiagnosticsError(f"moment M_{k},{l} is not finite")
        entries[(k, l)] = val
    return MomentRecord(state.time, entries)


# -- concentration on the sphere line -------------------------------------

def concentration_fraction(state, delta1: float) -> float:
    """Volume-weighted fraction of mass whose excess area exceeds ``delta1``."""
    if not delta1 > 0.0:
        raise ValueError("delta1 must be > 0")
    if isinstance(state, GridState):
        g = state.grid
        vol = state.n * g.v_piv[:, None]
        total = float(vol.sum())
        if total <= 0.0:
            raise DiagnosticsError("empty grid state")
        return float(vol[:, g.e_piv > delta1].sum()) / total
    if len(state) == 0:
        raise DiagnosticsError("empty particle system")
    total = math.fsum(state.v.tolist())
    off = math.fsum(state.v[state.e > delta1].tolist())
    return off / total


# -- marginals -------------------------------------------------------------

def v_marginal(system: ParticleSystem, v_edges) -> Marginal1D:
    """Volume marginal on the pivots of ``v_edges`` (number and volume conserving)."""
    m = project_volumes(v_edges, system.v, system.weight)
    m.time = system.time
    return m


def cutoff_marginal(system: ParticleSystem, spec: CutoffSpec, v_edges) -> Marginal1D:
    """Volume marginal of chi_eps(a) f: each particle weighted by chi_eps(a)."""
    w = system.weight * spec.chi(system.a)
    m = project_volumes(v_edges, system.v, w)
    m.time = system.time
    return m


def grid_v_marginal(state: GridState) -> Marginal1D:
    g = state.grid
    return Marginal1D(g.v_edges, state.n.sum(axis=1), state.time,
                      ExitTally(**vars(state.exits)))


# -- weak distance ---------------------------------------------------------

def hat_dictionary(v_edges, count: int = N_TEST_FUNCTIONS):
    """Hat functions on log-spaced centres: returns (values at pivots, Lipschitz constants)."""
    edges = np.asarray(v_edges, dtype=float)
    piv = np.sqrt(edges[:-1] * edges[1:])
    centres = np.geomspace(piv[0], piv[-1], count)
    ratio = (piv[-1] / piv[0]) ** (1.0 / (count - 1))
    half = centres * (ratio - 1.0)
    values = np.clip(1.0 - np.abs(piv[None, :] - centres[:, None]) / half[:, None], 0.0, None)
    return values, 1.0 / half


def weak_distance(m1: Marginal1D, m2: Marginal1D) -> float:
    """Bounded-Lipschitz proxy: max over the hat dictionary of |<phi, m1 - m2>| / max(1, Lip phi)."""
    if m1.v_edges.shape != m2.v_edges.shape or not np.array_equal(m1.v_edges, m2.v_edges):
        raise DiagnosticsError("marginals live on different bin edges")
    values, lip = hat_dictionary(m1.v_edges)
    diff = values @ (m1.masses - m2.masses)
    return float(np.max(np.abs(diff) / np.maximum(1.0, lip)))


# -- probes ----------------------------------------------------------------

def take_probe(system: ParticleSystem, spec: DiagnosticsSpec) -> ProbeRecord:
    conc = {float(d): concentration_fraction(system, d) for d in spec.delta1} if len(system) else {}
    marginal = None
    if spec.v_edges is not None:
        marginal = (cutoff_marginal(system, spec.cutoff, spec.v_edges) if spec.cutoff
                    else v_marginal(system, spec.v_edges))
    volume = system.weight * math.fsum(system.v.tolist())
    return ProbeRecord(system.time, conc, marginal, len(system), volume)
