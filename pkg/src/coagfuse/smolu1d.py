"""One-dimensional coagulation with the kernel restricted to spheres.

This is the limit equation reached when fusion is instantaneous: every
particle sits on the sphere line, so the kernel only sees volumes through
K_eff(v, v') = K(C0 v^(2/3), v, C0 v'^(2/3), v').  The solver is the volume
column of the sectional scheme (fixed pivots, explicit Euler).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import CoagKernelParams, effective_kernel
from .sectional import ExitTally, StabilityError, geometric_centres, pivot_split


@dataclass
class Marginal1D:
    v_edges: np.ndarray
    masses: np.ndarray
    time: float = 0.0
    exits: ExitTally = field(default_factory=ExitTally)

    def __post_init__(self):
        self.v_edges = np.asarray(self.v_edges, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        if self.masses.shape != (self.v_edges.size - 1,):
            raise ValueError("need one mass per bin")
        if np.any(np.diff(self.v_edges) <= 0.0):
            raise ValueError("edges must be strictly increasing")
        if np.any(self.masses < 0.0) or not np.all(np.isfinite(self.masses)):
            raise ValueError("masses must be finite and >= 0")

    @property
    def pivots(self) -> np.ndarray:
        return geometric_centres(self.v_edges)

    def moment(self, l: float) -> float:
        return float(np.sum(self.masses * self.pivots ** l))

    def copy(self) -> "Marginal1D":
        return Marginal1D(self.v_edges.copy(), self.masses.copy(), self.time,
                          ExitTally(**vars(self.exits)))


def project_volumes(v_edges, volumes, weights) -> Marginal1D:
    """Deposit point masses on pivots conserving number and volume."""
    edges = np.asarray(v_edges, dtype=float)
    piv = geometric_centres(edges)
    v = np.atleast_1d(np.asarray(volumes, dtype=float))
    w = np.broadcast_to(np.asarray(weights, dtype=float), v.shape)
    k, f, inside = pivot_split(piv, v)
    masses = np.bincount(k[inside], w[inside] * f[inside], piv.size)
    masses += np.bincount(k[inside] + 1, w[inside] * (1.0 - f[inside]), piv.size)
    exits = ExitTally(float(np.sum(w[~inside])), float(np.sum(w[~inside] * v[~inside])), 0.0)
    return Marginal1D(edges, masses, 0.0, exits)


class Smolu1DOperator:
    def __init__(self, v_edges, params: CoagKernelParams):
        self.edges = np.asarray(v_edges, dtype=float)
        piv = geometric_centres(self.edges)
        self.piv = piv
        n = piv.size
        ii, jj = np.triu_indices(n)
        self.I, self.J = ii, jj
        self.Kfull = np.asarray(effective_kernel(params, piv[:, None], piv[None, :]), dtype=float)
        self.K = self.Kfull[ii, jj]
        self.half = np.where(ii == jj, 0.5, 1.0)
        vp = piv[ii] + piv[jj]
        self.prod_v = vp
        k, f, inside = pivot_split(piv, vp)
        self.inside = inside
        self.k, self.f = k, f

    def stability_bound(self, m: np.ndarray) -> float:
        peak = float((self.Kfull @ m).max())
        return math.inf if peak <= 0.0 else 0.5 / peak

    def apply(self, m: np.ndarray, dt: float, exits: ExitTally, check: bool = True) -> np.ndarray:
        if check:
            bound = self.stability_bound(m)
            if dt > bound * (1.0 + 1e-12):
                raise StabilityError(f"step dt={dt!r} exceeds bound {bound!r}", bound)
        n = m.size
        rate = self.half * self.K * m[self.I] * m[self.J]
        loss = np.bincount(self.I, rate, n) + np.bincount(self.J, rate, n)
        ins = self.inside
        r_in = rate[ins]
        gain = np.bincount(self.k[ins], r_in * self.f[ins], n)
        gain += np.bincount(self.k[ins] + 1, r_in * (1.0 - self.f[ins]), n)
        if not np.all(ins):
            r_out = rate[~ins] * dt
            exits.number += float(np.sum(r_out))
            exits.volume += float(np.sum(r_out * self.prod_v[~ins]))
        new = m + dt * (gain - loss)
        np.maximum(new, 0.0, out=new)
        return new


def run_smolu1d(init: Marginal1D, params: CoagKernelParams, t_end: float,
                record_times=(), dt_max: float = 2e-3, safety: float = 0.9) -> list[Marginal1D]:
    """Evolve ``init`` to ``t_end``; returns snapshots at ``record_times`` and ``t_end``."""
    op = Smolu1DOperator(init.v_edges, params)
    times = sorted({float(t) for t in record_times if init.time <= t <= t_end} | {float(t_end)})
    state = init.copy()
    history = []
    for target in times:
        while state.time < target - 1e-12:
            bound = op.stability_bound(state.masses)
            dt = min(dt_max, safety * bound, target - state.time)
            state.masses = op.apply(state.masses, dt, state.exits, check=False)
            state.time = state.time + dt if target - state.time > dt else target
        state.time = target
        history.append(state.copy())
    return history
