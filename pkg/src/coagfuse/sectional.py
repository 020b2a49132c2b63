"""Deterministic finite-volume solver on a log-spaced (volume, excess-area) grid.

Coagulation is an explicit Euler fixed-pivot scheme: the product of two cells
is split over the (at most four) neighbouring pivots so that particle number,
total volume and total area are all conserved.  The volume split uses the two
pivots bracketing v1 + v2; the excess coordinate of the product is raised by
the concavity defect of v -> v^(2/3) over that split, then split itself, which
makes the area balance exact.

Fusion moves mass toward e = 0 with speed (1/lam) r(a, v) e.  It is an upwind
scheme on the pivot ladder of each volume column: cell l hands mass to cell
l - 1 at rate u(e_l) / (e_l - e_{l-1}).  The first e-bin has pivot e = 0 and
absorbs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import C0, TWO_THIRDS, MomentRecord
from .kernels import as_coag_kernel, as_fusion_kernel


class StabilityError(ValueError):
    """Requested step exceeds the explicit stability bound."""

    def __init__(self, message: str, bound: float):
        super().__init__(message)
        self.bound = bound


# -- pivots ----------------------------------------------------------------

def log_edges(lo: float, hi: float, n: int) -> np.ndarray:
    if not (0.0 < lo < hi) or n < 1:
        raise ValueError("need 0 < lo < hi and n >= 1")
    return np.geomspace(lo, hi, n + 1)


def anchored_log_edges(anchor: float, hi: float, n: int) -> np.ndarray:
    """Log edges whose first geometric centre is exactly ``anchor``."""
    if not (0.0 < anchor < hi) or n < 1:
        raise ValueError("need 0 < anchor < hi and n >= 1")
    ratio = (hi / anchor) ** (1.0 / (n - 0.5))
    edges = anchor * ratio ** (np.arange(n + 1) - 0.5)
    edges[-1] = hi
    return edges


def geometric_centres(edges: np.ndarray) -> np.ndarray:
    return np.sqrt(edges[:-1] * edges[1:])


def pivot_split(pivots: np.ndarray, x):
    """Bracket ``x`` between pivots k and k+1.

    Returns ``(k, frac_lo, inside)``: a unit mass at x is represented by
    ``frac_lo`` at pivot k and ``1 - frac_lo`` at pivot k+1, which preserves
    both the mass and the first moment.  ``inside`` is False where x lies
    outside [pivots[0], pivots[-1]].
    """
    x = np.asarray(x, dtype=float)
    n = pivots.size
    k = np.searchsorted(pivots, x, side="right") - 1
    inside = (k >= 0) & (x <= pivots[-1])
    kk = np.clip(k, 0, n - 2)
    lo = pivots[kk]
    hi = pivots[kk + 1]
    frac = (hi - x) / (hi - lo)
    frac = np.clip(frac, 0.0, 1.0)
    return kk, frac, inside


# -- grid ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Grid2D:
    v_edges: np.ndarray
    e_edges: np.ndarray

    def __post_init__(self):
        ve = np.asarray(self.v_edges, dtype=float)
        ee = np.asarray(self.e_edges, dtype=float)
        if ve.size < 3 or ee.size < 3:
            raise ValueError("need at least two bins per coordinate")
        if np.any(np.diff(ve) <= 0.0) or np.any(np.diff(ee) <= 0.0):
            raise ValueError("edges must be strictly increasing")
        if ve[0] <= 0.0:
            raise ValueError("volume edges must be positive")
        if ee[0] != 0.0:
            raise ValueError("first excess-area edge must be exactly 0")
        object.__setattr__(self, "v_edges", ve)
        object.__setattr__(self, "e_edges", ee)
        object.__setattr__(self, "v_piv", geometric_centres(ve))
        e_piv = np.empty(ee.size - 1)
        e_piv[0] = 0.0
        e_piv[1:] = geometric_centres(ee[1:])
        object.__setattr__(self, "e_piv", e_piv)

    @classmethod
    def build(cls, nv: int = 64, ne: int = 32, v_min: float | None = None,
              v_max: float = 200.0, e_min: float = 1e-3, e_max: float = 200.0,
              v_anchor: float = 1.0) -> "Grid2D":
        """Log grid; when ``v_min`` is None the first volume pivot sits at ``v_anchor``."""
        if v_min is None:
            ve = anchored_log_edges(v_anchor, v_max, nv)
        else:
            ve = log_edges(v_min, v_max, nv)
        if not 0.0 < e_min < e_max:
            raise ValueError("need 0 < e_min < e_max")
        ee = np.concatenate(([0.0], np.geomspace(e_min, e_max, ne)))
        return cls(ve, ee)

    @property
    def shape(self) -> tuple[int, int]:
        return self.v_piv.size, self.e_piv.size

    def area_piv(self) -> np.ndarray:
        """Cell-representative area, shape (nv, ne)."""
        return self.e_piv[None, :] + C0 * self.v_piv[:, None] ** TWO_THIRDS


@dataclass
class ExitTally:
    number: float = 0.0
    volume: float = 0.0
    area: float = 0.0


@dataclass
class GridState:
    grid: Grid2D
    n: np.ndarray
    time: float = 0.0
    exits: ExitTally = field(default_factory=ExitTally)

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=float)
        if self.n.shape != self.grid.shape:
            raise ValueError(f"state shape {self.n.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.n)) or np.any(self.n < 0.0):
            raise ValueError("cell densities must be finite and >= 0")

    def copy(self) -> "GridState":
        return GridState(self.grid, self.n.copy(), self.time, replace(self.exits))

    def moment(self, k: float, l: float) -> float:
        g = self.grid
        a = g.area_piv()
        v = g.v_piv[:, None]
        return float(np.sum(self.n * a ** k * v ** l))


def project_points(grid: Grid2D, v, e, weights) -> GridState:
    """Deposit weighted point masses onto the grid, conserving number, volume, area."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    e = np.atleast_1d(np.asarray(e, dtype=float))
    w = np.broadcast_to(np.asarray(weights, dtype=float), v.shape)
    n = np.zeros(grid.shape)
    exits = ExitTally()
    _deposit(grid, n, v, e + C0 * v ** TWO_THIRDS, w, exits)
    return GridState(grid, n, 0.0, exits)


def _deposit(grid: Grid2D, n: np.ndarray, v, a, w, exits: ExitTally) -> None:
    """Add mass ``w`` at (v, a) to ``n`` by tensor-product pivot splitting."""
    vp, ep = grid.v_piv, grid.e_piv
    kv, fv, in_v = pivot_split(vp, v)
    s_split = C0 * (fv * vp[kv] ** TWO_THIRDS + (1.0 - fv) * vp[kv + 1] ** TWO_THIRDS)
    e_t = a - s_split
    ke, fe, in_e = pivot_split(ep, np.maximum(e_t, 0.0))
    inside = in_v & in_e & (e_t >= -1e-12 * a)
    if np.any(~inside):
        wo = w[~inside]
        exits.number += float(np.sum(wo))
        exits.volume += float(np.sum(wo * v[~inside]))
        exits.area += float(np.sum(wo * a[~inside]))
    kv, fv, ke, fe, wi = kv[inside], fv[inside], ke[inside], fe[inside], w[inside]
    nv, ne = grid.shape
    flat = n.reshape(-1)
    size = nv * ne
    base = kv * ne + ke
    flat += np.bincount(base, wi * fv * fe, size)
    flat += np.bincount(base + ne, wi * (1.0 - fv) * fe, size)
    flat += np.bincount(base + 1, wi * fv * (1.0 - fe), size)
    flat += np.bincount(base + ne + 1, wi * (1.0 - fv) * (1.0 - fe), size)


# -- coagulation -----------------------------------------------------------

class CoagOperator:
    """Pair tables for the explicit coagulation update on one grid.

    Pair data are cached for the current active set (cells holding more than
    ``active_tol`` times the largest cell).
    """

    def __init__(self, grid: Grid2D, kernel, active_tol: float = 1e-14):
        self.grid = grid
        self.kernel = as_coag_kernel(kernel)
        self.active_tol = active_tol
        nv, ne = grid.shape
        self._v = np.repeat(grid.v_piv, ne)
        self._a = grid.area_piv().reshape(-1)
        self._key = None

    def _prepare(self, flat: np.ndarray) -> None:
        peak = flat.max() if flat.size else 0.0
        active = np.flatnonzero(flat > self.active_tol * peak) if peak > 0 else np.zeros(0, int)
        key = active.tobytes()
        if key == self._key:
            return
        self._key = key
        self.active = active
        m = active.size
        ii, jj = np.triu_indices(m)
        self.I = active[ii]
        self.J = active[jj]
        va, vb = self._v[self.I], self._v[self.J]
        aa, ab = self._a[self.I], self._a[self.J]
        self.K = np.asarray(self.kernel(aa, va, ab, vb), dtype=float)
        self.half = np.where(self.I == self.J, 0.5, 1.0)
        vp = va + vb
        self.prod_v = vp
        self.prod_a = aa + ab
        g = self.grid
        kv, fv, in_v = pivot_split(g.v_piv, vp)
        s_split = C0 * (fv * g.v_piv[kv] ** TWO_THIRDS + (1.0 - fv) * g.v_piv[kv + 1] ** TWO_THIRDS)
        e_t = np.maximum(aa + ab - s_split, 0.0)
        ke, fe, in_e = pivot_split(g.e_piv, e_t)
        self.inside = in_v & in_e
        ne = g.shape[1]
        base = kv * ne + ke
        self.targets = (base, base + ne, base + 1, base + ne + 1)
        self.fracs = (fv * fe, (1.0 - fv) * fe, fv * (1.0 - fe), (1.0 - fv) * (1.0 - fe))

    def loss_rates(self, flat: np.ndarray) -> np.ndarray:
        """Per-cell loss frequency sum_j K_ij n_j."""
        self._prepare(flat)
        size = flat.size
        off = self.I != self.J
        out = np.bincount(self.I, self.K * flat[self.J], size)
        out += np.bincount(self.J[off], self.K[off] * flat[self.I[off]], size)
        return out

    def stability_bound(self, flat: np.ndarray) -> float:
        peak = self.loss_rates(flat).max() if flat.size else 0.0
        return math.inf if peak <= 0.0 else 0.5 / peak

    def apply(self, flat: np.ndarray, dt: float, exits: ExitTally,
              check: bool = True) -> np.ndarray:
        if check:
            bound = self.stability_bound(flat)
            if dt > bound * (1.0 + 1e-12):
                raise StabilityError(f"coagulation step dt={dt!r} exceeds bound {bound!r}", bound)
        else:
            self._prepare(flat)
        size = flat.size
        rate = self.half * self.K * flat[self.I] * flat[self.J]
        loss = np.bincount(self.I, rate, size) + np.bincount(self.J, rate, size)
        r_in = rate[self.inside]
        gain = np.zeros(size)
        for tgt, frac in zip(self.targets, self.fracs):
            gain += np.bincount(tgt[self.inside], r_in * frac[self.inside], size)
        out_mask = ~self.inside
        if np.any(out_mask):
            r_out = rate[out_mask] * dt
            exits.number += float(np.sum(r_out))
            exits.volume += float(np.sum(r_out * self.prod_v[out_mask]))
            exits.area += float(np.sum(r_out * self.prod_a[out_mask]))
        new = flat + dt * (gain - loss)
        # round-off can leave -1e-30 where a cell is drained exactly
        np.maximum(new, 0.0, out=new)
        return new


def coag_step(state: GridState, kernel, dt: float,
              operator: CoagOperator | None = None) -> GridState:
    """One explicit Euler coagulation step; refuses ``dt`` above 0.5 / max_i sum_j K_ij n_j."""
    op = operator or CoagOperator(state.grid, kernel)
    out = state.copy()
    flat = op.apply(state.n.reshape(-1), dt, out.exits)
    out.n = flat.reshape(state.grid.shape)
    out.time = state.time + dt
    return out


# -- advection -------------------------------------------------------------

def transfer_rates(grid: Grid2D, fusion, lambda_: float) -> np.ndarray:
    """Rate at which cell (i, l) hands mass to (i, l - 1); zero for l = 0."""
    kern = as_fusion_kernel(fusion)
    rates = np.zeros(grid.shape)
    if math.isinf(lambda_):
        return rates
    e = grid.e_piv
    a = grid.area_piv()
    v = np.broadcast_to(grid.v_piv[:, None], grid.shape)
    speed = np.asarray(kern(a, v), dtype=float) * e[None, :] / lambda_
    rates[:, 1:] = speed[:, 1:] / np.diff(e)[None, :]
    return rates


def cfl_bound(grid: Grid2D, fusion, lambda_: float, rates: np.ndarray | None = None) -> float:
    r = transfer_rates(grid, fusion, lambda_) if rates is None else rates
    peak = float(r.max())
    return math.inf if peak <= 0.0 else 1.0 / peak


def advect_step(state: GridState, fusion, lambda_: float, dt: float,
                rates: np.ndarray | None = None) -> GridState:
    """First-order upwind fusion transport over ``dt`` (refuses CFL > 1)."""
    r = transfer_rates(state.grid, fusion, lambda_) if rates is None else rates
    bound = cfl_bound(state.grid, fusion, lambda_, r)
    if dt > bound * (1.0 + 1e-12):
        raise StabilityError(f"advection step dt={dt!r} violates CFL bound {bound!r}", bound)
    out = state.copy()
    moved = dt * r * state.n
    out.n = state.n - moved
    out.n[:, :-1] += moved[:, 1:]
    np.maximum(out.n, 0.0, out=out.n)
    out.time = state.time + dt
    return out


# -- driver ----------------------------------------------------------------

@dataclass(frozen=True)
class SectionalOptions:
    dt_max: float = 2e-3
    safety: float = 0.9
    active_tol: float = 1e-14


def _advect_substeps(state: GridState, fusion, lambda_: float, span: float,
                     rates: np.ndarray, cfl: float, safety: float) -> GridState:
    if span <= 0.0 or math.isinf(lambda_):
        return state
    nsub = max(1, math.ceil(span / (safety * cfl))) if math.isfinite(cfl) else 1
    h = span / nsub
    t0 = state.time
    for _ in range(nsub):
        state = advect_step(state, fusion, lambda_, h, rates)
    state.time = t0 + span
    return state


def run_sectional(init: GridState, coag, fusion, lambda_: float, t_end: float,
                  record_times=(), exponents=((0, 0), (0, 1), (1, 0), (0, 2)),
                  options: SectionalOptions | None = None):
    """Strang-split solve A(dt/2) C(dt) A(dt/2) up to ``t_end``.

    Returns ``(history, records)``: snapshots and moment records at each
    record time (plus ``t_end``).
    """
    opts = options or SectionalOptions()
    grid = init.grid
    op = CoagOperator(grid, coag, opts.active_tol)
    rates = transfer_rates(grid, fusion, lambda_)
    cfl = cfl_bound(grid, fusion, lambda_, rates)
    times = sorted({float(t) for t in record_times if init.time <= t <= t_end} | {t_end})
    state = init.copy()
    history, records = [], []
    for target in times:
        while state.time < target - 1e-12:
            flat = state.n.reshape(-1)
            bound = op.stability_bound(flat)
            dt = min(opts.dt_max, opts.safety * bound, target - state.time)
            t_next = state.time + dt if target - state.time > dt else target
            state = _advect_substeps(state, fusion, lambda_, 0.5 * dt, rates, cfl, opts.safety)
            # dt already carries the safety margin on the bound computed above
            nflat = op.apply(state.n.reshape(-1), dt, state.exits, check=False)
            state.n = nflat.reshape(grid.shape)
            state = _advect_substeps(state, fusion, lambda_, 0.5 * dt, rates, cfl, opts.safety)
            state.time = t_next
        state.time = target
        history.append(state.copy())
        records.append(MomentRecord(target, {(float(k), float(l)): state.moment(k, l)
                                             for k, l in exponents}))
    return history, records
