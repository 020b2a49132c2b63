"""Relaxation of the excess area along fusion characteristics.

Between collisions each particle follows

    dA/dt = (1/lam) r(A, V) (C0 V^(2/3) - A),   V constant,

which in the excess coordinate e = A - s, s = C0 V^(2/3), reads

    de/dt = -(1/lam) r(e + s, V) e.

Closed forms exist for power-law rates with mu = 0 (linear decay) and
mu = 1 (a Bernoulli equation).  Everything else goes through an adaptive
L-stable SDIRK scheme applied to u = log(e), where the right-hand side is
strictly negative, so positivity and monotone decay hold by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import C0, TWO_THIRDS, Particle, ParticleSystem
from .kernels import FusionKernel, FusionKernelParams, as_fusion_kernel

CLOSED_FORM = "closed_form"
ADAPTIVE = "adaptive"
AUTO = "auto"
METHODS = (AUTO, CLOSED_FORM, ADAPTIVE)

# below this fraction of max(1, s) the excess area is snapped to zero
SNAP_FRACTION = 1e-14


class FlowError(RuntimeError):
    """Integrator failure (step size underflow, non-finite state)."""


@dataclass(frozen=True)
class FlowStepSpec:
    lambda_: float
    dt: float
    method: str = AUTO
    rel_tol: float = 1e-11
    abs_tol: float = 1e-14

    def __post_init__(self):
        if not self.lambda_ > 0.0:
            raise ValueError("lambda must be > 0")
        if not (self.dt >= 0.0 and math.isfinite(self.dt)):
            raise ValueError("dt must be finite and >= 0")
        if self.method not in METHODS:
            raise ValueError(f"unknown flow method {self.method!r}")
        if not (self.rel_tol > 0.0 and self.abs_tol > 0.0):
            raise ValueError("tolerances must be > 0")


def has_closed_form(kernel: FusionKernel) -> bool:
    return kernel.plain and kernel.params.mu in (0.0, 1.0)


def resolve_method(kernel: FusionKernel, method: str) -> str:
    if method == AUTO:
        return CLOSED_FORM if has_closed_form(kernel) else ADAPTIVE
    if method == CLOSED_FORM and not has_closed_form(kernel):
        raise ValueError("closed-form flow needs an untruncated kernel with mu in {0, 1}")
    return method


# -- closed forms ----------------------------------------------------------

def relax_closed_form(e, v, params: FusionKernelParams, lambda_: float, dt: float):
    """Exact solution for mu = 0 or mu = 1; floats or arrays."""
    if math.isinf(lambda_) or dt == 0.0:
        return e
    scalar = isinstance(e, float) and isinstance(v, float)
    if scalar:
        k = params.r_scale * v ** params.sigma / lambda_
        if params.mu == 0.0:
            out = e * math.exp(-k * dt)
        else:
            s = C0 * v ** TWO_THIRDS
            x = k * s * dt
            out = e * math.exp(-x) / (1.0 + (e / s) * -math.expm1(-x))
        return 0.0 if out < SNAP_FRACTION * max(1.0, C0 * v ** TWO_THIRDS) else out
    e = np.asarray(e, dtype=float)
    v = np.asarray(v, dtype=float)
    k = params.r_scale * np.power(v, params.sigma) / lambda_
    s = C0 * np.power(v, TWO_THIRDS)
    if params.mu == 0.0:
        out = e * np.exp(-k * dt)
    else:
        x = k * s * dt
        out = e * np.exp(-x) / (1.0 + (e / s) * -np.expm1(-x))
    return np.where(out < SNAP_FRACTION * np.maximum(1.0, s), 0.0, out)


# -- adaptive SDIRK on log(e) ----------------------------------------------

# Alexander's three-stage, third-order, L-stable, stiffly accurate SDIRK.
_G = 0.43586652150845899
_B1 = -(6.0 * _G * _G - 16.0 * _G + 1.0) / 4.0
_B2 = (6.0 * _G * _G - 20.0 * _G + 5.0) / 4.0
_A21 = (1.0 - _G) / 2.0
_MAX_STEPS = 1_000_000


class _LogExcessRHS:
    """du/dt = -r(e^u + s, v) / lam and its u-derivative."""

    __slots__ = ("kernel", "v", "s", "inv_lam")

    def __init__(self, kernel: FusionKernel, v: float, lambda_: float):
        self.kernel = kernel
        self.v = v
        self.s = C0 * v ** TWO_THIRDS
        self.inv_lam = 1.0 / lambda_

    def __call__(self, u):
        ex = math.exp(u)
        a = ex + self.s
        return -self.inv_lam * self.kernel(a, self.v), -self.inv_lam * self.kernel.da(a, self.v) * ex


def _stage(rhs, u_base, hg):
    """Solve k = g(u_base + hg k) by Newton's method."""
    k, _ = rhs(u_base)
    for _ in range(50):
        g, dg = rhs(u_base + hg * k)
        f = k - g
        step = f / (1.0 - hg * dg)
        k -= step
        if abs(step) <= 1e-15 * (abs(k) + 1e-300):
            return k
    g, _ = rhs(u_base + hg * k)
    if abs(k - g) > 1e-10 * (abs(k) + 1e-300):
        raise FlowError("Newton iteration failed to converge in implicit stage")
    return k


def _sdirk3(rhs, u, h):
    hg = h * _G
    k1 = _stage(rhs, u, hg)
    k2 = _stage(rhs, u + h * _A21 * k1, hg)
    k3 = _stage(rhs, u + h * (_B1 * k1 + _B2 * k2), hg)
    return u + h * (_B1 * k1 + _B2 * k2 + _G * k3)


def relax_adaptive(e: float, v: float, kernel: FusionKernel, lambda_: float, dt: float,
                   rel_tol: float = 1e-11, abs_tol: float = 1e-14) -> float:
    """Integrate the excess-area ODE over ``dt`` with step doubling.

    The local error estimate in u = log(e) is |u_2(h/2) - u_1(h)| / 7; a step
    is accepted when it is below rel_tol + abs_tol / e, otherwise halved.
    """
    if e == 0.0 or dt == 0.0 or math.isinf(lambda_):
        return e
    rhs = _LogExcessRHS(kernel, v, lambda_)
    floor = SNAP_FRACTION * max(1.0, rhs.s)
    if e < floor:
        return 0.0
    u = math.log(e)
    u_floor = math.log(floor)
    g0, dg0 = rhs(u)
    # initial step from the stiffness and the decay rate
    h = min(dt, 0.1 / max(abs(g0), abs(dg0), 1e-300))
    t = 0.0
    h_min = dt * 1e-14
    for _ in range(_MAX_STEPS):
        if t >= dt:
            break
        h = min(h, dt - t)
        full = _sdirk3(rhs, u, h)
        half = _sdirk3(rhs, u, 0.5 * h)
        two = _sdirk3(rhs, half, 0.5 * h)
        if not math.isfinite(two):
            raise FlowError(f"non-finite state at t={t!r} (v={v!r}, e0={e!r})")
        err = abs(two - full) / 7.0
        tol = rel_tol + abs_tol / math.exp(min(u, 700.0))
        if err <= tol:
            t += h
            u = min(two, u)
            if u < u_floor:
                return 0.0
            fac = 4.0 if err == 0.0 else min(4.0, max(1.0, 0.9 * (tol / err) ** 0.25))
            h *= fac
        else:
            h *= 0.5
            if h < h_min:
                raise FlowError(
                    f"step size underflow at t={t!r} (v={v!r}, e0={e!r}, lambda={lambda_!r})")
    else:
        raise FlowError(f"step budget exhausted (v={v!r}, e0={e!r})")
    return math.exp(u)


# -- public operations -----------------------------------------------------

def relax_excess(e: float, v: float, kernel, spec: FlowStepSpec) -> float:
    """Excess area after flowing for ``spec.dt``; scalar path used by the MC engine."""
    kernel = as_fusion_kernel(kernel)
    method = resolve_method(kernel, spec.method)
    if method == CLOSED_FORM:
        return relax_closed_form(e, v, kernel.params, spec.lambda_, spec.dt)
    return relax_adaptive(e, v, kernel, spec.lambda_, spec.dt, spec.rel_tol, spec.abs_tol)


def flow_particle(p: Particle, kernel, spec: FlowStepSpec) -> Particle:
    try:
        e = relax_excess(p.e, p.v, kernel, spec)
    except FlowError as exc:
        raise FlowError(f"{exc} [particle {p!r}]") from exc
    return Particle(v=p.v, e=min(e, p.e))


def flow_arrays(e: np.ndarray, v: np.ndarray, kernel, spec: FlowStepSpec) -> np.ndarray:
    kernel = as_fusion_kernel(kernel)
    method = resolve_method(kernel, spec.method)
    if method == CLOSED_FORM:
        out = relax_closed_form(e, v, kernel.params, spec.lambda_, spec.dt)
    else:
        out = np.array([relax_adaptive(float(ei), float(vi), kernel, spec.lambda_, spec.dt,
                                       spec.rel_tol, spec.abs_tol)
                        for ei, vi in zip(e.tolist(), v.tolist())], dtype=float)
    return np.minimum(out, e)


def flow_system(system: ParticleSystem, kernel, spec: FlowStepSpec) -> ParticleSystem:
    """Flow every particle for ``spec.dt``; count, weights and volumes are untouched."""
    out = system.copy()
    if spec.dt > 0.0 and len(out):
        out.e = flow_arrays(system.e, system.v, kernel, spec)
    out.time = system.time + spec.dt
    return out
