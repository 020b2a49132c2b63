"""Coagulation and fusion kernel families.

Coagulation kernels have the form

    K(a, v, a', v') = c * (v^-alpha v'^beta + v'^-alpha v^beta) * m(a, v, a', v')

with an area modulation ``m`` in [theta, 1].  The volume factor alone is a
separable majorant, which the stochastic engine samples against.  Fusion
kernels are power laws r(a, v) = R a^mu v^sigma.

All array-level functions accept floats or numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import C0, TWO_THIRDS, Particle


class KernelError(ValueError):
    """Kernel parameters outside the admissible class."""


@dataclass(frozen=True)
class Sphericity:
    """Area modulation theta + (1 - theta) psi psi' with psi = C0 v^(2/3) / a."""
    theta: float

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise KernelError(f"theta must lie in (0, 1], got {self.theta!r}")


@dataclass(frozen=True)
class CoagKernelParams:
    c_scale: float = 1.0
    alpha: float = 0.25
    beta: float = 0.5
    area_mod: Optional[Sphericity] = None
    relaxed: bool = False

    def __post_init__(self):
        if not self.c_scale > 0.0:
            raise KernelError("c_scale must be > 0")
        if self.relaxed and self.alpha == 0.0 and self.beta == 0.0:
            return
        if not self.alpha > 0.0:
            raise KernelError(f"alpha must be > 0, got {self.alpha!r}")
        if not 0.0 < self.beta < 1.0:
            raise KernelError(f"beta must lie in (0, 1), got {self.beta!r}")
        if not 0.0 < self.beta - self.alpha < 1.0:
            raise KernelError(
                f"beta - alpha must lie in (0, 1), got {self.beta - self.alpha!r}")

    @property
    def lower_constant(self) -> float:
        """K1 in  K1 S <= K <= K0 S."""
        theta = 1.0 if self.area_mod is None else self.area_mod.theta
        return self.c_scale * theta

    @property
    def upper_constant(self) -> float:
        return self.c_scale


@dataclass(frozen=True)
class FusionKernelParams:
    r_scale: float = 1.0
    mu: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        if not self.r_scale > 0.0:
            raise KernelError("r_scale must be > 0")
        if not self.mu >= -1.0:
            raise KernelError(f"mu must be >= -1, got {self.mu!r}")
        if not math.isfinite(self.sigma):
            raise KernelError("sigma must be finite")


@dataclass(frozen=True)
class TruncationParams:
    big_r: float = 1e6
    delta: float = 1e-3
    l_const: float = 1.0

    def __post_init__(self):
        if not self.big_r > 0.0:
            raise KernelError("big_r must be > 0")
        if not 0.0 < self.delta < 1.0:
            raise KernelError("delta must lie in (0, 1)")
        if not self.l_const > 0.0:
            raise KernelError("l_const must be > 0")


# -- coagulation -----------------------------------------------------------

def volume_factor(params: CoagKernelParams, v, v2):
    """S(v, v') = v^-alpha v'^beta + v'^-alpha v^beta."""
    al, be = params.alpha, params.beta
    if isinstance(v, float) and isinstance(v2, float):
        return v ** -al * v2 ** be + v2 ** -al * v ** be
    v = np.asarray(v, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    return np.power(v, -al) * np.power(v2, be) + np.power(v2, -al) * np.power(v, be)


def area_modulation(params: CoagKernelParams, a, v, a2, v2):
    mod = params.area_mod
    if mod is None:
        return 1.0
    if isinstance(v, float) and isinstance(v2, float):
        psi = C0 * v ** TWO_THIRDS / a
        psi2 = C0 * v2 ** TWO_THIRDS / a2
    else:
        psi = C0 * np.power(v, TWO_THIRDS) / a
        psi2 = C0 * np.power(v2, TWO_THIRDS) / a2
    return mod.theta + (1.0 - mod.theta) * psi * psi2


def coag_rate(params: CoagKernelParams, a, v, a2, v2):
    """Kernel value K(a, v, a', v')."""
    return params.c_scale * volume_factor(params, v, v2) * area_modulation(
        params, a, v, a2, v2)


def eval_coag(params: CoagKernelParams, p: Particle, q: Particle) -> float:
    return coag_rate(params, p.a, p.v, q.a, q.v)


def majorant_weights(params: CoagKernelParams, v):
    """Per-particle factors (v^-alpha, v^beta) of the separable majorant."""
    if isinstance(v, float):
        return v ** -params.alpha, v ** params.beta
    v = np.asarray(v, dtype=float)
    return np.power(v, -params.alpha), np.power(v, params.beta)


def eval_majorant_weights(params: CoagKernelParams, p: Particle) -> tuple[float, float]:
    return majorant_weights(params, p.v)


def majorant_rate(params: CoagKernelParams, v, v2):
    """c * (w-(v) w+(v') + w-(v') w+(v)); dominates :func:`coag_rate`."""
    return params.c_scale * volume_factor(params, v, v2)


def effective_kernel(params: CoagKernelParams, v, v2):
    """Kernel restricted to spheres: K(C0 v^(2/3), v, C0 v'^(2/3), v')."""
    if isinstance(v, float) and isinstance(v2, float):
        return coag_rate(params, C0 * v ** TWO_THIRDS, v, C0 * v2 ** TWO_THIRDS, v2)
    v = np.asarray(v, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    return coag_rate(params, C0 * np.power(v, TWO_THIRDS), v,
                     C0 * np.power(v2, TWO_THIRDS), v2)


# -- fusion ----------------------------------------------------------------

def fusion_rate(params: FusionKernelParams, a, v):
    """r(a, v) = R a^mu v^sigma."""
    if isinstance(a, float) and isinstance(v, float):
        return params.r_scale * a ** params.mu * v ** params.sigma
    return params.r_scale * np.power(a, params.mu) * np.power(v, params.sigma)


def fusion_rate_da(params: FusionKernelParams, a, v):
    """Partial derivative of r with respect to the area."""
    return params.mu * fusion_rate(params, a, v) / a


def eval_fusion(params: FusionKernelParams, p: Particle, v_min: float = 0.0) -> float:
    if p.v < v_min and (params.mu < 0.0 or params.sigma < 0.0):
        raise ValueError(f"volume {p.v!r} below v_min {v_min!r}")
    r = fusion_rate(params, p.a, p.v)
    if not (math.isfinite(r) and r > 0.0):
        raise OverflowError(f"fusion rate not finite for {p!r}")
    return r


def fusion_conditions_hold(params: FusionKernelParams, a, v, bound_b: float | None = None):
    """Check the structural conditions on r at points with a >= C0 v^(2/3).

    For mu > 0:  d_a r - mu r / a >= 0 and d_a r <= B r / a.
    For mu <= 0: d_a r (a - C0 v^(2/3)) + r >= 0 and d_a r <= B r / a.
    ``bound_b`` defaults to max(mu, 0) + 1.
    """
    a = np.asarray(a, dtype=float)
    v = np.asarray(v, dtype=float)
    b = max(params.mu, 0.0) + 1.0 if bound_b is None else bound_b
    r = fusion_rate(params, a, v)
    dr = fusion_rate_da(params, a, v)
    slack = 1e-12 * np.abs(r) / a
    upper = dr <= b * r / a + slack
    if params.mu > 0.0:
        lower = dr - params.mu * r / a >= -slack
    else:
        lower = dr * (a - C0 * np.power(v, TWO_THIRDS)) + r >= -slack * a
    return bool(np.all(upper & lower))


# -- truncations -----------------------------------------------------------

def xi_cut(big_r: float, v):
    """Volume cutoff: 1 on (0, R], linear down to 0 at 2R, 0 beyond."""
    if isinstance(v, float):
        return min(1.0, max(0.0, 2.0 - v / big_r))
    return np.clip(2.0 - np.asarray(v, dtype=float) / big_r, 0.0, 1.0)


def truncated_coag_rate(params: CoagKernelParams, trunc: TruncationParams, a, v, a2, v2):
    """min(K, R) * xi_R(v + v')."""
    k = coag_rate(params, a, v, a2, v2)
    if isinstance(k, float):
        return min(k, trunc.big_r) * xi_cut(trunc.big_r, v + v2)
    return np.minimum(k, trunc.big_r) * xi_cut(trunc.big_r, np.asarray(v) + np.asarray(v2))


def truncated_fusion_rate(params: FusionKernelParams, trunc: TruncationParams, a, v):
    """r * max(v^sigma, L delta) / (v^sigma (1 + delta a^mu))."""
    d, lc = trunc.delta, trunc.l_const
    if isinstance(a, float) and isinstance(v, float):
        vs = v ** params.sigma
        return fusion_rate(params, a, v) * max(vs, lc * d) / (vs * (1.0 + d * a ** params.mu))
    vs = np.power(v, params.sigma)
    return (fusion_rate(params, a, v) * np.maximum(vs, lc * d)
            / (vs * (1.0 + d * np.power(a, params.mu))))


def truncated_fusion_rate_da(params: FusionKernelParams, trunc: TruncationParams, a, v):
    mu, d = params.mu, trunc.delta
    rd = truncated_fusion_rate(params, trunc, a, v)
    if isinstance(a, float):
        am = a ** mu
    else:
        am = np.power(a, mu)
    return rd * (mu / a - d * mu * am / (a * (1.0 + d * am)))


def eval_truncated(params, trunc: TruncationParams, p: Particle, q: Particle | None = None):
    """Truncated rate: K_R(p, q) xi_R for coagulation params, r_delta(p) for fusion."""
    if isinstance(params, CoagKernelParams):
        if q is None:
            raise TypeError("coagulation truncation needs two particles")
        return truncated_coag_rate(params, trunc, p.a, p.v, q.a, q.v)
    if isinstance(params, FusionKernelParams):
        return truncated_fusion_rate(params, trunc, p.a, p.v)
    raise TypeError(f"unsupported kernel params {type(params).__name__}")


# -- kernel objects used by the solvers ------------------------------------

class CoagKernel:
    """Coagulation kernel with an optional truncation layer."""

    def __init__(self, params: CoagKernelParams, trunc: TruncationParams | None = None):
        self.params = params
        self.trunc = trunc

    def __call__(self, a, v, a2, v2):
        if self.trunc is None:
            return coag_rate(self.params, a, v, a2, v2)
        return truncated_coag_rate(self.params, self.trunc, a, v, a2, v2)

    def majorant_weights(self, v):
        return majorant_weights(self.params, v)

    @property
    def c_scale(self) -> float:
        return self.params.c_scale


class FusionKernel:
    """Fusion rate with an optional r_delta regularisation."""

    def __init__(self, params: FusionKernelParams, trunc: TruncationParams | None = None):
        self.params = params
        self.trunc = trunc

    def __call__(self, a, v):
        if self.trunc is None:
            return fusion_rate(self.params, a, v)
        return truncated_fusion_rate(self.params, self.trunc, a, v)

    def da(self, a, v):
        if self.trunc is None:
            return fusion_rate_da(self.params, a, v)
        return truncated_fusion_rate_da(self.params, self.trunc, a, v)

    @property
    def plain(self) -> bool:
        return self.trunc is None


def as_coag_kernel(k) -> CoagKernel:
    return k if isinstance(k, CoagKernel) else CoagKernel(k)


def as_fusion_kernel(k) -> FusionKernel:
    return k if isinstance(k, FusionKernel) else FusionKernel(k)
