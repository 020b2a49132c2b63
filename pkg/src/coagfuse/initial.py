"""Initial particle ensembles.  Every generator uses weight 1/n, so the total
number density is 1."""
from __future__ import annotations

import numpy as np

from .core import ParticleSystem

KINDS = ("monodisperse", "lognormal", "ramified")


def monodisperse(n: int, v0: float = 1.0, e0: float = 0.0, seed: int = 0) -> ParticleSystem:
    """``n`` identical particles of volume ``v0`` and excess area ``e0``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return ParticleSystem(np.full(n, float(v0)), np.full(n, float(e0)), 1.0 / n, rng_seed=seed)


def lognormal(n: int, v0: float = 1.0, sigma: float = 0.5, seed: int = 0) -> ParticleSystem:
    """Spheres with log-normal volumes of median ``v0``."""
    rng = np.random.default_rng(seed)
    v = v0 * np.exp(sigma * rng.standard_normal(n))
    return ParticleSystem(v, np.zeros(n), 1.0 / n, rng_seed=seed)


def ramified(n: int, v0: float = 1.0, kappa: float = 1.0, sigma: float = 0.0,
             seed: int = 0) -> ParticleSystem:
    """Non-spherical particles with excess area ``kappa * v``."""
    rng = np.random.default_rng(seed)
    v = v0 * np.exp(sigma * rng.standard_normal(n)) if sigma > 0.0 else np.full(n, float(v0))
    return ParticleSystem(v, kappa * v, 1.0 / n, rng_seed=seed)


def make_initial(kind: str, n: int, v0: float = 1.0, sigma: float = 0.5,
                 kappa: float = 1.0, seed: int = 0) -> ParticleSystem:
    if kind == "monodisperse":
        return monodisperse(n, v0, 0.0, seed)
    if kind == "lognormal":
        return lognormal(n, v0, sigma, seed)
    if kind == "ramified":
        return ramified(n, v0, kappa, 0.0, seed)
    raise ValueError(f"unknown initial condition {kind!r}; expected one of {KINDS}")
