"""Stochastic and deterministic solvers for coagulation with fusion of
two-component (area, volume) particles."""
from .core import (C0, MomentRecord, Particle, ParticleSystem, SimConfig, coagulate,
                   make_particle)
from .kernels import (CoagKernelParams, FusionKernelParams, Sphericity, TruncationParams,
                      eval_coag, eval_fusion)

__version__ = "0.1.0"

__all__ = [
    "C0", "MomentRecord", "Particle", "ParticleSystem", "SimConfig", "coagulate",
    "make_particle", "CoagKernelParams", "FusionKernelParams", "Sphericity",
    "TruncationParams", "eval_coag", "eval_fusion",
]
