"""Shared domain vocabulary: particles, ensembles, configuration and records.

A particle is stored as (excess area, volume) with

    a = e + C0 * v**(2/3),   C0 = (36*pi)**(1/3),

so the isoperimetric constraint a >= C0 v^(2/3) reduces to e >= 0.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

C0 = (36.0 * math.pi) ** (1.0 / 3.0)
TWO_THIRDS = 2.0 / 3.0

# relative tolerance for accepting (a, v) pairs marginally below the sphere line
TOL_ISO = 1e-9


class IsoperimetricViolation(ValueError):
    """Raised when an (a, v) pair lies below the isoperimetric line."""


def sphere_area(v):
    """Area of the sphere of volume ``v``; works on floats and arrays."""
    if isinstance(v, float):
        return C0 * v ** TWO_THIRDS
    return C0 * np.asarray(v, dtype=float) ** TWO_THIRDS


@dataclass(frozen=True, slots=True)
class Particle:
    v: float
    e: float

    def __post_init__(self):
        if not (self.v > 0.0 and math.isfinite(self.v)):
            raise ValueError(f"volume must be positive and finite, got {self.v!r}")
        if not (self.e >= 0.0 and math.isfinite(self.e)):
            raise ValueError(f"excess area must be >= 0 and finite, got {self.e!r}")

    @property
    def a(self) -> float:
        return self.e + C0 * self.v ** TWO_THIRDS

    @property
    def area(self) -> float:
        return self.a


def make_particle(a: float, v: float) -> Particle:
    """Build a particle from its area and volume.

    Inputs within ``TOL_ISO`` (relative) below the sphere line are clamped
    onto it; anything further below raises :class:`IsoperimetricViolation`.
    """
    if not v > 0.0:
        raise ValueError(f"volume must be positive, got {v!r}")
    s = C0 * v ** TWO_THIRDS
    if a < s * (1.0 - TOL_ISO):
        raise IsoperimetricViolation(
            f"area {a!r} below sphere area {s!r} for volume {v!r}")
    return Particle(v=float(v), e=max(0.0, a - s))


def merged_excess(e1, v1, e2, v2):
    """Excess area of the aggregate formed by two clusters.

    Area and volume add; the sphere-area deficit is redistributed into the
    excess coordinate.  Subadditivity of x -> x^(2/3) keeps the result >= e1 + e2.
    """
    v = v1 + v2
    if isinstance(v, float):
        corr = C0 * (v1 ** TWO_THIRDS + v2 ** TWO_THIRDS - v ** TWO_THIRDS)
        return e1 + e2 + max(corr, 0.0)
    corr = C0 * (np.power(v1, TWO_THIRDS) + np.power(v2, TWO_THIRDS)
                 - np.power(v, TWO_THIRDS))
    return e1 + e2 + np.maximum(corr, 0.0)


def coagulate(p: Particle, q: Particle) -> Particle:
    """Attach two clusters at a contact point: (a1,v1)+(a2,v2) -> (a1+a2, v1+v2)."""
    return Particle(v=p.v + q.v, e=merged_excess(p.e, p.v, q.e, q.v))


class ParticleSystem:
    """Weighted ensemble of simulation particles.

    Each simulation particle stands for ``weight`` physical particles per unit
    volume, i.e. ``weight = 1 / sim_volume``.  Volumes and excess areas are held
    as float64 arrays; :attr:`particles` gives the list-of-``Particle`` view.
    """

    def __init__(self, v, e, weight: float, sim_volume: float | None = None,
                 rng_seed: int = 0, time: float = 0.0):
        v = np.array(v, dtype=float).reshape(-1)
        e = np.array(e, dtype=float).reshape(-1)
        if v.shape != e.shape:
            raise ValueError("v and e must have the same length")
        if v.size and not (np.all(v > 0.0) and np.all(np.isfinite(v))):
            raise ValueError("all volumes must be positive and finite")
        if e.size and not (np.all(e >= 0.0) and np.all(np.isfinite(e))):
            raise ValueError("all excess areas must be >= 0 and finite")
        if not weight > 0.0:
            raise ValueError("weight must be positive")
        if sim_volume is None:
            sim_volume = 1.0 / weight
        if not sim_volume > 0.0:
            raise ValueError("sim_volume must be positive")
        if time < 0.0:
            raise ValueError("time must be >= 0")
        self.v = v
        self.e = e
        self.weight = float(weight)
        self.sim_volume = float(sim_volume)
        self.rng_seed = int(rng_seed)
        self.time = float(time)

    @classmethod
    def from_particles(cls, particles: Iterable[Particle], weight: float, **kw):
        ps = list(particles)
        return cls([p.v for p in ps], [p.e for p in ps], weight, **kw)

    @property
    def particles(self) -> list[Particle]:
        return [Particle(float(v), float(e)) for v, e in zip(self.v, self.e)]

    @property
    def a(self) -> np.ndarray:
        return self.e + sphere_area(self.v)

    def __len__(self) -> int:
        return int(self.v.size)

    def copy(self) -> "ParticleSystem":
        return ParticleSystem(self.v.copy(), self.e.copy(), self.weight,
                              self.sim_volume, self.rng_seed, self.time)

    def __repr__(self):
        return (f"ParticleSystem(n={len(self)}, weight={self.weight!r}, "
                f"time={self.time!r})")


@dataclass(frozen=True)
class SimConfig:
    """Run parameters for a single simulation.

    ``lambda_`` may be ``math.inf``, which switches fusion off entirely.
    """
    lambda_: float
    t_end: float
    n_particles: int
    v_min: float = 1e-6
    record_interval: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not self.lambda_ > 0.0:
            raise ValueError("lambda must be > 0")
        if not (self.t_end > 0.0 and math.isfinite(self.t_end)):
            raise ValueError("t_end must be positive and finite")
        if not self.v_min > 0.0:
            raise ValueError("v_min must be > 0")
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if not self.record_interval > 0.0:
            raise ValueError("record_interval must be > 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class MomentRecord:
    time: float
    entries: dict[tuple[float, float], float] = field(default_factory=dict)

    def __post_init__(self):
        for key, val in self.entries.items():
            if not (math.isfinite(val) and val >= 0.0):
                raise ValueError(f"moment {key} is {val!r}")

    def __getitem__(self, key):
        return self.entries[key]


# -- snapshot CSV ----------------------------------------------------------

SNAPSHOT_HEADER = ("time", "v", "e", "a", "weight")


def write_snapshot(system: ParticleSystem, path) -> None:
    """Write ``time,v,e,a,weight`` rows with round-trip float formatting."""
    path = Path(path)
    t = repr(float(system.time))
    w = repr(system.weight)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(SNAPSHOT_HEADER)
        for v, e, a in zip(system.v.tolist(), system.e.tolist(), system.a.tolist()):
            out.writerow((t, repr(v), repr(e), repr(a), w))


def read_snapshot(path) -> ParticleSystem:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty snapshot")
    weights = {float(r["weight"]) for r in rows}
    times = {float(r["time"]) for r in rows}
    if len(weights) != 1 or len(times) != 1:
        raise ValueError(f"{path}: mixed weights or times in one snapshot")
    v = [float(r["v"]) for r in rows]
    e = [float(r["e"]) for r in rows]
    return ParticleSystem(v, e, weights.pop(), time=times.pop())


def format_float(x: float) -> str:
    return repr(float(x))


def exponent_label(k: float, l: float) -> str:
    def fmt(x):
        return str(int(x)) if float(x).is_integer() else repr(float(x))
    return f"M_{fmt(k)}_{fmt(l)}"


def as_pairs(pairs: Sequence) -> tuple[tuple[float, float], ...]:
    return tuple((float(k), float(l)) for k, l in pairs)
