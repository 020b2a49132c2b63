"""Flat ``key = value`` run configuration.

The file is UTF-8 text, one ``key = value`` per line; ``#`` starts a comment.
Every key has a type and a default (see :data:`SCHEMA`), unknown keys are
rejected, and the resolved configuration is hashed (SHA-256 of its canonical
text) so that every report can be traced back to its inputs.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

from .core import SimConfig
from .diagnostics import DEFAULT_EXPONENTS, CutoffSpec
from .flow import METHODS
from .initial import KINDS, make_initial
from .kernels import (CoagKernel, CoagKernelParams, FusionKernel, FusionKernelParams,
                      Sphericity, TruncationParams)
from .mc import FlowOptions
from .sectional import Grid2D, SectionalOptions, anchored_log_edges


AREA_MODS = ("none", "sphericity")


class ConfigError(ValueError):
    pass


def _float(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    val = float(t)
    if math.isnan(val):
        raise ValueError("nan is not allowed")
    return val


def _int(text: str) -> int:
    return int(text.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text: str) -> str:
    return text.strip()


def _floats(text: str) -> tuple[float, ...]:
    items = [s for s in text.replace(",", " ").split() if s]
    if not items:
        raise ValueError("empty list")
    return tuple(_float(s) for s in items)


def _pairs(text: str) -> tuple[tuple[float, float], ...]:
    out = []
    for item in text.replace(",", " ").split():
        k, _, l = item.partition(":")
        out.append((_float(k), _float(l)))
    if not out:
        raise ValueError("empty list")
    return tuple(out)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{_fmt(k)}:{_fmt(l)}" for k, l in value)
        return ", ".join(_fmt(x) for x in value)
    return str(value)


# key -> (parser, default, description)
SCHEMA: dict[str, tuple] = {
    "coag.c_scale": (_float, 0.25, "overall coagulation rate constant c"),
    "coag.alpha": (_float, 0.25, "volume exponent alpha of S(v, v')"),
    "coag.beta": (_float, 0.5, "volume exponent beta of S(v, v')"),
    "coag.area_mod": (_str, "sphericity", "area modulation: none | sphericity"),
    "coag.theta": (_float, 0.5, "sphericity parameter theta in (0, 1]"),
    "coag.relaxed": (_bool, False, "permit alpha = beta = 0 (constant kernel tests)"),
    "fusion.r_scale": (_float, 1.0, "fusion rate constant R"),
    "fusion.mu": (_float, 1.0, "area exponent mu of r = R a^mu v^sigma"),
    "fusion.sigma": (_float, 0.0, "volume exponent sigma"),
    "trunc.enabled": (_bool, False, "use the truncated kernels K_R and r_delta"),
    "trunc.big_r": (_float, 1e6, "truncation level R"),
    "trunc.delta": (_float, 1e-3, "fusion regularisation delta"),
    "trunc.l_const": (_float, 1.0, "fusion regularisation constant L"),
    "flow.method": (_str, "auto", "auto | closed_form | adaptive"),
    "flow.rel_tol": (_float, 1e-11, "adaptive integrator relative tolerance"),
    "flow.abs_tol": (_float, 1e-14, "adaptive integrator absolute tolerance"),
    "sim.lambda": (_float, 1.0, "fusion time scale Lambda; inf disables fusion"),
    "sim.t_end": (_float, 1.0, "final time T"),
    "sim.n_particles": (_int, 10000, "initial number of simulation particles"),
    "sim.v_min": (_float, 1e-6, "smallest admissible volume"),
    "sim.record_interval": (_float, 0.05, "moment recording cadence"),
    "sim.seed": (_int, 0, "master seed; replica r uses the stream (seed, r)"),
    "init.kind": (_str, "monodisperse", "monodisperse | lognormal | ramified"),
    "init.v0": (_float, 1.0, "initial (median) volume"),
    "init.sigma": (_float, 0.5, "log-normal width"),
    "init.kappa": (_float, 1.0, "ramified start: e = kappa v"),
    "mc.replicas": (_int, 32, "independent replicas per ensemble"),
    "diag.exponents": (_pairs, DEFAULT_EXPONENTS, "moments to record, as k:l pairs"),
    "diag.checkpoints": (_floats, (0.25, 0.5, 1.0), "probe times"),
    "diag.delta1": (_floats, (0.1,), "off-line thresholds for the concentration probe"),
    "grid.nv": (_int, 48, "sectional volume bins"),
    "grid.ne": (_int, 24, "sectional excess-area bins (first bin has pivot 0)"),
    "grid.v_min": (_float, 0.0, "smallest volume edge; 0 anchors the first pivot at init.v0"),
    "grid.v_max": (_float, 200.0, "largest volume edge"),
    "grid.e_min": (_float, 1e-3, "first positive excess-area edge"),
    "grid.e_max": (_float, 200.0, "largest excess-area edge"),
    "grid.dt_max": (_float, 2e-3, "largest coagulation step"),
    "smolu1d.nbins": (_int, 256, "bins of the one-dimensional reference"),
    "smolu1d.v_max": (_float, 2000.0, "largest volume edge of the 1-D grid and marginals"),
    "smolu1d.dt_max": (_float, 2e-3, "largest 1-D step"),
    "study.lambdas": (_floats, (1.0, 0.1, 0.01, 0.001), "Lambda sweep"),
    "study.slow_lambdas": (_floats, (10.0, 100.0, 1000.0), "slow-fusion Lambda sweep"),
    "study.epsilon_cap": (_float, 0.1, "area cutoff epsilon = min(Lambda, cap)"),
}


@dataclass(frozen=True)
class Config:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    # -- canonical text and hash ------------------------------------------

    def canonical(self) -> str:
        return "".join(f"{k} = {_fmt(self.values[k])}\n" for k in sorted(self.values))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def as_dict(self) -> dict:
        return {k: _fmt(v) for k, v in sorted(self.values.items())}

    def with_overrides(self, **kw) -> "Config":
        """Override values by key with dots written as double underscores."""
        vals = dict(self.values)
        for k, v in kw.items():
            key = k.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            vals[key] = v
        return _validated(vals)

    # -- builders ---------------------------------------------------------

    def coag_params(self) -> CoagKernelParams:
        mod = Sphericity(self["coag.theta"]) if self["coag.area_mod"] == "sphericity" else None
        return CoagKernelParams(self["coag.c_scale"], self["coag.alpha"], self["coag.beta"],
                                mod, self["coag.relaxed"])

    def fusion_params(self) -> FusionKernelParams:
        return FusionKernelParams(self["fusion.r_scale"], self["fusion.mu"], self["fusion.sigma"])

    def truncation(self) -> TruncationParams | None:
        if not self["trunc.enabled"]:
            return None
        return TruncationParams(self["trunc.big_r"], self["trunc.delta"], self["trunc.l_const"])

    def coag_kernel(self) -> CoagKernel:
        return CoagKernel(self.coag_params(), self.truncation())

    def fusion_kernel(self) -> FusionKernel:
        return FusionKernel(self.fusion_params(), self.truncation())

    def flow_options(self) -> FlowOptions:
        return FlowOptions(self["flow.method"], self["flow.rel_tol"], self["flow.abs_tol"])

    def sim_config(self, lambda_: float | None = None) -> SimConfig:
        return SimConfig(self["sim.lambda"] if lambda_ is None else lambda_, self["sim.t_end"],
                         self["sim.n_particles"], self["sim.v_min"],
                         self["sim.record_interval"], self["sim.seed"])

    def initial_system(self):
        return make_initial(self["init.kind"], self["sim.n_particles"], self["init.v0"],
                            self["init.sigma"], self["init.kappa"], self["sim.seed"])

    def grid(self) -> Grid2D:
        v_min = self["grid.v_min"] if self["grid.v_min"] > 0.0 else None
        return Grid2D.build(self["grid.nv"], self["grid.ne"], v_min, self["grid.v_max"],
                            self["grid.e_min"], self["grid.e_max"], self.v_anchor())

    def sectional_options(self) -> SectionalOptions:
        return SectionalOptions(dt_max=self["grid.dt_max"])

    def v_anchor(self) -> float:
        """First volume pivot: the initial volume, or a lower bound for spread starts."""
        if self["init.kind"] == "lognormal":
            return self["init.v0"] * math.exp(-5.0 * self["init.sigma"])
        return self["init.v0"]

    def marginal_edges(self):
        return anchored_log_edges(self.v_anchor(), self["smolu1d.v_max"], self["smolu1d.nbins"])

    def cutoff(self, lambda_: float) -> CutoffSpec:
        return CutoffSpec(min(lambda_, self["study.epsilon_cap"]))


def _validated(values: dict) -> Config:
    cfg = Config(values)
    if cfg["flow.method"] not in METHODS:
        raise ConfigError(f"flow.method must be one of {METHODS}")
    if cfg["coag.area_mod"] not in AREA_MODS:
        raise ConfigError(f"coag.area_mod must be one of {AREA_MODS}")
    if cfg["init.kind"] not in KINDS:
        raise ConfigError(f"init.kind must be one of {KINDS}")
    if cfg["mc.replicas"] < 1:
        raise ConfigError("mc.replicas must be >= 1")
    if not cfg["study.lambdas"] or not cfg["study.slow_lambdas"]:
        raise ConfigError("sweeps must be nonempty")
    try:
        cfg.coag_params()
        cfg.fusion_params()
        cfg.truncation()
        cfg.sim_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _defaults() -> dict:
    # run defaults through their parsers so both paths yield identical types
    return {k: spec[0](_fmt(spec[1])) for k, spec in SCHEMA.items()}


def default_config() -> Config:
    return _validated(_defaults())


def parse_config(text: str, source: str = "<config>") -> Config:
    values = _defaults()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            values[key] = SCHEMA[key][0](val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return _validated(values)


def load_config(path) -> Config:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def documented_defaults() -> str:
    """A commented default config file."""
    lines = []
    for key, (_, default, doc) in SCHEMA.items():
        lines.append(f"# {doc}")
        lines.append(f"{key} = {_fmt(default)}")
    return "\n".join(lines) + "\n"
