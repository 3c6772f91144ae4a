"""Scenario configuration: a TOML or JSON file describing one run.

Every field has a default, so an empty file is a valid scenario.  Unknown keys
are rejected.  ``ScenarioConfig.from_dict(cfg.to_dict()) == cfg`` holds for
every valid configuration, and the same dictionary is echoed into reports.
"""
from __future__ import annotations

import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .geometry import Ball, FractionalOrder, Interval
from .solver import Nonlinearity, SolverConfig, SourceField

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "DomainSpec", "MeshSpec", "NonlinearitySpec", "SourceSpec", "AnalysisSpec", "OutputSpec",
    "ScenarioConfig", "load_config", "dump_config", "TASKS",
]

TASKS = ("assemble-check", "phi", "solve", "blowup", "rates", "ko", "green-check", "barrier-check")


def _tuple(v):
    if v is None:
        return None
    if isinstance(v, (list, tuple)):
        return tuple(float(x) for x in v)
    return float(v)


@dataclass(frozen=True)
class DomainSpec:
    kind: str = "interval"
    a: float = -1.0
    b: float = 1.0
    radius: float = 1.0
    dim: int = 2

    def build(self):
        if self.kind == "interval":
            return Interval(self.a, self.b)
        if self.kind == "ball":
            return Ball(self.radius, self.dim)
        raise ConfigurationError(f"domain kind must be 'interval' or 'ball', got {self.kind!r}")


@dataclass(frozen=True)
class MeshSpec:
    M: int = 512
    gamma: float = 3.0


@dataclass(frozen=True)
class NonlinearitySpec:
    family: str = "power"
    c: float = 1.0
    p: float = 4.0
    q: Optional[float] = None

    def build(self) -> Nonlinearity:
        if self.family == "power":
            return Nonlinearity.power(self.c, self.p, self.q)
        if self.family == "zero":
            return Nonlinearity.zero()
        raise ConfigurationError(f"nonlinearity family must be 'power' or 'zero', got {self.family!r}")


@dataclass(frozen=True)
class SourceSpec:
    """g and the trace: a constant or polynomial coefficients (lowest degree first) in x, or in |x| for balls."""

    g: object = 0.0
    trace: object = 1.0
    levels: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "g", _tuple(self.g))
        object.__setattr__(self, "trace", _tuple(self.trace))
        object.__setattr__(self, "levels", _tuple(self.levels))

    @staticmethod
    def _field(v):
        if isinstance(v, tuple):
            coeffs = np.array(v[::-1])
            return lambda x: np.polyval(coeffs, np.asarray(x, dtype=float))
        return v

    def build(self, trace=None) -> SourceField:
        t = self.trace if trace is None else trace
        return SourceField(self._field(self.g), self._field(t))

    def trace_levels(self):
        if self.levels is not None:
            return list(self.levels)
        if isinstance(self.trace, tuple):
            return [None]
        return [self.trace]


@dataclass(frozen=True)
class AnalysisSpec:
    window: Optional[tuple] = None
    inflation: Optional[float] = None
    tau: Optional[float] = None
    t0: Optional[float] = None
    lam_cap: float = 1024.0
    certificate_trace: Optional[float] = None
    refine: bool = True
    divergence_ratio: float = 2.0
    ratio_levels: tuple = (64.0, 1024.0)
    probes: tuple = (-0.9, -0.5, 0.0, 0.3, 0.85)

    def __post_init__(self):
        object.__setattr__(self, "window", _tuple(self.window))
        object.__setattr__(self, "ratio_levels", _tuple(self.ratio_levels))
        object.__setattr__(self, "probes", _tuple(self.probes))


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    csv: bool = True
    json: bool = True


_SECTIONS = {
    "domain": DomainSpec,
    "mesh": MeshSpec,
    "nonlinearity": NonlinearitySpec,
    "source": SourceSpec,
    "solver": SolverConfig,
    "analysis": AnalysisSpec,
    "output": OutputSpec,
}


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    task: str = "solve"
    alpha: float = 0.75
    kind: str = "regional"
    domain: DomainSpec = field(default_factory=DomainSpec)
    mesh: MeshSpec = field(default_factory=MeshSpec)
    nonlinearity: NonlinearitySpec = field(default_factory=NonlinearitySpec)
    source: SourceSpec = field(default_factory=SourceSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    # -- serialisation

    def to_dict(self) -> dict:
        def clean(d):
            out = {}
            for k, v in d.items():
                if v is None:
                    continue
                if isinstance(v, dict):
                    out[k] = clean(v)
                elif isinstance(v, tuple):
                    out[k] = list(v)
                else:
                    out[k] = v
            return out
        return clean(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("scenario must be a table/object")
        top = {f.name for f in fields(cls)}
        unknown = set(d) - top
        if unknown:
            raise ConfigurationError(f"unknown scenario keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if k in _SECTIONS:
                sec = _SECTIONS[k]
                if not isinstance(v, dict):
                    raise ConfigurationError(f"[{k}] must be a table")
                names = {f.name for f in fields(sec)}
                bad = set(v) - names
                if bad:
                    raise ConfigurationError(f"unknown keys in [{k}]: {sorted(bad)}")
                try:
                    kw[k] = sec(**v)
                except (TypeError, ValueError) as exc:
                    raise ConfigurationError(f"invalid [{k}]: {exc}") from exc
            else:
                kw[k] = v
        try:
            cfg = cls(**kw)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc
        return cfg._normalised()

    def _normalised(self) -> "ScenarioConfig":
        try:
            return replace(
                self,
                alpha=float(self.alpha),
                mesh=MeshSpec(int(self.mesh.M), float(self.mesh.gamma)),
                domain=replace(self.domain, a=float(self.domain.a), b=float(self.domain.b),
                               radius=float(self.domain.radius), dim=int(self.domain.dim)),
                nonlinearity=replace(self.nonlinearity, c=float(self.nonlinearity.c),
                                     p=float(self.nonlinearity.p),
                                     q=None if self.nonlinearity.q is None else float(self.nonlinearity.q)),
                solver=replace(self.solver, tol_fixed_point=float(self.solver.tol_fixed_point),
                               max_iter=int(self.solver.max_iter), n0=float(self.solver.n0),
                               n_factor=float(self.solver.n_factor), n_cap=float(self.solver.n_cap),
                               tol_limit=float(self.solver.tol_limit),
                               interior_window=float(self.solver.interior_window),
                               divergence_levels=int(self.solver.divergence_levels)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"invalid numeric field: {exc}") from exc

    def with_levels(self, k: int) -> "ScenarioConfig":
        """Truncate the n schedule to k levels."""
        if k < 1:
            raise ConfigurationError("--levels must be at least 1")
        cap = self.solver.n0 * self.solver.n_factor ** (k - 1)
        return replace(self, solver=replace(self.solver, n_cap=cap))

    # -- validation

    def validate(self, task: Optional[str] = None) -> "ScenarioConfig":
        """Check every precondition the chosen task relies on, before any solve starts."""
        task = task or self.task
        if task not in TASKS:
            raise ConfigurationError(f"unknown task {task!r}; expected one of {TASKS}")
        FractionalOrder(self.alpha)
        if self.kind not in ("regional", "full"):
            raise ConfigurationError(f"operator kind must be 'regional' or 'full', got {self.kind!r}")
        dom = self.domain.build()
        if self.mesh.M < 8 or self.mesh.M > 4096:
            raise ConfigurationError(f"mesh size M must lie in [8, 4096], got {self.mesh.M}")
        if not self.mesh.gamma >= 1:
            raise ConfigurationError(f"grading exponent must be >= 1, got {self.mesh.gamma}")
        f = self.nonlinearity.build()
        src = self.source
        for lvl in src.trace_levels():
            if lvl is not None and not math.isfinite(lvl):
                raise ConfigurationError("trace levels must be finite")
        if src.levels is not None and list(src.levels) != sorted(src.levels):
            raise ConfigurationError("source.levels must be increasing")
        a = self.analysis
        if a.window is not None and (len(a.window) != 2 or not 0 < a.window[0] < a.window[1]):
            raise ConfigurationError("analysis.window must be [lo, hi] with 0 < lo < hi")
        if a.tau is not None and not -1 < a.tau < 0:
            raise ConfigurationError("analysis.tau must lie in (-1, 0)")
        if a.t0 is not None and not 0 < a.t0 < dom.diameter / 4:
            raise ConfigurationError("analysis.t0 must lie in (0, diameter/4)")
        if len(a.ratio_levels) != 2 or a.ratio_levels[0] >= a.ratio_levels[1]:
            raise ConfigurationError("analysis.ratio_levels must be two increasing levels")
        if task in ("blowup", "rates", "barrier-check"):
            if f.family == "zero":
                raise ConfigurationError("blow-up tasks need a nonzero nonlinearity")
            if self.kind == "regional" and self.alpha <= 0.5:
                raise ConfigurationError("regional blow-up requires alpha > 1/2")
        if task == "green-check" and self.alpha <= 0.5:
            raise ConfigurationError("Green bound check requires alpha > 1/2")
        if task == "ko" and f.family != "power":
            raise ConfigurationError("ko task needs the power family")
        if self.solver.b2_policy == "bracket" and not f.convex and f.family != "zero":
            raise ConfigurationError("bracket policy needs a convex nonlinearity (p >= 1)")
        return self

    def barrier_tau(self) -> float:
        if self.analysis.tau is not None:
            return self.analysis.tau
        p = self.nonlinearity.p
        if self.nonlinearity.family == "power" and p > 1 and -1 < -2 * self.alpha / (p - 1) < 0:
            return -2 * self.alpha / (p - 1)
        return -0.5


def load_config(path) -> ScenarioConfig:
    """Read a scenario from a .toml or .json file."""
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text.decode("utf-8"))
        else:
            data = tomllib.loads(text.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc
    return ScenarioConfig.from_dict(data)


def dump_config(cfg: ScenarioConfig, path=None, fmt: Optional[str] = None) -> str:
    """Serialise to TOML (default) or JSON; write to ``path`` when given."""
    if fmt is None:
        fmt = "json" if path is not None and str(path).lower().endswith(".json") else "toml"
    d = cfg.to_dict()
    if fmt == "json":
        text = json.dumps(d, indent=2, sort_keys=True) + "\n"
    elif fmt == "toml":
        import tomli_w
        text = tomli_w.dumps(d)
    else:
        raise ConfigurationError(f"unknown config format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text
