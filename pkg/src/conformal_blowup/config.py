"""Experiment configuration: TOML sections mapped onto frozen dataclasses.

Every key is validated on load and errors name the offending key as
``section.key``.  ``dumps(loads(text))`` reproduces the configuration
exactly, so a run directory can carry the configuration that produced it.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .model import ModelParams


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the culprit."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


DATA_KEYS = {
    "constant": ("u0", "u1"),
    "gaussian": ("amplitude", "sigma"),
    "self_similar": ("T0", "perturbation"),
    # similarity-level data, no physical run
    "steady_state": (),
    "zero": (),
}
SIMILARITY_ONLY = ("steady_state", "zero")

CHECKS = ("blowup_time", "ode_rate", "identities", "monotonicity", "corrector_sweep",
          "growth", "rate_window")
TRAJECTORY_CHECKS = ("identities", "monotonicity", "corrector_sweep", "growth", "rate_window")


@dataclass(frozen=True)
class ModelSection:
    N: int = 3
    a: float = 3.0
    perturbation_on: bool = True


@dataclass(frozen=True)
class DataSection:
    family: str = "gaussian"
    u0: float | None = None
    u1: float | None = None
    amplitude: float | None = None
    sigma: float | None = None
    T0: float | None = None
    perturbation: float | None = None

    def kwargs(self) -> dict:
        return {k: getattr(self, k) for k in DATA_KEYS[self.family] if getattr(self, k) is not None}


@dataclass(frozen=True)
class PhysicalSection:
    nodes: int = 2049
    domain_end: float = 3.0
    cfl: float = 0.5
    threshold: float = 1e8
    horizon: float = 10.0
    step_fraction: float = 0.02
    fit_method: str = "threshold_fit"
    snapshots: int = 5


@dataclass(frozen=True)
class SimilaritySection:
    enabled: bool = True
    nodes: int = 129
    cfl: float = 0.4
    s_start: float = 1.0
    span: float = 13.0
    report_every: float = 0.05
    snapshot_every: float = 1.0
    calibrate: bool = True


@dataclass(frozen=True)
class FunctionalsSection:
    etas: tuple = (0.5,)
    b: float = 1.5
    theta: float | str = "auto"
    sigma: float | str = "auto"
    b_H0: float | str = "auto"


@dataclass(frozen=True)
class ChecksSection:
    run: tuple = TRAJECTORY_CHECKS
    advisory: tuple = ()
    burn_in: float = 3.0
    allowance_c: float = 10.0
    identity_tolerance: float = 1e-3
    sweep_decades: float = 1.0
    fit_tolerance: float = 0.1
    rate_span: float = 10.0
    rate_floor: float = 1e-3
    expected_T: float | str = "none"
    T_tolerance: float = 1e-6
    ode_window: tuple = (0.5, 2.0)
    ode_decades: float = 3.0


@dataclass(frozen=True)
class ConvergenceSection:
    window: float = 0.5
    samples: int = 11
    exact_floor: float = 1e-11
    min_order: float = 1.5


@dataclass(frozen=True)
class OutputSection:
    dir: str = "runs/experiment"


_SECTIONS = {
    "model": ModelSection,
    "data": DataSection,
    "physical": PhysicalSection,
    "similarity": SimilaritySection,
    "functionals": FunctionalsSection,
    "checks": ChecksSection,
    "convergence": ConvergenceSection,
    "output": OutputSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    physical: PhysicalSection = field(default_factory=PhysicalSection)
    similarity: SimilaritySection = field(default_factory=SimilaritySection)
    functionals: FunctionalsSection = field(default_factory=FunctionalsSection)
    checks: ChecksSection = field(default_factory=ChecksSection)
    convergence: ConvergenceSection = field(default_factory=ConvergenceSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        _validate(self)

    @property
    def params(self) -> ModelParams:
        m = self.model
        return ModelParams.conformal(m.N, a=m.a, perturbation_on=m.perturbation_on)

    @property
    def physical_enabled(self) -> bool:
        return self.data.family not in SIMILARITY_ONLY

    def with_output(self, directory) -> "ExperimentConfig":
        return dataclasses.replace(self, output=OutputSection(dir=str(directory)))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=int(seed))

    def with_similarity(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, similarity=dataclasses.replace(self.similarity, **kw))

    def to_dict(self) -> dict:
        out = {"name": self.name, "seed": self.seed}
        for sec in _SECTIONS:
            d = {}
            for f in fields(getattr(self, sec)):
                v = getattr(getattr(self, sec), f.name)
                if v is None:
                    continue
                d[f.name] = list(v) if isinstance(v, tuple) else v
            out[sec] = d
        return out


# --- parsing ---------------------------------------------------------------------

def _coerce(key, value, default):
    """Match ``value`` to the type implied by the field default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return tuple(value)
    if isinstance(default, str) and not isinstance(value, str):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)  # "auto" policies accept a number
        raise ConfigError(key, f"expected a string, got {value!r}")
    if isinstance(default, float) or default is None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    return value


def _section(name, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected a table")
    known = {f.name: f for f in fields(cls)}
    for k in raw:
        if k not in known:
            raise ConfigError(f"{name}.{k}", "unknown key")
    kw = {}
    for k, v in raw.items():
        f = known[k]
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        kw[k] = _coerce(f"{name}.{k}", v, default)
    return cls(**kw)


def from_dict(raw: dict) -> ExperimentConfig:
    kw = {}
    for k, v in raw.items():
        if k == "name":
            if not isinstance(v, str):
                raise ConfigError("name", f"expected a string, got {v!r}")
            kw[k] = v
        elif k == "seed":
            kw[k] = _coerce("seed", v, 0)
        elif k in _SECTIONS:
            kw[k] = _section(k, _SECTIONS[k], v)
        else:
            raise ConfigError(k, "unknown key")
    return ExperimentConfig(**kw)


def loads(text: str) -> ExperimentConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("<toml>", str(exc)) from None
    return from_dict(raw)


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text())


def dumps(config: ExperimentConfig) -> str:
    return tomli_w.dumps(config.to_dict())


# --- validation -------------------------------------------------------------------

def _positive(key, v):
    if not (v > 0 and math.isfinite(v)):
        raise ConfigError(key, f"must be positive and finite, got {v}")


def _validate(c: ExperimentConfig):
    m = c.model
    if m.N < 2:
        raise ConfigError("model.N", f"the conformal exponent needs N >= 2, got {m.N}")
    if not (m.a > 1.0 and math.isfinite(m.a)):
        raise ConfigError("model.a", f"must exceed 1, got {m.a}")

    d = c.data
    if d.family not in DATA_KEYS:
        raise ConfigError("data.family", f"unknown family {d.family!r}; choose from {sorted(DATA_KEYS)}")
    for k in ("u0", "u1", "amplitude", "sigma", "T0", "perturbation"):
        if getattr(d, k) is not None and k not in DATA_KEYS[d.family]:
            raise ConfigError(f"data.{k}", f"not a parameter of family {d.family!r}")
    if d.sigma is not None:
        _positive("data.sigma", d.sigma)
    if d.T0 is not None:
        _positive("data.T0", d.T0)
    if d.amplitude is not None and not d.amplitude > 1.0:
        raise ConfigError("data.amplitude", f"blow-up data need amplitude > 1, got {d.amplitude}")

    ph = c.physical
    if ph.nodes < 3:
        raise ConfigError("physical.nodes", "need at least 3 nodes")
    for k in ("domain_end", "threshold", "horizon", "step_fraction"):
        _positive(f"physical.{k}", getattr(ph, k))
    if not 0 < ph.cfl <= 1.0:
        raise ConfigError("physical.cfl", f"must lie in (0, 1], got {ph.cfl}")
    if ph.fit_method not in ("threshold_fit", "richardson"):
        raise ConfigError("physical.fit_method", f"unknown method {ph.fit_method!r}")
    if ph.snapshots < 0:
        raise ConfigError("physical.snapshots", "must be >= 0")

    sm = c.similarity
    if sm.nodes < 5:
        raise ConfigError("similarity.nodes", "need at least 5 nodes")
    if not 0 < sm.cfl <= 0.5:
        raise ConfigError("similarity.cfl", f"must lie in (0, 0.5], got {sm.cfl}")
    if not sm.s_start >= 1.0:
        raise ConfigError("similarity.s_start", f"must be >= 1, got {sm.s_start}")
    for k in ("span", "report_every", "snapshot_every"):
        _positive(f"similarity.{k}", getattr(sm, k))
    per = 1.0 / sm.report_every
    if abs(per - round(per)) > 1e-9:
        raise ConfigError("similarity.report_every", "must divide one unit of s")
    if not c.physical_enabled and not sm.enabled:
        raise ConfigError("similarity.enabled", f"family {d.family!r} lives in the similarity frame")

    fn = c.functionals
    if not fn.etas:
        raise ConfigError("functionals.etas", "need at least one eta")
    for e in fn.etas:
        if isinstance(e, bool) or not isinstance(e, (int, float)) or not 0 < e < 1:
            raise ConfigError("functionals.etas", f"each eta must lie in (0, 1), got {e!r}")
    if not fn.b > 1.0:
        raise ConfigError("functionals.b", f"must exceed 1, got {fn.b}")
    if sm.enabled and not fn.b < m.a:
        raise ConfigError("functionals.b", f"must be below model.a={m.a}, got {fn.b}")
    for k in ("theta", "sigma", "b_H0"):
        v = getattr(fn, k)
        if isinstance(v, str):
            if v != "auto":
                raise ConfigError(f"functionals.{k}", f"expected a number or 'auto', got {v!r}")
        elif not v >= 0:
            raise ConfigError(f"functionals.{k}", f"must be >= 0, got {v}")

    ck = c.checks
    for k in ("run", "advisory"):
        for name in getattr(ck, k):
            if name not in CHECKS:
                raise ConfigError(f"checks.{k}", f"unknown check {name!r}; choose from {list(CHECKS)}")
    for name in ck.advisory:
        if name not in ck.run:
            raise ConfigError("checks.advisory", f"{name!r} is advisory but not in checks.run")
    if not ck.burn_in >= 1.0:
        raise ConfigError("checks.burn_in", f"must be >= 1, got {ck.burn_in}")
    for k in ("allowance_c", "identity_tolerance", "sweep_decades", "fit_tolerance",
              "rate_span", "rate_floor", "T_tolerance", "ode_decades"):
        _positive(f"checks.{k}", getattr(ck, k))
    if isinstance(ck.expected_T, str):
        if ck.expected_T != "none":
            raise ConfigError("checks.expected_T", f"expected a number or 'none', got {ck.expected_T!r}")
        if "blowup_time" in ck.run:
            raise ConfigError("checks.expected_T", "blowup_time check needs a reference value")
    if len(ck.ode_window) != 2 or not 0 < ck.ode_window[0] < ck.ode_window[1]:
        raise ConfigError("checks.ode_window", f"expected [lo, hi] with 0 < lo < hi, got {list(ck.ode_window)}")
    if "ode_rate" in ck.run and d.family != "constant":
        raise ConfigError("checks.run", "ode_rate needs data.family = 'constant'")
    needs_sim = set(TRAJECTORY_CHECKS)
    if not sm.enabled and needs_sim & set(ck.run):
        raise ConfigError("checks.run", f"{sorted(needs_sim & set(ck.run))} need the similarity stage")
    if not c.physical_enabled and {"blowup_time", "ode_rate"} & set(ck.run):
        raise ConfigError("checks.run", f"family {d.family!r} has no physical run")
    if "rate_window" in ck.run and not m.a > 2.0:
        raise ConfigError("checks.run", "rate_window needs model.a > 2")

    cv = c.convergence
    for k in ("window", "exact_floor", "min_order"):
        _positive(f"convergence.{k}", getattr(cv, k))
    if cv.samples < 1:
        raise ConfigError("convergence.samples", "must be >= 1")

    if not c.output.dir:
        raise ConfigError("output.dir", "must not be empty")
