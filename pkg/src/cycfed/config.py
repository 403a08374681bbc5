"""TOML experiment configuration: schema, validation and serialization.

The full schema is documented in ``docs/config.md``. Unknown keys are errors.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from .engine import MODES


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted key path, ``line`` its 1-based line if known."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = ""
        if field:
            where = f"{field}: "
        if line:
            where = f"line {line}: {where}"
        super().__init__(where + message)


@dataclass
class QuadraticSpec:
    d: int = 4
    M: int = 6
    gamma: float = 0.0
    alpha: float = 0.0
    nu_bar: float = 0.0
    spectrum: list[float] | None = None
    hessian_perturbation: float = 0.0
    seed: int = 0


@dataclass
class DatasetSpec:
    C: int = 4
    d: int = 5
    n: int = 1000
    separation: float = 3.0
    M: int = 20
    concentration: float = 0.5
    l2: float = 0.1
    seed: int = 0


@dataclass
class ScheduleSpec:
    K_bar: int = 1
    order: str = "identity"
    grouping: str = "label-sorted"


@dataclass
class RunSpec:
    mode: str = "GD"
    K: int = 10
    N: int = 1
    eta: float | str = "theorem"
    tau: int = 1
    b: int = 1
    B: int = 1
    seed: int = 0


@dataclass
class SweepSpec:
    K_bar: list[int] = field(default_factory=list)
    T: list[int] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)


@dataclass
class OutputSpec:
    directory: str | None = None
    record_iterates: bool = False


@dataclass
class ExperimentConfig:
    population: QuadraticSpec | DatasetSpec
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    run: RunSpec = field(default_factory=RunSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    @property
    def population_kind(self) -> str:
        return "quadratic" if isinstance(self.population, QuadraticSpec) else "dataset"

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"population": {self.population_kind: _drop_none(asdict(self.population))}}
        for name in ("schedule", "run", "sweep", "output"):
            out[name] = _drop_none(asdict(getattr(self, name)))
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def with_cell(self, K_bar: int | None = None, T: int | None = None, seed: int | None = None) -> "ExperimentConfig":
        """Copy with one sweep cell's values substituted and the sweep block cleared."""
        schedule = replace(self.schedule, K_bar=K_bar) if K_bar is not None else self.schedule
        run = self.run
        if T is not None:
            if T % schedule.K_bar:
                raise ConfigError(f"T={T} is not a multiple of K_bar={schedule.K_bar}", "sweep.T")
            run = replace(run, K=T // schedule.K_bar)
        if seed is not None:
            run = replace(run, seed=seed)
        cfg = replace(self, schedule=schedule, run=run, sweep=SweepSpec())
        validate(cfg)
        return cfg


def _drop_none(d: dict[str, Any]) -> dict[str, Any]:
    return {k: v for k, v in d.items() if v is not None}


_SECTIONS = {"schedule": ScheduleSpec, "run": RunSpec, "sweep": SweepSpec, "output": OutputSpec}
_POPULATIONS = {"quadratic": QuadraticSpec, "dataset": DatasetSpec}


def _line_of(text: str | None, path: str) -> int | None:
    # Best-effort line lookup: first assignment of the last key after its table header.
    if text is None:
        return None
    parts = path.split(".")
    key = parts[-1]
    header = ".".join(parts[:-1])
    lines = text.splitlines()
    start = 0
    if header:
        pat = re.compile(r"^\s*\[\s*" + re.escape(header) + r"\s*\]")
        for n, line in enumerate(lines):
            if pat.match(line):
                start = n
                break
    assign = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
    for n in range(start, len(lines)):
        if assign.match(lines[n]):
            return n + 1
    return None


def _check_type(value: Any, expected: str, path: str, text: str | None) -> Any:
    ok = {
        "int": isinstance(value, int) and not isinstance(value, bool),
        "float": isinstance(value, (int, float)) and not isinstance(value, bool),
        "str": isinstance(value, str),
        "bool": isinstance(value, bool),
        "list[int]": isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value),
        "list[float]": isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value),
        "float|str": isinstance(value, str) or (isinstance(value, (int, float)) and not isinstance(value, bool)),
    }[expected]
    if not ok:
        raise ConfigError(f"expected {expected}, got {type(value).__name__}", path, _line_of(text, path))
    if expected == "float":
        return float(value)
    if expected == "list[float]":
        return [float(v) for v in value]
    if expected == "float|str" and not isinstance(value, str):
        return float(value)
    return value


_TYPES: dict[type, dict[str, str]] = {
    QuadraticSpec: {"d": "int", "M": "int", "gamma": "float", "alpha": "float", "nu_bar": "float", "spectrum": "list[float]", "hessian_perturbation": "float", "seed": "int"},
    DatasetSpec: {"C": "int", "d": "int", "n": "int", "separation": "float", "M": "int", "concentration": "float", "l2": "float", "seed": "int"},
    ScheduleSpec: {"K_bar": "int", "order": "str", "grouping": "str"},
    RunSpec: {"mode": "str", "K": "int", "N": "int", "eta": "float|str", "tau": "int", "b": "int", "B": "int", "seed": "int"},
    SweepSpec: {"K_bar": "list[int]", "T": "list[int]", "seeds": "list[int]"},
    OutputSpec: {"directory": "str", "record_iterates": "bool"},
}


def _build(cls: type, data: Any, prefix: str, text: str | None):
    if not isinstance(data, dict):
        raise ConfigError("expected a table", prefix, _line_of(text, prefix))
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key (allowed: {', '.join(sorted(known))})", f"{prefix}.{key}", _line_of(text, f"{prefix}.{key}"))
    kwargs = {k: _check_type(v, _TYPES[cls][k], f"{prefix}.{k}", text) for k, v in data.items()}
    return cls(**kwargs)


def from_dict(data: dict[str, Any], text: str | None = None) -> ExperimentConfig:
    for key in data:
        if key != "population" and key not in _SECTIONS:
            raise ConfigError("unknown section", key, _line_of(text, key))
    pop = data.get("population")
    if not isinstance(pop, dict) or len(pop) != 1:
        raise ConfigError("exactly one of [population.quadratic] or [population.dataset] is required", "population")
    (kind, body), = pop.items()
    if kind not in _POPULATIONS:
        raise ConfigError(f"unknown population kind {kind!r}", f"population.{kind}")
    cfg = ExperimentConfig(
        population=_build(_POPULATIONS[kind], body, f"population.{kind}", text),
        **{name: _build(cls, data.get(name, {}), name, text) for name, cls in _SECTIONS.items()},
    )
    validate(cfg, text)
    return cfg


def validate(cfg: ExperimentConfig, text: str | None = None) -> None:
    """Cross-field checks; raises :class:`ConfigError` naming the offending field."""

    def fail(msg: str, path: str):
        raise ConfigError(msg, path, _line_of(text, path))

    p, s, r = cfg.population, cfg.schedule, cfg.run
    prefix = f"population.{cfg.population_kind}"
    if p.M < 1:
        fail("must be >= 1", f"{prefix}.M")
    if s.K_bar < 1 or p.M % s.K_bar:
        fail(f"K_bar={s.K_bar} must divide M={p.M}", "schedule.K_bar")
    for kb in cfg.sweep.K_bar:
        if kb < 1 or p.M % kb:
            fail(f"K_bar={kb} must divide M={p.M}", "sweep.K_bar")
        if r.N > p.M // kb:
            fail(f"N={r.N} exceeds the group size {p.M // kb} for K_bar={kb}", "sweep.K_bar")
    if s.order not in ("identity", "shuffled"):
        fail("must be 'identity' or 'shuffled'", "schedule.order")
    if s.grouping not in ("label-sorted", "random"):
        fail("must be 'label-sorted' or 'random'", "schedule.grouping")
    if r.mode not in MODES:
        fail(f"must be one of {', '.join(MODES)}", "run.mode")
    if r.K < 1:
        fail("must be >= 1", "run.K")
    if not 1 <= r.N <= p.M // s.K_bar:
        fail(f"must lie in 1..{p.M // s.K_bar} (the group size)", "run.N")
    if isinstance(r.eta, str):
        if r.eta != "theorem":
            fail("must be a positive number or 'theorem'", "run.eta")
        if cfg.population_kind != "quadratic":
            fail("'theorem' step sizes need the quadratic population's constants", "run.eta")
    elif not r.eta > 0:
        fail("must be positive", "run.eta")
    if r.tau < 1:
        fail("must be >= 1", "run.tau")
    if r.B < 1:
        fail("must be >= 1", "run.B")
    if r.b < 1:
        fail("must be >= 1", "run.b")
    if any(t < 1 for t in cfg.sweep.T):
        fail("horizons must be positive", "sweep.T")
    if isinstance(p, QuadraticSpec):
        if p.spectrum is not None and len(p.spectrum) != p.d:
            fail(f"needs {p.d} entries", f"{prefix}.spectrum")
        if min(p.gamma, p.alpha, p.nu_bar) < 0:
            fail("heterogeneity targets must be non-negative", prefix)
    else:
        if p.concentration <= 0:
            fail("must be positive", f"{prefix}.concentration")
        if p.l2 <= 0:
            fail("must be positive", f"{prefix}.l2")


def loads(text: str) -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax: {exc}") from None
    return from_dict(data, text)


def load(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return loads(text)
