"""Run files: flat ``key = value`` text with ``[section]`` headers.

Every problem is collected, with its line number, before a ConfigError is
raised. ``section.key=value`` overrides (from the command line) are applied
before validation and reported as line "override".
"""

import inspect
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError
from ..systems.catalog import MODELS

logger = logging.getLogger('hj_ks')

ENGINES = ("continuous", "kicked", "rotor-quantum", "oracle", "bench")
KICKED_MODELS = ("kicked-quartic", "rotor", "constant-curvature")
BENCH_PRESETS = ("example1", "example2", "quantum-rotor", "inverted-1d", "harmonic", "golden-kicked")
QUANTUM_STATES = ("uniform", "gaussian", "plane-wave")

# run-file key -> catalog factory argument
MODEL_ARGUMENTS = {"T": "period", "K": "kick_strength", "omega": "omega", "omega2": "omega2",
                   "matrix": "matrix", "dim": "dim", "curvature": "curvature"}


def _vector(text: str) -> np.ndarray:
    return np.array([float(x) for x in text.split(",")])


def _matrix(text: str) -> np.ndarray:
    rows = [[float(x) for x in row.split(",")] for row in text.split(";")]
    if len({len(r) for r in rows}) != 1:
        raise ValueError("matrix rows have different lengths")
    return np.array(rows)


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    check: Optional[Callable[[Any], bool]] = None
    requirement: str = ""
    choices: Tuple[str, ...] = ()


def _positive(x) -> bool:
    return x > 0


def _power_of_two(x) -> bool:
    return x >= 2 and not x & (x - 1)


POSITIVE = Key(float, _positive, "> 0")
COUNT = Key(int, lambda x: x >= 1, ">= 1")

SCHEMA: Dict[str, Dict[str, Key]] = {
    "run": {
        "engine": Key(str, choices=ENGINES),
        "seed": Key(int, lambda x: x >= 0, ">= 0"),
        "out": Key(str),
        "name": Key(str),
    },
    "model": {
        "name": Key(str, choices=tuple(sorted(MODELS))),
        "T": POSITIVE,
        "K": Key(float),
        "omega": POSITIVE,
        "omega2": Key(_matrix),
        "matrix": Key(_matrix),
        "dim": COUNT,
        "curvature": Key(float),
    },
    "initial": {
        "q": Key(_vector),
        "p": Key(_vector),
        "energy": Key(float),
        "box": POSITIVE,
    },
    "continuous": {
        "t_max": POSITIVE,
        "dt": POSITIVE,
        "sample_every": POSITIVE,
        "switch_threshold": POSITIVE,
        "switch_back_factor": Key(float, lambda x: x > 1, "> 1"),
        "escape_bound": POSITIVE,
    },
    "kicked": {
        "n_steps": COUNT,
        "sample_every": COUNT,
        "escape_bound": POSITIVE,
    },
    "quantum": {
        "grid_points": Key(int, _power_of_two, "a power of two"),
        "hbar": POSITIVE,
        "K": Key(float),
        "T": POSITIVE,
        "substeps": COUNT,
        "n_periods": Key(int, lambda x: x >= 10, ">= 10"),
        "state": Key(str, choices=QUANTUM_STATES),
        "center": Key(float),
        "width": POSITIVE,
        "momentum": Key(float),
        "m": Key(int),
        "orbits": Key(int, lambda x: x >= 0, ">= 0"),
        "q0": Key(_vector),
        "ensemble_size": Key(int, lambda x: x >= 0, ">= 0"),
        "window": Key(float, lambda x: x >= 10, ">= 10 periods"),
        "classical_q": Key(float),
        "classical_p": Key(float),
        "time_interpolation": Key(str, choices=("exact", "linear")),
        "step_tolerance": POSITIVE,
        "max_refinement": Key(int, lambda x: x >= 0, ">= 0"),
        "hybrid_tolerance": POSITIVE,
        "save_evolution": Key(_bool),
    },
    "oracle": {
        "t_max": POSITIVE,
        "dt": POSITIVE,
        "renorm_interval": POSITIVE,
        "blocks": Key(int, lambda x: x >= 2, ">= 2"),
    },
    "bench": {
        "preset": Key(str, choices=BENCH_PRESETS),
        "scale": Key(float, lambda x: 0 < x <= 1, "in (0, 1]"),
    },
}

REQUIRED: Dict[str, List[Tuple[str, str]]] = {
    "continuous": [("model", "name"), ("continuous", "t_max")],
    "kicked": [("model", "name"), ("model", "T"), ("kicked", "n_steps")],
    "rotor-quantum": [("quantum", "n_periods")],
    "oracle": [("model", "name"), ("oracle", "t_max")],
    "bench": [("bench", "preset")],
}


@dataclass
class RunConfig:
    engine: str
    seed: int = 0
    out: Optional[str] = None
    name: Optional[str] = None
    model: Dict[str, Any] = field(default_factory=dict)
    initial: Dict[str, Any] = field(default_factory=dict)
    sections: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def section(self, name: str) -> Dict[str, Any]:
        return self.sections.get(name, {})

    @property
    def model_name(self) -> Optional[str]:
        return self.model.get("name")

    def model_arguments(self) -> Dict[str, Any]:
        return {MODEL_ARGUMENTS[k]: v for k, v in self.model.items() if k != "name"}

    @property
    def output_dir(self) -> str:
        return self.out or f"runs/{self.name or self.engine}"

    def to_dict(self) -> dict:
        """JSON-ready echo of the validated configuration."""
        def plain(value):
            return value.tolist() if isinstance(value, np.ndarray) else value
        return {
            "engine": self.engine,
            "seed": self.seed,
            "out": self.output_dir,
            "name": self.name,
            "model": {k: plain(v) for k, v in self.model.items()},
            "initial": {k: plain(v) for k, v in self.initial.items()},
            "sections": {s: {k: plain(v) for k, v in keys.items()} for s, keys in self.sections.items()},
        }


RawConfig = Dict[str, Dict[str, Tuple[str, Any]]]


def _read(text: str, errors: List[str]) -> RawConfig:
    raw: RawConfig = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SCHEMA:
                errors.append(f"line {number}: unknown section [{section}]")
            raw.setdefault(section, {})
            continue
        if "=" not in stripped:
            errors.append(f"line {number}: expected 'key = value', got {stripped!r}")
            continue
        if section is None:
            errors.append(f"line {number}: key outside of any [section]")
            continue
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key in raw[section]:
            errors.append(f"line {number}: duplicate key {key!r} in [{section}]")
        raw[section][key] = (value, number)
    return raw


def _apply_overrides(raw: RawConfig, overrides: Sequence[str], errors: List[str]) -> None:
    for item in overrides:
        target, sep, value = item.partition("=")
        section, dot, key = target.strip().partition(".")
        if not sep or not dot or not key:
            errors.append(f"override {item!r}: expected section.key=value")
            continue
        if section not in SCHEMA:
            errors.append(f"override {item!r}: unknown section [{section}]")
            continue
        raw.setdefault(section, {})[key] = (value.strip(), "override")


def _validate(raw: RawConfig, errors: List[str]) -> Dict[str, Dict[str, Any]]:
    values: Dict[str, Dict[str, Any]] = {}
    for section, keys in raw.items():
        schema = SCHEMA.get(section)
        if schema is None:
            continue
        values[section] = {}
        for key, (text, where) in keys.items():
            rule = schema.get(key)
            if rule is None:
                errors.append(f"line {where}: unknown key {key!r} in [{section}]")
                continue
            try:
                value = rule.parse(text)
            except ValueError as e:
                errors.append(f"line {where}: {key} could not be parsed from {text!r} ({e})")
                continue
            if rule.choices and value not in rule.choices:
                errors.append(f"line {where}: {key} must be one of {', '.join(rule.choices)} (got {value!r})")
                continue
            if rule.check is not None and not rule.check(value):
                errors.append(f"line {where}: {key} must be {rule.requirement} (got {text})")
                continue
            values[section][key] = value
    return values


def _check_engine(values: Dict[str, Dict[str, Any]], raw: RawConfig, errors: List[str]) -> Optional[str]:
    engine = values.get("run", {}).get("engine")
    if engine is None:
        if "engine" not in raw.get("run", {}):
            errors.append("[run] missing required key 'engine'")
        return None

    for section, key in REQUIRED[engine]:
        if key not in values.get(section, {}) and key not in raw.get(section, {}):
            errors.append(f"[{section}] missing required key '{key}' for engine {engine}")

    model = values.get("model", {})
    name = model.get("name")
    if name is not None:
        if engine == "kicked" and name not in KICKED_MODELS:
            errors.append(f"[model] {name} is not a kicked model (kicked engine needs one of {', '.join(KICKED_MODELS)})")
        if engine == "continuous" and name in KICKED_MODELS:
            errors.append(f"[model] {name} is a kicked model; use engine = kicked")
        accepted = inspect.signature(MODELS[name]).parameters
        for key in model:
            if key != "name" and MODEL_ARGUMENTS[key] not in accepted:
                where = raw["model"][key][1]
                errors.append(f"line {where}: model {name} does not take {key}")

    if engine in ("continuous", "kicked", "oracle"):
        initial = values.get("initial", {})
        explicit = "q" in initial and "p" in initial
        if not explicit and "energy" not in initial:
            errors.append(f"[initial] engine {engine} needs q and p, or energy")
        if explicit and initial["q"].shape != initial["p"].shape:
            errors.append("[initial] q and p have different lengths")
    return engine


def parse_config(text: str, overrides: Sequence[str] = ()) -> RunConfig:
    """Validate a run file; raises ConfigError listing every problem found."""
    errors: List[str] = []
    raw = _read(text, errors)
    _apply_overrides(raw, overrides, errors)
    values = _validate(raw, errors)
    engine = _check_engine(values, raw, errors)
    if errors:
        for e in errors:
            logger.error(f"Config: {e}")
        raise ConfigError(errors)

    run = values.get("run", {})
    sections = {s: v for s, v in values.items() if s not in ("run", "model", "initial")}
    return RunConfig(engine=engine, seed=run.get("seed", 0), out=run.get("out"), name=run.get("name"),
                     model=values.get("model", {}), initial=values.get("initial", {}), sections=sections)


def load_run_config(path: str, overrides: Sequence[str] = ()) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError([f"cannot read {path}: {e.strerror}"])
    return parse_config(text, overrides)
