"""Line-oriented run configuration.

A config file holds one command section plus optional ``[theory]``, ``[noise]``,
``[solver]`` and ``[run]`` sections::

    # Lasso rate experiment
    [experiment]
    n = 100, 200, 400
    p = 256, 512, 1024
    k_star = 4, 8, 16

    [run]
    master_seed = 7

Values are scalars or comma-separated lists; ``#`` starts a comment. Unknown
keys, repeated keys, bad values and out-of-range values raise
:class:`ConfigError` carrying the line number. Every omitted key is filled
with its default, so :func:`serialize` writes out the complete configuration.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable

from .mc import ESTIMATORS, GroupShape, LassoShape, signal_amplitude
from .model import NoiseModel
from .solver import RESTART_MODES, STEP_RULES, SolverConfig
from .theory import TheoryParams

__all__ = ["ConfigError", "RunConfig", "RunSettings", "COMMANDS", "parse_config", "load_config", "serialize"]

COMMANDS = ("solve", "experiment", "verify-lemma", "verify-cone", "estimate-re", "compare")
SHARED = ("theory", "noise", "solver", "run")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


_REQUIRED = object()


@dataclass(frozen=True)
class _Key:
    kind: str  # int, float, str, bool, ints, floats, strs, shapes, path
    default: Any = _REQUIRED
    check: Callable[[Any], bool] | None = None
    rule: str = ""
    choices: tuple = ()
    optional: bool = False  # "none" allowed


def _positive(v):
    return all(x >= 1 for x in v) if isinstance(v, tuple) else v >= 1


def _fraction(v):
    return 0 < v < 0.5


_GRID = {
    "n": _Key("ints", (100, 200, 400), _positive, ">= 1"),
    "shapes": _Key("shapes", None, optional=True),
    "replications": _Key("int", 50, _positive, ">= 1"),
    "amplitude": _Key("float", "auto", lambda v: v > 0, "> 0"),
}
_LASSO_GRID = {
    "p": _Key("ints", (256, 512, 1024), _positive, ">= 1"),
    "k_star": _Key("ints", (4, 8, 16), _positive, ">= 1"),
}
_GROUP_GRID = {
    "G": _Key("ints", (32, 64, 128), _positive, ">= 1"),
    "group_size": _Key("ints", (8,), _positive, ">= 1"),
    "s_star": _Key("ints", (1, 2, 4), _positive, ">= 1"),
    # nonzeros per active group; none fills every active group
    "group_fill": _Key("int", None, _positive, ">= 1", optional=True),
}

_GRID_AXES = ("shapes", "n", "p", "k_star", "G", "group_size", "s_star", "group_fill")

COMMAND_KEYS: dict[str, dict[str, _Key]] = {
    "solve": {
        "problem": _Key("path"),
        "estimator": _Key("str", "lasso", choices=("lasso", "group")),
        "lambda": _Key("float", "theory", lambda v: v >= 0, ">= 0"),
    },
    "experiment": {
        "estimator": _Key("str", "lasso", choices=ESTIMATORS),
        **_GRID,
        **_LASSO_GRID,
        **_GROUP_GRID,
        "cone_check": _Key("bool", True),
        "slope_range": _Key("floats", None, lambda v: len(v) == 2 and v[0] <= v[1], "two values lo <= hi", optional=True),
        "min_r_squared": _Key("float", None, lambda v: 0 <= v <= 1, "in [0, 1]", optional=True),
    },
    "verify-cone": {
        "estimator": _Key("str", "lasso", choices=ESTIMATORS),
        **_GRID,
        "replications": _Key("int", 200, _positive, ">= 1"),
        **_LASSO_GRID,
        **_GROUP_GRID,
    },
    "compare": {
        **_GRID,
        "n": _Key("ints", (100,), _positive, ">= 1"),
        "G": _Key("ints", (64,), _positive, ">= 1"),
        "group_size": _Key("ints", (8,), _positive, ">= 1"),
        "s_star": _Key("ints", (1,), _positive, ">= 1"),
        "group_fill": _Key("int", None, _positive, ">= 1", optional=True),
        "replications": _Key("int", 100, _positive, ">= 1"),
        "max_median_ratio": _Key("float", None, lambda v: v > 0, "> 0", optional=True),
        "min_median_ratio": _Key("float", None, lambda v: v >= 0, ">= 0", optional=True),
    },
    "verify-lemma": {
        "r": _Key("ints", (10, 100, 1000), _positive, ">= 1"),
        "families": _Key("strs", NoiseModel.FAMILIES, choices=NoiseModel.FAMILIES),
        "deltas": _Key("floats", (0.01, 0.05), lambda v: all(_fraction(x) for x in v), "in (0, 1/2)"),
        "trials": _Key("int", 2000, _positive, ">= 1"),
    },
    "estimate-re": {
        "problem": _Key("path", None, optional=True),
        "n": _Key("int", 60, _positive, ">= 1"),
        "p": _Key("int", 6, _positive, ">= 1"),
        "normalization": _Key("str", "unit-columns", choices=("none", "unit-columns")),
        "k": _Key("int", 2, _positive, ">= 1"),
        "gamma1": _Key("float", None, lambda v: v >= 0, ">= 0", optional=True),
        "gamma2": _Key("float", None, lambda v: v >= 0, ">= 0", optional=True),
        "budget": _Key("int", 8, _positive, ">= 1"),
        "mode": _Key("str", "auto", choices=("auto", "exact", "sampled")),
        "n_sampled": _Key("int", 200, _positive, ">= 1"),
        "iters": _Key("int", 2000, _positive, ">= 1"),
    },
}

SHARED_KEYS: dict[str, dict[str, _Key]] = {
    "theory": {
        "alpha": _Key("float", 2.0, lambda v: v >= 2, ">= 2"),
        "delta": _Key("float", 0.05, _fraction, "in (0, 1/2)"),
        "gamma": _Key("float", 1.0, lambda v: v >= 1, ">= 1"),
        "bound_constant": _Key("float", 1.0, lambda v: v > 0, "> 0"),
        "lambda_constant": _Key("float", 24.0, lambda v: v > 0, "> 0"),
        "group_size_constant": _Key("float", 4.0, lambda v: v >= 0, ">= 0"),
        "group_delta_numerator": _Key("float", 2.0, lambda v: v in (1.0, 2.0), "1 or 2"),
    },
    "noise": {
        "family": _Key("str", "gaussian", choices=NoiseModel.FAMILIES),
        "sigma": _Key("float", 1.0, lambda v: v >= 0, ">= 0"),
    },
    "solver": {
        "tol_kkt": _Key("float", 1e-8, lambda v: v >= 0, ">= 0"),
        "max_iter": _Key("int", 50_000, _positive, ">= 1"),
        "restart": _Key("str", "function-value-restart", choices=RESTART_MODES),
        "step_rule": _Key("str", "fixed-lipschitz", choices=STEP_RULES),
    },
    "run": {
        "master_seed": _Key("int", 0, lambda v: 0 <= v < 2**64, "in [0, 2^64)"),
        "threads": _Key("int", 1, _positive, ">= 1"),
        "out": _Key("str", "results"),
        "figures": _Key("bool", True),
    },
}


@dataclass(frozen=True)
class RunSettings:
    master_seed: int = 0
    threads: int = 1
    out: str = "results"
    figures: bool = True


@dataclass(frozen=True)
class RunConfig:
    command: str
    options: dict = field(default_factory=dict)
    theory: TheoryParams = TheoryParams()
    noise: NoiseModel = NoiseModel()
    solver: SolverConfig = SolverConfig()
    run: RunSettings = RunSettings()

    def __getitem__(self, key):
        return self.options[key]

    def with_overrides(self, **run_fields) -> "RunConfig":
        changed = {k: v for k, v in run_fields.items() if v is not None}
        if not changed:
            return self
        return replace(self, run=replace(self.run, **changed))


# -- value parsing -----------------------------------------------------------


def _scalar(kind: str, raw: str, line: int, key: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}", line) from None
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {raw!r}", line)
    return raw


def _parse_shapes(raw: str, line: int):
    # "n/p/k" for lasso or "n/G/size/s/k" for groups, comma separated
    out = []
    for item in raw.split(","):
        parts = item.strip().split("/")
        try:
            nums = tuple(int(x) for x in parts)
        except ValueError:
            raise ConfigError(f"shapes: bad entry {item.strip()!r}", line) from None
        if len(nums) not in (3, 5):
            raise ConfigError(f"shapes: {item.strip()!r} needs n/p/k or n/G/size/s/k", line)
        out.append(nums)
    return tuple(out)


def _parse_value(key: str, spec: _Key, raw: str, line: int):
    if spec.optional and raw.lower() == "none":
        return None
    if key in ("lambda", "amplitude") and raw in ("theory", "auto"):
        return raw
    if spec.kind == "shapes":
        value = _parse_shapes(raw, line)
    elif spec.kind in ("ints", "floats", "strs"):
        items = [x.strip() for x in raw.split(",")]
        if not all(items):
            raise ConfigError(f"{key}: empty list element in {raw!r}", line)
        value = tuple(_scalar(spec.kind[:-1], x, line, key) for x in items)
    else:
        value = _scalar("str" if spec.kind == "path" else spec.kind, raw, line, key)
    if spec.choices:
        bad = [v for v in (value if isinstance(value, tuple) else (value,)) if v not in spec.choices]
        if bad:
            raise ConfigError(f"{key}: {bad[0]!r} is not one of {', '.join(spec.choices)}", line)
    if spec.check is not None and not spec.check(value):
        raise ConfigError(f"{key} = {raw}: must be {spec.rule}", line)
    return value


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join("/".join(str(x) for x in s) for s in value)
        return ", ".join(_format_value(v) for v in value)
    return str(value)


# -- parsing -----------------------------------------------------------------


def _sections(text: str):
    """Yield ``(section, header_line, {key: (raw, line)})`` in file order."""
    out: list[tuple[str, int, dict]] = []
    seen: set[str] = set()
    current = None
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {rawline.strip()!r}", lineno)
            name = line[1:-1].strip()
            if name not in COMMANDS and name not in SHARED:
                raise ConfigError(f"unknown section [{name}]", lineno)
            if name in seen:
                raise ConfigError(f"section [{name}] repeated", lineno)
            seen.add(name)
            current = (name, lineno, {})
            out.append(current)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {rawline.strip()!r}", lineno)
        if current is None:
            raise ConfigError("key outside of any section", lineno)
        key, value = (x.strip() for x in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"expected 'key = value', got {rawline.strip()!r}", lineno)
        if key in current[2]:
            raise ConfigError(f"key {key!r} repeated (first on line {current[2][key][1]})", lineno)
        current[2][key] = (value, lineno)
    return out


def _resolve(name: str, keys: dict[str, _Key], given: dict, header: int) -> tuple[dict, dict]:
    """Typed values with defaults filled in, plus the line of each given key."""
    values, lines = {}, {}
    for key, (raw, lineno) in given.items():
        if key not in keys:
            raise ConfigError(f"unknown key {key!r} in [{name}]", lineno)
        values[key] = _parse_value(key, keys[key], raw, lineno)
        lines[key] = lineno
    for key, spec in keys.items():
        if key not in values:
            if spec.default is _REQUIRED:
                raise ConfigError(f"missing required key {key!r} in [{name}]", header)
            values[key] = spec.default
    return values, lines


def parse_config(text: str) -> RunConfig:
    sections = _sections(text)
    commands = [s for s in sections if s[0] in COMMANDS]
    if not commands:
        raise ConfigError(f"no command section (one of {', '.join(COMMANDS)})")
    if len(commands) > 1:
        raise ConfigError(f"more than one command section ([{commands[0][0]}] and [{commands[1][0]}])", commands[1][1])
    command, header, given = commands[0]
    options, lines = _resolve(command, COMMAND_KEYS[command], given, header)

    shared = {}
    for name in SHARED:
        found = next((s for s in sections if s[0] == name), (name, 0, {}))
        shared[name] = _resolve(name, SHARED_KEYS[name], found[2], found[1])[0]

    theory = TheoryParams(sigma=shared["noise"]["sigma"], **shared["theory"])
    noise = NoiseModel(**shared["noise"])
    solver = SolverConfig(**shared["solver"])
    run = RunSettings(**shared["run"])

    def at(key, fallback=header):
        return lines.get(key, fallback)

    if command in ("experiment", "verify-cone", "compare"):
        options["grid"] = _build_grid(command, options, at, header)
        if options["amplitude"] == "auto":
            est = "both" if command == "compare" else options["estimator"]
            options["amplitude"] = signal_amplitude(options["grid"], theory, est)
        for key in _GRID_AXES:
            options.pop(key, None)
    if command == "estimate-re":
        if options["problem"] is None and options["k"] > options["p"]:
            raise ConfigError("k must not exceed p", at("k"))
        if (options["gamma1"] is None) != (options["gamma2"] is None):
            raise ConfigError("give both gamma1 and gamma2 or neither", at("gamma1") if "gamma1" in lines else at("gamma2"))
    return RunConfig(command, options, theory, noise, solver, run)


def _build_grid(command: str, options: dict, at, header: int) -> tuple:
    grouped = command == "compare" or options["estimator"] != "lasso"
    try:
        if options["shapes"] is not None:
            grid = []
            for s in options["shapes"]:
                if len(s) == 3:
                    if grouped:
                        raise ConfigError(f"shape {s} has no groups but estimator needs them", at("shapes"))
                    grid.append(LassoShape(*s))
                else:
                    grid.append(GroupShape(*s))
            grid = tuple(grid)
        elif grouped:
            fill = options["group_fill"]
            grid = tuple(
                GroupShape(n, G, size, s, s * min(fill, size) if fill else s * size)
                for n, G, size, s in itertools.product(
                    options["n"], options["G"], options["group_size"], options["s_star"]
                )
            )
        else:
            grid = tuple(
                LassoShape(n, p, k) for n, p, k in itertools.product(options["n"], options["p"], options["k_star"])
            )
    except ConfigError:
        raise
    except ValueError as exc:
        given = [at(k, None) for k in _GRID_AXES if at(k, None) is not None]
        raise ConfigError(str(exc), min(given) if given else header) from None
    if len({s.key for s in grid}) != len(grid):
        raise ConfigError("grid contains duplicate shapes", at("shapes"))
    return grid


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


def _grid_to_shapes(grid) -> tuple:
    out = []
    for s in grid:
        if isinstance(s, LassoShape):
            out.append((s.n, s.p, s.k_star))
        else:
            out.append((s.n, s.G, s.group_size, s.s_star, s.k_star))
    return tuple(out)


def serialize(config: RunConfig, provenance: bool = False) -> str:
    """Full config text with every default written out.

    ``provenance=True`` leaves out the ``out`` and ``threads`` settings, which
    cannot change any result, so artifact headers do not depend on them.
    """
    lines = [f"[{config.command}]"]
    opts = dict(config.options)
    grid = opts.pop("grid", None)
    for key in COMMAND_KEYS[config.command]:
        if grid is not None and key in _GRID_AXES:
            # the resolved grid is written as an explicit shape list
            if key == "shapes":
                lines.append(f"shapes = {_format_value(_grid_to_shapes(grid))}")
            continue
        lines.append(f"{key} = {_format_value(opts[key])}")
    objects = {"theory": config.theory, "noise": config.noise, "solver": config.solver, "run": config.run}
    for name in SHARED:
        lines.append("")
        lines.append(f"[{name}]")
        obj = objects[name]
        for f in fields(obj):
            if f.name not in SHARED_KEYS[name]:
                continue
            if provenance and name == "run" and f.name in ("out", "threads"):
                continue
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"
