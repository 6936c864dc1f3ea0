"""Experiment configuration files.

INI-style text with four flat sections::

    [benchmark]
    name = ex1_uniform      ; required
    d = 1                   ; required for ex2_diag / ex3_coupled

    [grid]
    n = 30                  ; default 30 for ex1, 60 otherwise
    knots =                 ; optional comma-separated explicit knots, overrides n

    [train]
    batch = 1000            ; M
    runs = 10               ; default 10 for ex1, 1 otherwise
    eval_batch = 1000
    ...                     ; every TrainConfig field

    [output]
    dir = out
    summary = true
    loss_traces = false
    curves = false
    paths = false
    checkpoints = false
    timing = false          ; fill the wall-time columns (breaks byte-identical reruns)

Errors name the offending line.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, fields, replace
from typing import Optional

from .benchmarks import EX1_NAMES, NAMES, make_problem
from .errors import ConfigError, DfbdpError
from .forward import TimeGrid
from .solver import TrainConfig

_TRAIN_TYPES = {f.name: f.type for f in fields(TrainConfig)}
_EXTRA_TRAIN = {"runs": "int", "eval_batch": "int"}
OUTPUT_FLAGS = ("summary", "loss_traces", "curves", "paths", "checkpoints", "timing")

SCHEMA = {
    "benchmark": {"name": "str", "d": "Optional[int]"},
    "grid": {"n": "int", "knots": "Optional[knots]"},
    "train": {**_TRAIN_TYPES, **_EXTRA_TRAIN},
    "output": {"dir": "str", **{k: "bool" for k in OUTPUT_FLAGS}},
}


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark: str
    d: Optional[int]
    n: int
    knots: Optional[tuple]
    train: TrainConfig
    runs: int
    eval_batch: int = 1000
    out_dir: str = "out"
    summary: bool = True
    loss_traces: bool = False
    curves: bool = False
    paths: bool = False
    checkpoints: bool = False
    timing: bool = False

    def problem(self):
        return make_problem(self.benchmark, self.d)

    def grid(self):
        if self.knots is not None:
            return TimeGrid(self.knots)
        return TimeGrid.uniform(self.n, self.problem().horizon)


def _line_index(text):
    """Map (section, key) to the 1-based line where the key is set."""
    index, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            index[(section, None)] = no
            continue
        m = re.match(r"([^=:;#\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            index[(section, m.group(1).strip().lower())] = no
    return index


def _convert(raw, kind, line):
    raw = raw.strip()
    optional = kind.startswith("Optional[")
    if optional:
        kind = kind[len("Optional["):-1]
        if raw == "" or raw.lower() == "none":
            return None
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if kind == "knots":
            return tuple(float(v) for v in raw.split(","))
        if kind == "str":
            if not raw:
                raise ValueError(raw)
            return raw
    except ValueError:
        raise ConfigError(f"expected {kind}, got {raw!r}", line=line) from None
    raise ConfigError(f"unsupported field type {kind}", line=line)


def parse_config(text):
    """Validated ExperimentConfig from config text, defaults filled in."""
    lines = _line_index(text)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None,
                                   default_section="__none__")
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        msg = exc.message.splitlines()[0] if hasattr(exc, "message") else str(exc)
        raise ConfigError(msg, line=line) from None

    values = {}
    for section in cp.sections():
        sec = section.lower()
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", line=lines.get((sec, None)))
        for key, raw in cp.items(section):
            line = lines.get((sec, key))
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", line=line)
            values[(sec, key)] = (_convert(raw, SCHEMA[sec][key], line), line)

    def get(sec, key, default=None):
        return values[(sec, key)][0] if (sec, key) in values else default

    def line_of(sec, key):
        return values.get((sec, key), (None, lines.get((sec, None))))[1]

    name = get("benchmark", "name")
    if name is None:
        raise ConfigError("missing required key 'name' in [benchmark]")
    if name not in NAMES:
        raise ConfigError(f"unknown benchmark {name!r}; choose from {', '.join(NAMES)}",
                          line=line_of("benchmark", "name"))
    d = get("benchmark", "d")
    try:
        problem = make_problem(name, d)
    except DfbdpError as exc:
        raise ConfigError(str(exc), line=line_of("benchmark", "d")) from None
    if name in EX1_NAMES:
        d = 1

    knots = get("grid", "knots")
    n = get("grid", "n", problem.params["n"])
    if knots is not None:
        try:
            grid = TimeGrid(knots)
        except DfbdpError as exc:
            raise ConfigError(str(exc), line=line_of("grid", "knots")) from None
        if abs(grid.horizon - problem.horizon) > 1e-12:
            raise ConfigError(f"knots must end at the horizon {problem.horizon}",
                              line=line_of("grid", "knots"))
        n = grid.n
    if n < 1:
        raise ConfigError("n must be >= 1", line=line_of("grid", "n"))

    train_kw = {k: get("train", k) for k in _TRAIN_TYPES if ("train", k) in values}
    try:
        train = TrainConfig(**train_kw)
    except DfbdpError as exc:
        raise ConfigError(str(exc), line=lines.get(("train", None))) from None
    runs = get("train", "runs", problem.params["runs"])
    eval_batch = get("train", "eval_batch", 1000)
    for key, v in (("runs", runs), ("eval_batch", eval_batch)):
        if v < 1:
            raise ConfigError(f"{key} must be >= 1", line=line_of("train", key))

    out = {k: get("output", k) for k in OUTPUT_FLAGS if ("output", k) in values}
    return ExperimentConfig(benchmark=name, d=d, n=n, knots=knots, train=train, runs=runs,
                            eval_batch=eval_batch, out_dir=get("output", "dir", "out"), **out)


def _render_value(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def render_config(config):
    """Config text that parses back to ``config``."""
    out = ["[benchmark]", f"name = {config.benchmark}", f"d = {_render_value(config.d)}", "",
           "[grid]", f"n = {config.n}", f"knots = {_render_value(config.knots)}", "", "[train]"]
    for f in fields(TrainConfig):
        out.append(f"{f.name} = {_render_value(getattr(config.train, f.name))}")
    out += [f"runs = {config.runs}", f"eval_batch = {config.eval_batch}", "", "[output]",
            f"dir = {config.out_dir}"]
    out += [f"{k} = {_render_value(getattr(config, k))}" for k in OUTPUT_FLAGS]
    return "\n".join(out) + "\n"


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def with_overrides(config, seed=None, out_dir=None):
    train = config.train if seed is None else replace(config.train, seed=seed)
    return replace(config, train=train, out_dir=config.out_dir if out_dir is None else out_dir)
