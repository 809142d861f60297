"""Run configuration: a sectioned key-value file with a strict schema.

The file format is INI as understood by :mod:`configparser`.  Every
section and key must appear in the schema below; anything else is
rejected with the offending file line.  Values are type-checked before
any computation starts, so a bad run dies in milliseconds instead of
after a solve.

Command line overrides use dotted keys (``section.key=value``) and are
applied on top of the parsed file, then validated the same way.
"""

import configparser
import os
from dataclasses import dataclass, field

from .metrics import MetricField
from .solver import SolverConfig


class ConfigError(ValueError):
    """Malformed run configuration; message carries file/line context."""


_COMMANDS = ("solve", "verify", "oracle", "converge", "bounds")
_METRIC_NAMES = ("euclidean", "conformal", "warped", "diagonal", "entries")
_ORACLE_CASES = ("trio", "even_quadratic", "vertical_linear", "bilinear")
_ORACLE_DOMAINS = ("both", "half_ball", "quarter_ball")

# section -> key -> type tag ("str" | "int" | "float" | "bool" | "ints")
_SCHEMA = {
    "run": {"command": "str", "out_dir": "str"},
    "metric": {"name": "str", "f": "str", "phi": "str",
               "d1": "float", "d2": "float", "d3": "float",
               "g11": "str", "g12": "str", "g13": "str",
               "g22": "str", "g23": "str", "g33": "str"},
    "grid": {"n": "int"},
    "solver": {"method": "str", "tolerance": "float",
               "max_iterations": "int", "omega": "float",
               "direct_limit": "int"},
    "levels": {"theta_samples": "int", "delta_reg": "float"},
    "inequality": {"variant": "str", "tol": "float"},
    "oracle": {"case": "str", "domain": "str", "tol": "float"},
    "converge": {"sizes": "ints", "expressions": "str",
                 "slack_sizes": "ints"},
    "bounds": {"volume": "float", "width": "float",
               "translation_length": "float", "width_constant": "float",
               "euler": "float", "bilipschitz": "float"},
    "plots": {"enabled": "bool"},
}

_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


@dataclass(frozen=True)
class RunConfig:
    """Validated settings for one command invocation."""

    command: str
    out_dir: str
    metric_name: str = "euclidean"
    metric_params: dict = field(default_factory=dict)
    grid_n: int = 33
    solver: SolverConfig = field(default_factory=SolverConfig)
    theta_samples: int = 32
    delta_reg: float = None
    variant: str = "cube"
    tol: float = 1e-6
    oracle_case: str = "trio"
    oracle_domain: str = "both"
    oracle_tol: float = 1e-4
    converge_sizes: tuple = (9, 17, 33, 65)
    converge_expressions: tuple = (
        "sin(pi*x1)*(exp(pi*x3)+exp(-pi*x3))/(exp(pi)+exp(-pi))", "x3")
    slack_sizes: tuple = ()
    bounds: dict = None
    plots: bool = True


def _line_of(path, section, key=None):
    """Best-effort line number of a section header or key for messages."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError:
        return None
    in_section = False
    for i, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            name = stripped[1:-1].strip()
            if key is None and name == section:
                return i
            in_section = (name == section)
        elif in_section and key is not None:
            head = stripped.split("=", 1)[0].split(":", 1)[0].strip()
            if head.lower() == key.lower():
                return i
    return None


def _where(path, section, key=None):
    line = _line_of(path, section, key)
    loc = f"{path}:{line}" if line is not None else str(path)
    tail = f"[{section}] {key}" if key is not None else f"[{section}]"
    return f"{loc}: {tail}"


def _convert(kind, text, where):
    text = text.strip()
    try:
        if kind == "str":
            return text
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            flag = _BOOL.get(text.lower())
            if flag is None:
                raise ValueError(text)
            return flag
        if kind == "ints":
            parts = [p for p in text.replace(",", " ").split() if p]
            return tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {kind}") from None
    raise ConfigError(f"{where}: unknown schema kind {kind!r}")


def _read_file(path):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh, source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        # configparser messages already carry source and line numbers
        raise ConfigError(f"config parse error: {exc}") from exc
    return parser


def _apply_overrides(values, overrides):
    for item in overrides:
        if "=" not in item:
            raise ConfigError(
                f"override {item!r} is not of the form section.key=value")
        dotted, text = item.split("=", 1)
        if "." not in dotted:
            raise ConfigError(
                f"override {item!r} needs a dotted key like grid.n")
        section, key = dotted.split(".", 1)
        section, key = section.strip(), key.strip()
        if section not in _SCHEMA:
            raise ConfigError(f"override: unknown section [{section}]")
        if key not in _SCHEMA[section]:
            raise ConfigError(f"override: unknown key [{section}] {key}")
        values.setdefault(section, {})[key] = (text, f"override {item!r}")
    return values


def load_config(path, overrides=(), out_dir=None):
    """Parse, override, validate; returns a :class:`RunConfig`."""
    parser = _read_file(path)

    values = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{_where(path, section)}: unknown section")
        for key, text in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{_where(path, section, key)}: unknown key")
            values.setdefault(section, {})[key] = (
                text, _where(path, section, key))
    values = _apply_overrides(values, overrides)

    typed = {}
    for section, entries in values.items():
        for key, (text, where) in entries.items():
            typed[(section, key)] = _convert(_SCHEMA[section][key], text,
                                             where)

    def get(section, key, default=None):
        return typed.get((section, key), default)

    command = get("run", "command")
    if command is None:
        raise ConfigError(f"{path}: [run] command is required")
    if command not in _COMMANDS:
        raise ConfigError(
            f"{_where(path, 'run', 'command')}: unknown command "
            f"{command!r}, expected one of {', '.join(_COMMANDS)}")

    resolved_out = (out_dir or get("run", "out_dir")
                    or os.environ.get("HARMCUBE_OUT_DIR") or "out")

    metric_name = get("metric", "name", "euclidean")
    if metric_name not in _METRIC_NAMES:
        raise ConfigError(
            f"{_where(path, 'metric', 'name')}: unknown metric "
            f"{metric_name!r}, expected one of {', '.join(_METRIC_NAMES)}")
    metric_params = {key: typed[("metric", key)]
                     for key in _SCHEMA["metric"]
                     if ("metric", key) in typed and key != "name"}

    try:
        solver = SolverConfig(
            method=get("solver", "method", "cg"),
            tolerance=get("solver", "tolerance", 1e-10),
            max_iterations=get("solver", "max_iterations", 20000),
            omega=get("solver", "omega", 1.7),
            direct_limit=get("solver", "direct_limit", 33))
    except ValueError as exc:
        raise ConfigError(f"{_where(path, 'solver')}: {exc}") from exc

    grid_n = get("grid", "n", 33)
    if grid_n < 3 or grid_n % 2 == 0:
        raise ConfigError(
            f"{_where(path, 'grid', 'n')}: n must be odd and at least 3, "
            f"got {grid_n}")

    theta_samples = get("levels", "theta_samples", 32)
    variant = get("inequality", "variant", "cube")
    if variant not in ("cube", "dirichlet"):
        raise ConfigError(
            f"{_where(path, 'inequality', 'variant')}: unknown variant "
            f"{variant!r}")

    oracle_case = get("oracle", "case", "trio")
    if oracle_case not in _ORACLE_CASES:
        raise ConfigError(
            f"{_where(path, 'oracle', 'case')}: unknown case "
            f"{oracle_case!r}, expected one of {', '.join(_ORACLE_CASES)}")
    oracle_domain = get("oracle", "domain", "both")
    if oracle_domain not in _ORACLE_DOMAINS:
        raise ConfigError(
            f"{_where(path, 'oracle', 'domain')}: unknown domain "
            f"{oracle_domain!r}")

    sizes = get("converge", "sizes", (9, 17, 33, 65))
    if command == "converge" and len(sizes) < 3:
        raise ConfigError(
            f"{_where(path, 'converge', 'sizes')}: need at least three "
            f"grid sizes, got {sizes}")
    expr_text = get("converge", "expressions",
                    "sin(pi*x1)*(exp(pi*x3)+exp(-pi*x3))/(exp(pi)+exp(-pi))"
                    " ; x3")
    expressions = tuple(p.strip() for p in expr_text.split(";") if p.strip())
    if command == "converge" and not expressions:
        raise ConfigError(
            f"{_where(path, 'converge', 'expressions')}: empty list")

    bounds = None
    if ("bounds", "volume") in typed or command == "bounds":
        if ("bounds", "volume") not in typed:
            raise ConfigError(
                f"{path}: [bounds] volume is required for the bounds command")
        bounds = {key: typed[("bounds", key)] for key in _SCHEMA["bounds"]
                  if ("bounds", key) in typed}

    return RunConfig(
        command=command,
        out_dir=str(resolved_out),
        metric_name=metric_name,
        metric_params=metric_params,
        grid_n=grid_n,
        solver=solver,
        theta_samples=theta_samples,
        delta_reg=get("levels", "delta_reg"),
        variant=variant,
        tol=get("inequality", "tol", 1e-6),
        oracle_case=oracle_case,
        oracle_domain=oracle_domain,
        oracle_tol=get("oracle", "tol", 1e-4),
        converge_sizes=tuple(sizes),
        converge_expressions=expressions,
        slack_sizes=tuple(get("converge", "slack_sizes", ())),
        bounds=bounds,
        plots=get("plots", "enabled", True),
    )


def build_metric(config):
    """Instantiate the metric named by the config."""
    name = config.metric_name
    params = config.metric_params
    try:
        if name == "euclidean":
            return MetricField.euclidean()
        if name == "conformal":
            if "f" not in params:
                raise ConfigError("[metric] f is required for conformal")
            return MetricField.conformal(params["f"])
        if name == "warped":
            return MetricField.warped(params.get("phi", "1 + 0.2*x1"))
        if name == "diagonal":
            missing = [k for k in ("d1", "d2", "d3") if k not in params]
            if missing:
                raise ConfigError(
                    f"[metric] {', '.join(missing)} required for diagonal")
            return MetricField.diagonal(params["d1"], params["d2"],
                                        params["d3"])
        # entries: g11..g33 expression table
        table = {k: v for k, v in params.items() if k.startswith("g")}
        return MetricField.from_entries(table, name="entries")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[metric] {exc}") from exc
