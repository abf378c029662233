"""Strict INI-style run configuration.

Example::

    [network]
    n = 2
    theta = 1.0
    gamma = 1.0 1.0
    beta = 2.0 2.0
    h = 0.0 0.2
        0.2 0.0

    [run]
    command = classify
    seed = 7
    samples = 10000

Vectors are whitespace or comma separated; the matrix ``h`` is row-major
and may span continuation lines. Unknown sections or keys are rejected,
and so are duplicates.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .model import NetworkParams, ParamError, Tolerances, validate_params

COMMANDS = ("simulate", "cycles", "classify", "atoms", "constants")
FORMATS = ("table", "records")
SAMPLING_COMMANDS = ("cycles", "classify", "atoms")

DEFAULT_STEPS = 10_000
DEFAULT_SAMPLES = 10_000
DEFAULT_GENERATIONS = 40

_NETWORK_KEYS = {"n", "theta", "gamma", "beta", "h"}
_RUN_KEYS = {"command", "seed", "steps", "samples", "generations", "delta", "start", "format", "out"}
_TOL_KEYS = {f.name for f in fields(Tolerances)}
_SECTIONS = {"network": _NETWORK_KEYS, "run": _RUN_KEYS, "tolerances": _TOL_KEYS}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; the message carries line and key."""


@dataclass(frozen=True, eq=False)
class RunConfig:
    params: NetworkParams
    command: str | None = None
    seed: int | None = None
    steps: int = DEFAULT_STEPS
    samples: int = DEFAULT_SAMPLES
    generations: int = DEFAULT_GENERATIONS
    delta: float | None = None
    start: np.ndarray | None = field(default=None, repr=False)
    out_format: str = "table"
    out: str = "netdyn"

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        cfg = replace(self, **kw)
        cfg.check()
        return cfg

    def check(self):
        if self.command is not None and self.command not in COMMANDS:
            raise ConfigError(f"command: unknown command {self.command!r}; expected one of {', '.join(COMMANDS)}")
        if self.out_format not in FORMATS:
            raise ConfigError(f"format: expected one of {', '.join(FORMATS)}, got {self.out_format!r}")
        for name in ("steps", "samples", "generations"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be positive")
        if self.delta is not None and not self.delta > 0:
            raise ConfigError("delta: must be positive")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise ConfigError("seed: must fit in an unsigned 64-bit integer")

    def require_runnable(self):
        """Check what only matters once the command is fixed."""
        if self.command is None:
            raise ConfigError("command: none given on the command line or in [run]")
        needs_seed = self.command in SAMPLING_COMMANDS or (self.command == "simulate" and self.start is None)
        if needs_seed and self.seed is None:
            raise ConfigError(f"seed: required by command {self.command!r}")


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """First line number of every (section, key) pair."""
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", raw)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"([^\s=:#;][^=:]*?)\s*[=:]", raw)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), no)
    return lines


class _Reader:
    def __init__(self, cp, lines):
        self.cp, self.lines = cp, lines

    def where(self, section, key):
        no = self.lines.get((section, key))
        return f"line {no}: {key}" if no else key

    def raw(self, section, key, required=False):
        if self.cp.has_option(section, key):
            return self.cp.get(section, key)
        if required:
            raise ConfigError(f"[{section}] {key}: missing required key")
        return None

    def floats(self, section, key, required=False):
        s = self.raw(section, key, required)
        if s is None:
            return None
        toks = [t for t in re.split(r"[\s,]+", s.strip()) if t]
        try:
            return np.array([float(t) for t in toks])
        except ValueError:
            raise ConfigError(f"{self.where(section, key)}: non-numeric value {s.strip()!r}") from None

    def scalar(self, section, key, kind=float, required=False):
        vals = self.floats(section, key, required)
        if vals is None:
            return None
        if vals.size != 1:
            raise ConfigError(f"{self.where(section, key)}: expected one value, got {vals.size}")
        if kind is int:
            if vals[0] != int(vals[0]):
                raise ConfigError(f"{self.where(section, key)}: expected an integer")
            s = self.raw(section, key).strip()
            return int(s) if re.fullmatch(r"[+-]?\d+", s) else int(vals[0])
        return float(vals[0])


def parse_config(text: str) -> RunConfig:
    """Parse configuration text into a validated RunConfig.

    Raises:
        ConfigError: on syntax errors, duplicates, unknown or missing keys,
            non-numeric values and dimension mismatches.
    """
    cp = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"line {exc.lineno}: {exc.option}: duplicate key in [{exc.section}]") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"line {exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.Error as exc:
        raise ConfigError(f"syntax error: {exc.message}") from None

    lines = _key_lines(text)
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key in cp.options(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{_Reader(cp, lines).where(section, key)}: unknown key in [{section}]")
    if not cp.has_section("network"):
        raise ConfigError("missing required section [network]")
    rd = _Reader(cp, lines)

    n = rd.scalar("network", "n", int, required=True)
    if n < 1:
        raise ConfigError(f"{rd.where('network', 'n')}: must be positive")
    theta = rd.scalar("network", "theta", required=True)
    gamma = rd.floats("network", "gamma", required=True)
    beta = rd.floats("network", "beta", required=True)
    h = rd.floats("network", "h", required=True)
    for key, arr, want in (("gamma", gamma, n), ("beta", beta, n), ("h", h, n * n)):
        if arr.size != want:
            shape = f"{n}x{n}" if key == "h" else str(n)
            raise ConfigError(f"{rd.where('network', key)}: dimension mismatch, expected {shape} values, got {arr.size}")

    tol_kw = {}
    if cp.has_section("tolerances"):
        for key in cp.options("tolerances"):
            tol_kw[key] = rd.scalar("tolerances", key)
    try:
        params = validate_params(NetworkParams(n, theta, gamma, beta, h.reshape(n, n), tol=Tolerances(**tol_kw)))
    except ParamError as exc:
        raise ConfigError(f"[network] {exc}") from None

    kw = {}
    if cp.has_section("run"):
        for key in ("seed", "steps", "samples", "generations"):
            val = rd.scalar("run", key, int)
            if val is not None:
                kw[key] = val
        delta = rd.scalar("run", "delta")
        if delta is not None:
            kw["delta"] = delta
        start = rd.floats("run", "start")
        if start is not None:
            if start.size != n:
                raise ConfigError(f"{rd.where('run', 'start')}: dimension mismatch, expected {n} values, got {start.size}")
            kw["start"] = start
        for key, name in (("command", "command"), ("format", "out_format"), ("out", "out")):
            s = rd.raw("run", key)
            if s is not None:
                kw[name] = s.strip()
    cfg = RunConfig(params, **kw)
    try:
        cfg.check()
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0]
        key = {"out_format": "format"}.get(key, key)
        if ("run", key) in lines:
            raise ConfigError(f"line {lines[('run', key)]}: {exc}") from None
        raise
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
