"""INI-style run configuration with parse-time validation.

Schema (section / key, defaults in brackets)::

    [run]       mode (optional, must match the CLI mode), workers [1]
    [geometry]  dim [2], L, lambda, delta [0.2], generator [rsa|lattice],
                seeds [0] (list "0, 1, 5" or range "0-7"),
                spacing and jitter (lattice only), L_ladder (ensemble)
    [grid]      N, or h (ensemble, fixed step), strict [true]
    [solver]    tol [1e-9], max_iter [auto], preconditioner [blockdiag|none],
                dump_fields [false], dump_dir [fields]
    [dilute]    lambdas [0.005, 0.01, 0.02]
    [twoscale]  eps [0.25, 0.125, 0.0625], sedimentation [none|constant|smooth]
    [output]    dir [out]

Errors carry the offending key and, when it appears in the file, its line.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .corrector import DEFAULT_TOL
from .errors import ConfigParseError
from .geometry import DEFAULT_MAX_FRACTION

MODES = ("effective", "dilute", "ensemble", "twoscale", "validate")
PRECONDITIONERS = ("none", "blockdiag")
GENERATORS = ("rsa", "lattice")
SEDIMENTATION = ("none", "constant", "smooth")
MAX_RESOLVED_STEP = 0.25  # h <= r/4 with r = 1

KNOWN_KEYS = {
    "run": {"mode", "workers"},
    "geometry": {"dim", "l", "lambda", "delta", "generator", "seeds", "spacing", "jitter", "l_ladder"},
    "grid": {"n", "h", "strict"},
    "solver": {"tol", "max_iter", "preconditioner", "dump_fields", "dump_dir"},
    "dilute": {"lambdas"},
    "twoscale": {"eps", "sedimentation"},
    "output": {"dir"},
}


@dataclass
class SolverConfig:
    tol: float = DEFAULT_TOL
    max_iter: int | None = None
    preconditioner: str = "blockdiag"
    dump_fields: bool = False
    dump_dir: str = "fields"


@dataclass
class RunConfig:
    mode: str
    dim: int = 2
    L: float | None = None
    lam: float = 0.0
    delta: float = 0.2
    generator: str = "rsa"
    seeds: list[int] = field(default_factory=lambda: [0])
    spacing: list[float] | None = None
    jitter: float = 0.0
    L_ladder: list[float] | None = None
    N: int | None = None
    h: float | None = None
    strict: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)
    lambdas: list[float] = field(default_factory=lambda: [0.005, 0.01, 0.02])
    eps: list[float] = field(default_factory=lambda: [0.25, 0.125, 0.0625])
    sedimentation: str = "none"
    out_dir: str = "out"
    workers: int = 1
    source: str | None = None

    def resolved(self) -> dict:
        """Plain dict of every field, for the manifest."""
        return asdict(self)


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = None
    for num, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]$", line)
        if m:
            section = m.group(1).strip().lower()
            lines.setdefault((section, ""), num)
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            lines[(section, m.group(1).strip().lower())] = num
    return lines


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, lines: dict):
        self.p = parser
        self.lines = lines

    def fail(self, section: str, key: str, message: str):
        line = self.lines.get((section, key), self.lines.get((section, "")))
        raise ConfigParseError(message, key=f"{section}.{key}", line=line)

    def raw(self, section: str, key: str) -> str | None:
        if not self.p.has_option(section, key):
            return None
        return self.p.get(section, key).strip()

    def require(self, section: str, key: str) -> str:
        val = self.raw(section, key)
        if val is None or val == "":
            self.fail(section, key, f"missing required key '{key}' in [{section}]")
        return val

    def number(self, section, key, kind=float, default=None, required=False):
        val = self.require(section, key) if required else self.raw(section, key)
        if val is None:
            return default
        try:
            out = kind(val)
        except ValueError:
            self.fail(section, key, f"'{val}' is not a valid {kind.__name__}")
        if kind is float and not math.isfinite(out):
            self.fail(section, key, f"'{val}' is not finite")
        return out

    def boolean(self, section, key, default):
        if self.raw(section, key) is None:
            return default
        try:
            return self.p.getboolean(section, key)
        except ValueError:
            self.fail(section, key, f"'{self.raw(section, key)}' is not a boolean")

    def floats(self, section, key, default=None):
        val = self.raw(section, key)
        if val is None:
            return default
        try:
            return [float(x) for x in re.split(r"[,\s]+", val) if x]
        except ValueError:
            self.fail(section, key, f"'{val}' is not a list of numbers")

    def ints(self, section, key, default=None):
        val = self.raw(section, key)
        if val is None:
            return default
        m = re.fullmatch(r"(\d+)\s*-\s*(\d+)", val)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                self.fail(section, key, f"empty range '{val}'")
            return list(range(lo, hi + 1))
        try:
            return [int(x) for x in re.split(r"[,\s]+", val) if x]
        except ValueError:
            self.fail(section, key, f"'{val}' is not a list of integers or a range 'a-b'")

    def choice(self, section, key, options, default):
        val = self.raw(section, key)
        if val is None:
            return default
        val = val.lower()
        if val not in options:
            self.fail(section, key, f"'{val}' not in {{{', '.join(options)}}}")
        return val


def parse_config(text: str, mode: str, source: str | None = None) -> RunConfig:
    """Parse and validate a configuration for ``mode``."""
    if mode not in MODES:
        raise ConfigParseError(f"unknown mode '{mode}' (expected one of {', '.join(MODES)})", key="run.mode")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigParseError("key outside of any [section]", line=exc.lineno) from exc
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigParseError(f"malformed line: {exc.errors[0][1] if exc.errors else ''}", line=line) from exc
    except configparser.Error as exc:
        raise ConfigParseError(str(exc), line=getattr(exc, "lineno", None)) from exc
    r = _Reader(parser, _key_lines(text))

    for section in parser.sections():
        if section not in KNOWN_KEYS:
            r.fail(section, "", f"unknown section [{section}]")
        for key in parser.options(section):
            if key not in KNOWN_KEYS[section]:
                r.fail(section, key, f"unknown key '{key}' in [{section}]")

    file_mode = r.raw("run", "mode")
    if file_mode is not None and file_mode.lower() != mode:
        r.fail("run", "mode", f"config is for mode '{file_mode}' but '{mode}' was requested")

    cfg = RunConfig(mode=mode, source=source)
    cfg.workers = r.number("run", "workers", int, 1)
    if cfg.workers < 1:
        r.fail("run", "workers", "workers must be >= 1")

    cfg.dim = r.number("geometry", "dim", int, 2)
    if cfg.dim not in (2, 3):
        r.fail("geometry", "dim", f"dim must be 2 or 3, got {cfg.dim}")
    cfg.delta = r.number("geometry", "delta", float, 0.2)
    if not 0.0 < cfg.delta < 1.0:
        r.fail("geometry", "delta", f"delta must lie in (0, 1), got {cfg.delta}")
    cfg.generator = r.choice("geometry", "generator", GENERATORS, "rsa")
    cfg.seeds = r.ints("geometry", "seeds", [0])
    if not cfg.seeds or any(s < 0 for s in cfg.seeds):
        r.fail("geometry", "seeds", "seeds must be a non-empty list of non-negative integers")
    cfg.jitter = r.number("geometry", "jitter", float, 0.0)
    if cfg.jitter < 0:
        r.fail("geometry", "jitter", "jitter must be >= 0")
    cfg.spacing = r.floats("geometry", "spacing")

    limit = DEFAULT_MAX_FRACTION[cfg.dim]
    if mode == "dilute":
        cfg.lambdas = r.floats("dilute", "lambdas", cfg.lambdas)
        if not cfg.lambdas or any(not 0.0 < x <= 0.05 for x in cfg.lambdas):
            r.fail("dilute", "lambdas", "dilute fractions must lie in (0, 0.05]")
    elif cfg.generator == "rsa":
        cfg.lam = r.number("geometry", "lambda", float, required=True)
        if not 0.0 <= cfg.lam <= limit:
            r.fail("geometry", "lambda", f"lambda must lie in [0, {limit}], got {cfg.lam}")

    if mode == "ensemble":
        cfg.L_ladder = r.floats("geometry", "l_ladder")
        if cfg.L_ladder is None:
            r.require("geometry", "l_ladder")
        if any(x <= 0 for x in cfg.L_ladder):
            r.fail("geometry", "l_ladder", "cell lengths must be positive")
        if len(cfg.seeds) < 2:
            r.fail("geometry", "seeds", "ensemble mode needs at least two seeds")
        cfg.h = r.number("grid", "h", float, required=True)
        if not 0.0 < cfg.h <= MAX_RESOLVED_STEP:
            r.fail("grid", "h", f"h must lie in (0, {MAX_RESOLVED_STEP}]")
        for L in cfg.L_ladder:
            n = L / cfg.h
            if abs(n - round(n)) > 1e-9 * n or round(n) < 4:
                r.fail("grid", "h", f"h = {cfg.h} must divide L = {L} into at least 4 cells")
    elif mode != "dilute":
        cfg.L = r.number("geometry", "l", float, required=True)
        if cfg.L <= 0:
            r.fail("geometry", "l", "L must be positive")
    if mode != "ensemble":
        cfg.N = r.number("grid", "n", int, required=True)
        if cfg.N < 4:
            r.fail("grid", "n", f"N must be >= 4, got {cfg.N}")
        if cfg.L is not None and cfg.L / cfg.N > MAX_RESOLVED_STEP:
            r.fail("grid", "n", f"h = L/N = {cfg.L / cfg.N:g} exceeds {MAX_RESOLVED_STEP} (inclusion radius / 4)")
    cfg.strict = r.boolean("grid", "strict", True)
    empty = cfg.generator == "rsa" and mode != "dilute" and cfg.lam == 0.0
    if cfg.strict and not empty:
        step = cfg.h if cfg.h is not None else (cfg.L / cfg.N if cfg.L is not None else None)
        if step is not None and step > cfg.delta / 2 + 1e-12:
            r.fail("grid", "strict", f"strict resolution needs h <= delta/2 = {cfg.delta / 2:g}, h = {step:g}")

    if cfg.generator == "lattice" and mode not in ("dilute",):
        if cfg.spacing is None:
            r.require("geometry", "spacing")
        if len(cfg.spacing) not in (1, cfg.dim) or any(s <= 0 for s in cfg.spacing):
            r.fail("geometry", "spacing", f"spacing needs 1 or {cfg.dim} positive values")
        needed = 2.0 + cfg.delta + 2.0 * cfg.jitter
        if min(cfg.spacing) < needed:
            r.fail("geometry", "spacing", f"spacing below 2 + delta + 2*jitter = {needed:g}")

    if mode == "twoscale":
        cfg.eps = r.floats("twoscale", "eps", cfg.eps)
        if not cfg.eps or any(e <= 0 for e in cfg.eps) or any(b >= a for a, b in zip(cfg.eps, cfg.eps[1:])):
            r.fail("twoscale", "eps", "eps ladder must be positive and strictly decreasing")
        for e in cfg.eps:
            m = cfg.N / (e * cfg.L)
            if abs(m - round(m)) > 1e-9 * m:
                r.fail("twoscale", "eps", f"eps = {e} does not align the box grid with the cell grid")
        cfg.sedimentation = r.choice("twoscale", "sedimentation", SEDIMENTATION, "none")

    s = cfg.solver
    s.tol = r.number("solver", "tol", float, DEFAULT_TOL)
    if not 0.0 < s.tol < 1.0:
        r.fail("solver", "tol", "tol must lie in (0, 1)")
    s.max_iter = r.number("solver", "max_iter", int, None)
    if s.max_iter is not None and s.max_iter < 1:
        r.fail("solver", "max_iter", "max_iter must be >= 1")
    s.preconditioner = r.choice("solver", "preconditioner", PRECONDITIONERS, "blockdiag")
    s.dump_fields = r.boolean("solver", "dump_fields", False)
    s.dump_dir = r.raw("solver", "dump_dir") or "fields"
    cfg.out_dir = r.raw("output", "dir") or "out"
    return cfg


def load_config(path: str | Path, mode: str) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read config file {path}: {exc.strerror}") from exc
    return parse_config(text, mode, source=str(path))
