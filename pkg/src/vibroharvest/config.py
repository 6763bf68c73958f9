"""INI run configuration for the command-line pipelines.

Values may be plain numbers or arithmetic in ``pi`` (``pi/4``, ``5*pi``).
Every validation error names the section, key and line it came from.

Sections
--------
[physical]   A, M, s, omega, beta, mu_k, r, m, g, phi; optional ``d`` sets
             the length through ``vary`` (``A`` or ``s``)
[sweep]      parameter (A, s or d), start, stop, points, direction
             (down, up or both), transient, record, carry, wall_rest,
             mu_values, refine
[simulate]   horizon, transient, t0, Z0, Zdot0, samples_per_period, wall_rest,
             A_values
[solver]     itinerary, d (one or more), tol, seed_from
[branch.*]   itinerary, start, stop, step, seed_d, kinds, through_pd, through_fold,
             mu_values
[energy]     U_in, R_c, R_b, K, nu, angle_model
[output]     dir, formats
"""
from __future__ import annotations

import ast
import configparser
import math
import operator
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .energy import EnergyParams
from .model import ParamFamily, ParameterError, PhysicalParams

BIFURCATION_KINDS = ("pd", "fold", "grazing_sliding", "switching_sliding", "crossing_sliding",
                     "gamma_plus", "gamma_minus")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def eval_number(text: str) -> float:
    """Evaluate a numeric literal or arithmetic expression in ``pi``."""
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        raise ValueError(f"unsupported expression {text!r}")

    try:
        return float(ev(ast.parse(text.strip(), mode="eval")))
    except (SyntaxError, ZeroDivisionError) as exc:
        raise ValueError(f"cannot evaluate {text!r}") from exc


@dataclass
class SweepConfig:
    parameter: str = "d"
    start: float = 0.30
    stop: float = 0.20
    points: int = 200
    direction: str = "down"
    transient: int = 200
    record: int = 30
    carry: bool = True
    wall_rest: bool = False
    mu_values: Optional[List[float]] = None
    refine: List[Tuple[float, float, int]] = field(default_factory=list)


@dataclass
class SimulateConfig:
    horizon: float = 20.0
    transient: int = 0
    t0: float = 0.0
    Z0: float = 0.0
    Zdot0: float = 0.0
    samples_per_period: int = 400
    wall_rest: bool = False
    A_values: Optional[List[float]] = None


@dataclass
class SolverConfig:
    itineraries: List[str] = field(default_factory=lambda: ["1:1"])
    d: Optional[List[float]] = None
    tol: float = 1e-10
    seed_from: str = "simulate"


@dataclass
class BranchConfig:
    name: str
    itinerary: str
    start: float
    stop: float
    step: float = 1e-3
    seed_d: Optional[float] = None
    kinds: List[str] = field(default_factory=list)
    through_pd: bool = False
    through_fold: bool = False
    mu_values: Optional[List[float]] = None


@dataclass
class RunConfig:
    """Everything one CLI invocation needs."""

    physical: PhysicalParams
    vary: str = "A"
    d: Optional[float] = None
    sweep: Optional[SweepConfig] = None
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    branches: List[BranchConfig] = field(default_factory=list)
    energy: Optional[EnergyParams] = None
    out_dir: str = "out"
    formats: Tuple[str, ...] = ("csv",)
    source: str = "<string>"

    def family(self, mu_k: Optional[float] = None) -> ParamFamily:
        """Family in ``d`` around the physical block, optionally at another friction."""
        base = self.physical
        if mu_k is not None:
            base = replace(base, mu_k=mu_k)
        vary = self.vary
        if self.sweep is not None and self.sweep.parameter in ("A", "s"):
            vary = self.sweep.parameter
        return ParamFamily(base, vary)

    def point_d(self) -> float:
        """Dimensionless length set by the physical block."""
        if self.d is not None:
            return self.d
        p = self.physical
        return p.M * p.omega**2 * p.s / (p.A * math.pi**2)

    def solve_points(self) -> List[float]:
        """Lengths at which ``solve`` looks for orbits."""
        return list(self.solver.d) if self.solver.d else [self.point_d()]

    def sweep_d_values(self, direction: str) -> np.ndarray:
        """Sweep grid converted to ``d`` and ordered for ``direction`` (up or down)."""
        sw = self.sweep
        if sw is None:
            raise ConfigError(f"{self.source}: no [sweep] section")
        vals = list(np.linspace(sw.start, sw.stop, sw.points))
        for a, b, n in sw.refine:
            vals.extend(np.linspace(a, b, n))
        vals = np.unique(np.asarray(vals, dtype=float))
        p = self.physical
        k = p.M * p.omega**2 / math.pi**2
        if sw.parameter == "A":
            ds = k * p.s / vals
        elif sw.parameter == "s":
            ds = k * vals / p.A
        else:
            ds = vals
        ds = np.unique(ds)
        return ds if direction == "up" else ds[::-1]

    def directions(self) -> List[str]:
        if self.sweep is None:
            return []
        return ["down", "up"] if self.sweep.direction == "both" else [self.sweep.direction]

    def mu_values(self) -> List[float]:
        if self.sweep is not None and self.sweep.mu_values:
            return list(self.sweep.mu_values)
        return [self.physical.mu_k]


# ------------------------------------------------------------------ parsing

class _Reader:
    """Typed access to one section that reports the source line on error."""

    def __init__(self, cp: configparser.ConfigParser, section: str, lines: Dict[Tuple[str, str], int],
                 source: str):
        self.cp, self.section, self.lines, self.source = cp, section, lines, source

    def where(self, key: str) -> str:
        line = self.lines.get((self.section, key))
        at = f":{line}" if line else ""
        return f"{self.source}{at}: [{self.section}] {key}"

    def has(self, key: str) -> bool:
        return self.cp.has_option(self.section, key)

    def raw(self, key: str) -> str:
        return self.cp.get(self.section, key).strip()

    def number(self, key: str, default=None, positive=False, nonneg=False) -> Optional[float]:
        if not self.has(key):
            return default
        try:
            v = eval_number(self.raw(key))
        except ValueError as exc:
            raise ConfigError(f"{self.where(key)}: {exc}") from None
        if positive and not v > 0:
            raise ConfigError(f"{self.where(key)}: must be positive, got {v}")
        if nonneg and v < 0:
            raise ConfigError(f"{self.where(key)}: must be nonnegative, got {v}")
        return v

    def integer(self, key: str, default: int, minimum: int = 0) -> int:
        if not self.has(key):
            return default
        text = self.raw(key)
        try:
            v = int(text)
        except ValueError:
            raise ConfigError(f"{self.where(key)}: expected an integer, got {text!r}") from None
        if v < minimum:
            raise ConfigError(f"{self.where(key)}: must be at least {minimum}, got {v}")
        return v

    def boolean(self, key: str, default: bool) -> bool:
        if not self.has(key):
            return default
        try:
            return self.cp.getboolean(self.section, key)
        except ValueError:
            raise ConfigError(f"{self.where(key)}: expected yes/no, got {self.raw(key)!r}") from None

    def choice(self, key: str, default: str, options) -> str:
        if not self.has(key):
            return default
        v = self.raw(key)
        if v not in options:
            raise ConfigError(f"{self.where(key)}: {v!r} not one of {', '.join(options)}")
        return v

    def words(self, key: str, default=None) -> Optional[List[str]]:
        if not self.has(key):
            return default
        return [w.strip() for w in self.raw(key).split(",") if w.strip()]

    def numbers(self, key: str) -> Optional[List[float]]:
        items = self.words(key)
        if items is None:
            return None
        try:
            return [eval_number(w) for w in items]
        except ValueError as exc:
            raise ConfigError(f"{self.where(key)}: {exc}") from None

    def check_unknown(self, allowed) -> None:
        for key in self.cp.options(self.section):
            if key not in allowed:
                raise ConfigError(f"{self.where(key)}: unknown key")


def _line_index(text: str) -> Dict[Tuple[str, str], int]:
    out: Dict[Tuple[str, str], int] = {}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"^([A-Za-z_][\w.]*)\s*[=:]", s)
        if m and section is not None:
            out.setdefault((section, m.group(1)), n)
    return out


_PHYSICAL_KEYS = ("A", "M", "s", "omega", "beta", "mu_k", "r", "m", "g", "phi", "d", "vary")
_SWEEP_KEYS = ("parameter", "start", "stop", "points", "direction", "transient", "record", "carry",
               "wall_rest", "mu_values", "refine")
_SIM_KEYS = ("horizon", "transient", "t0", "Z0", "Zdot0", "samples_per_period", "wall_rest", "A_values")
_SOLVER_KEYS = ("itinerary", "d", "tol", "seed_from")
_BRANCH_KEYS = ("itinerary", "start", "stop", "step", "seed_d", "kinds", "through_pd", "through_fold",
                "mu_values")
_ENERGY_KEYS = ("U_in", "R_c", "R_b", "K", "nu", "angle_model")
_OUTPUT_KEYS = ("dir", "formats")
_SECTIONS = ("physical", "sweep", "simulate", "solver", "energy", "output")


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse and validate INI text."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str  # keys are case sensitive (A vs a)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _line_index(text)
    for sec in cp.sections():
        if sec not in _SECTIONS and not sec.startswith("branch."):
            line = next((n for n, s in enumerate(text.splitlines(), 1) if s.strip() == f"[{sec}]"), None)
            raise ConfigError(f"{source}:{line}: unknown section [{sec}]")
    if not cp.has_section("physical"):
        raise ConfigError(f"{source}: missing [physical] section")

    ph = _Reader(cp, "physical", lines, source)
    ph.check_unknown(_PHYSICAL_KEYS)
    d = ph.number("d", positive=True)
    vary = ph.choice("vary", "A", ("A", "s"))
    A = ph.number("A", None, positive=True)
    if A is None and (d is None or vary == "s"):
        raise ConfigError(f"{source}: [physical] needs A (or d with vary = A)")
    kw = {}
    for key in ("M", "s", "omega", "m", "g"):
        v = ph.number(key, positive=True)
        if v is not None:
            kw[key] = v
    for key in ("beta", "mu_k", "r", "phi"):
        v = ph.number(key)
        if v is not None:
            kw[key] = v
    try:
        phys = PhysicalParams(A=A if A is not None else 1.0, **kw)
        if d is not None:
            phys = phys.with_d(d, vary)
    except ParameterError as exc:
        raise ConfigError(f"{source}: [physical] {exc}") from None

    cfg = RunConfig(phys, vary=vary, d=d, source=source)

    if cp.has_section("sweep"):
        sw = _Reader(cp, "sweep", lines, source)
        sw.check_unknown(_SWEEP_KEYS)
        if not sw.has("parameter"):
            raise ConfigError(f"{source}: [sweep] needs exactly one swept parameter (A, s or d)")
        s = SweepConfig(
            parameter=sw.choice("parameter", "d", ("A", "s", "d")),
            start=sw.number("start", positive=True),
            stop=sw.number("stop", positive=True),
            points=sw.integer("points", 200, minimum=1),
            direction=sw.choice("direction", "down", ("down", "up", "both")),
            transient=sw.integer("transient", 200),
            record=sw.integer("record", 30, minimum=1),
            carry=sw.boolean("carry", True),
            wall_rest=sw.boolean("wall_rest", False),
            mu_values=sw.numbers("mu_values"),
        )
        if s.start is None or s.stop is None:
            raise ConfigError(f"{source}: [sweep] needs start and stop")
        if s.points > 1 and s.start == s.stop:
            raise ConfigError(f"{sw.where('stop')}: empty range")
        if s.mu_values is not None and any(m < 0 for m in s.mu_values):
            raise ConfigError(f"{sw.where('mu_values')}: friction must be nonnegative")
        for item in sw.words("refine", []):
            parts = item.split(":")
            try:
                a, b, n = eval_number(parts[0]), eval_number(parts[1]), int(parts[2])
            except (ValueError, IndexError):
                raise ConfigError(f"{sw.where('refine')}: expected start:stop:points, got {item!r}") from None
            if n < 1 or not (a > 0 and b > 0):
                raise ConfigError(f"{sw.where('refine')}: bad refinement {item!r}")
            s.refine.append((a, b, n))
        cfg.sweep = s

    if cp.has_section("simulate"):
        sm = _Reader(cp, "simulate", lines, source)
        sm.check_unknown(_SIM_KEYS)
        cfg.simulate = SimulateConfig(
            horizon=sm.number("horizon", 20.0, nonneg=True),
            transient=sm.integer("transient", 0),
            t0=sm.number("t0", 0.0),
            Z0=sm.number("Z0", 0.0),
            Zdot0=sm.number("Zdot0", 0.0),
            samples_per_period=sm.integer("samples_per_period", 400, minimum=1),
            wall_rest=sm.boolean("wall_rest", False),
            A_values=sm.numbers("A_values"),
        )
        if cfg.simulate.A_values is not None and any(a <= 0 for a in cfg.simulate.A_values):
            raise ConfigError(f"{sm.where('A_values')}: amplitudes must be positive")

    if cp.has_section("solver"):
        so = _Reader(cp, "solver", lines, source)
        so.check_unknown(_SOLVER_KEYS)
        cfg.solver = SolverConfig(
            itineraries=so.words("itinerary", ["1:1"]),
            d=so.numbers("d"),
            tol=so.number("tol", 1e-10, positive=True),
            seed_from=so.choice("seed_from", "simulate", ("simulate", "grid")),
        )
        if cfg.solver.d is not None and any(v <= 0 for v in cfg.solver.d):
            raise ConfigError(f"{so.where('d')}: lengths must be positive")

    for sec in cp.sections():
        if not sec.startswith("branch."):
            continue
        br = _Reader(cp, sec, lines, source)
        br.check_unknown(_BRANCH_KEYS)
        if not (br.has("itinerary") and br.has("start") and br.has("stop")):
            raise ConfigError(f"{source}: [{sec}] needs itinerary, start and stop")
        kinds = br.words("kinds", [])
        for k in kinds:
            if k not in BIFURCATION_KINDS:
                raise ConfigError(f"{br.where('kinds')}: {k!r} not one of {', '.join(BIFURCATION_KINDS)}")
        cfg.branches.append(BranchConfig(
            name=sec[len("branch."):], itinerary=br.raw("itinerary"),
            start=br.number("start", positive=True), stop=br.number("stop", positive=True),
            step=br.number("step", 1e-3, positive=True), seed_d=br.number("seed_d", None, positive=True),
            kinds=kinds, through_pd=br.boolean("through_pd", False),
            through_fold=br.boolean("through_fold", False), mu_values=br.numbers("mu_values")))

    if cp.has_section("energy"):
        en = _Reader(cp, "energy", lines, source)
        en.check_unknown(_ENERGY_KEYS)
        kw = {k: en.number(k, positive=True) for k in ("U_in", "R_c", "R_b", "K", "nu") if en.has(k)}
        kw["angle_model"] = en.choice("angle_model", "table", ("table", "tangent"))
        cfg.energy = EnergyParams(m=phys.m, **kw)

    if cp.has_section("output"):
        out = _Reader(cp, "output", lines, source)
        out.check_unknown(_OUTPUT_KEYS)
        if out.has("dir"):
            cfg.out_dir = out.raw("dir")
        fm = tuple(out.words("formats", ["csv"]))
        for f in fm:
            if f != "csv":
                raise ConfigError(f"{out.where('formats')}: only csv output is supported, got {f!r}")
        cfg.formats = fm
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))
