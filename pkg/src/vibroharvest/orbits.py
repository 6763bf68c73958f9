"""Periodic orbits as roots of reduced event-map systems.

An orbit is described by an itinerary, the ordered list of maps between
the walls (bottom ``G+`` at ``Z = d/2``, top ``G-`` at ``Z = -d/2``) and
the switching surface ``S`` (``Z' = 0``). Unknowns are the pre-impact
velocity at the bottom wall, the forcing phase there (time is shifted so
the impact happens at ``t = 0``) and the leg durations, the last of which
is implied by the period.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .flow import (Event, EventKind, Region, RelState, SimulationError, critical_times,
                   initial_state, segment_eval, simulate, steady_state_impacts)
from .model import NondimParams, wrap_angle

TOL_RESIDUAL = 1e-10
TOL_GEOMETRY = 1e-10
NEAR_GRAZING = 1e-6


class NoConvergence(RuntimeError):
    """Raised when Newton iterations fail to reach the residual tolerance."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class UnknownItinerary(ValueError):
    pass


class LegKind(str, Enum):
    GP_GM = "P_G+G-"
    GM_GP = "P_G-G+"
    GP_S = "P_G+S"
    GM_S = "P_G-S"
    S_GP = "P_SG+"
    S_GM = "P_SG-"
    SS_PLUS = "P+_SS"
    SS_MINUS = "P-_SS"
    SS_SLIDE = "Ps_SS"


# source surface, target surface, region of motion
LEG_INFO: Dict[LegKind, Tuple[str, str, Region]] = {
    LegKind.GP_GM: ("G+", "G-", Region.SIGMA_MINUS),
    LegKind.GM_GP: ("G-", "G+", Region.SIGMA_PLUS),
    LegKind.GP_S: ("G+", "S", Region.SIGMA_MINUS),
    LegKind.GM_S: ("G-", "S", Region.SIGMA_PLUS),
    LegKind.S_GP: ("S", "G+", Region.SIGMA_PLUS),
    LegKind.S_GM: ("S", "G-", Region.SIGMA_MINUS),
    LegKind.SS_PLUS: ("S", "S", Region.SIGMA_PLUS),
    LegKind.SS_MINUS: ("S", "S", Region.SIGMA_MINUS),
    LegKind.SS_SLIDE: ("S", "S", Region.SLIDING),
}

UPWARD: Dict[str, Tuple[LegKind, ...]] = {
    "": (LegKind.GP_GM,),
    "s": (LegKind.GP_S, LegKind.SS_SLIDE, LegKind.S_GM),
    "c": (LegKind.GP_S, LegKind.SS_PLUS, LegKind.S_GM),
    "cs": (LegKind.GP_S, LegKind.SS_PLUS, LegKind.SS_SLIDE, LegKind.S_GM),
}

_LABEL_RE = re.compile(r"^1:1(s|c|cs)?(?:-1:1(s|c|cs)?)?(/2T)?$")


@dataclass(frozen=True)
class Itinerary:
    """Ordered legs of a periodic orbit starting and ending on the bottom wall."""

    label: str
    legs: Tuple[LegKind, ...]
    p: int = 1
    halves: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.legs:
            raise UnknownItinerary("an itinerary needs at least one leg")
        if LEG_INFO[self.legs[0]][0] != "G+" or LEG_INFO[self.legs[-1]][1] != "G+":
            raise UnknownItinerary("itinerary must start and end on the bottom wall")
        for a, b in zip(self.legs, self.legs[1:]):
            if LEG_INFO[a][1] != LEG_INFO[b][0]:
                raise UnknownItinerary(f"legs {a.value} and {b.value} do not compose")
            if a is LegKind.SS_SLIDE and b is LegKind.SS_SLIDE:
                raise UnknownItinerary("consecutive sliding legs")
        for a, b in zip(self.legs, self.legs[1:]):
            if LEG_INFO[a][0] in ("G+", "G-") and b is LegKind.SS_SLIDE and LEG_INFO[a][1] != "S":
                raise UnknownItinerary("sliding must follow an arrival on the switching surface")

    @classmethod
    def from_label(cls, label: str) -> "Itinerary":
        """Build an itinerary from labels such as ``1:1``, ``1:1cs`` or ``1:1-1:1s/2T``."""
        m = _LABEL_RE.match(label.strip())
        if not m:
            raise UnknownItinerary(f"unsupported itinerary label {label!r}")
        first, second, doubled = m.group(1) or "", m.group(2), m.group(3)
        if second is not None or "-1:1" in label:
            if not doubled:
                raise UnknownItinerary(f"composite label {label!r} needs the /2T suffix")
            halves = (first, second or "")
        elif doubled:
            halves = (first, first)
        else:
            halves = (first,)
        legs: List[LegKind] = []
        for h in halves:
            legs.extend(UPWARD[h])
            legs.append(LegKind.GM_GP)
        return cls(label.strip(), tuple(legs), len(halves), halves)

    @property
    def n_unknowns(self) -> int:
        return len(self.legs) + 1

    def s_indicator(self) -> List[int]:
        """Zero on sliding legs, one elsewhere."""
        return [0 if leg is LegKind.SS_SLIDE else 1 for leg in self.legs]

    def expected_events(self) -> List[EventKind]:
        """Event kinds that end each leg, as the simulator would log them."""
        out = []
        for i, leg in enumerate(self.legs):
            tgt = LEG_INFO[leg][1]
            if leg is LegKind.SS_SLIDE:
                out.append(EventKind.SLIDE_END)
            elif tgt == "G+":
                out.append(EventKind.IMPACT_BOTTOM)
            elif tgt == "G-":
                out.append(EventKind.IMPACT_TOP)
            else:
                nxt = self.legs[i + 1]
                if nxt is LegKind.SS_SLIDE:
                    out.append(EventKind.SLIDE_START)
                elif LEG_INFO[nxt][2] is Region.SIGMA_PLUS:
                    out.append(EventKind.CROSS_UP)
                else:
                    out.append(EventKind.CROSS_DOWN)
        return out


@dataclass
class Walk:
    """Node data produced by following the legs for a given unknown vector."""

    times: np.ndarray
    Z: np.ndarray
    v_in: np.ndarray
    v_out: np.ndarray
    dts: np.ndarray
    residual: np.ndarray


def _unpack(x: Sequence[float], itin: Itinerary, T: float) -> Tuple[float, float, np.ndarray]:
    x = np.asarray(x, dtype=float)
    if x.size != itin.n_unknowns:
        raise ValueError(f"{itin.label} expects {itin.n_unknowns} unknowns, got {x.size}")
    dts = np.append(x[2:], itin.p * T - np.sum(x[2:]))
    return float(x[0]), float(x[1]), dts


def walk(x: Sequence[float], itin: Itinerary, params: NondimParams) -> Walk:
    """Follow every leg from the bottom wall and collect end conditions.

    One residual per leg (wall position, zero velocity or sliding-exit
    phase) plus the periodicity of the bottom impact velocity.
    """
    Zd0, phi, dts = _unpack(x, itin, params.T)
    half = 0.5 * params.d
    r = params.r
    n = len(itin.legs)
    times = np.zeros(n + 1)
    Z = np.zeros(n + 1)
    v_in = np.zeros(n + 1)
    v_out = np.zeros(n + 1)
    res = np.zeros(n + 1)
    Z[0], v_in[0], v_out[0] = half, Zd0, -r * Zd0
    exit_phase = params.slide_exit_phase
    t, z, v = 0.0, half, -r * Zd0
    for j, (leg, dt) in enumerate(zip(itin.legs, dts)):
        src, tgt, region = LEG_INFO[leg]
        t1 = t + dt
        if region is Region.SLIDING:
            res[j] = float(wrap_angle(math.pi * t1 + phi - exit_phase))
            z1, v1 = z, 0.0
        else:
            L = params.L_plus if region is Region.SIGMA_PLUS else params.L_minus
            z1, v1 = segment_eval(t, z, v, L, phi, t1)
            z1, v1 = float(z1), float(v1)
            if tgt == "G+":
                res[j] = z1 - half
            elif tgt == "G-":
                res[j] = z1 + half
            else:
                res[j] = v1
        times[j + 1] = t1
        Z[j + 1] = z1
        v_in[j + 1] = v1
        if tgt == "G+":
            z, v = half, -r * v1
        elif tgt == "G-":
            z, v = -half, -r * v1
        else:
            z, v = z1, 0.0
        v_out[j + 1] = v
        t = t1
    res[n] = v_in[n] - Zd0
    return Walk(times, Z, v_in, v_out, dts, res)


def residual_generic(x: Sequence[float], itin: Itinerary, params: NondimParams) -> np.ndarray:
    """Shooting residual for any itinerary."""
    return walk(x, itin, params).residual


def _F(phi: float):
    def F1(t):
        return math.sin(math.pi * t + phi) / math.pi

    def F2(t):
        return -math.cos(math.pi * t + phi) / math.pi**2

    return F1, F2


def residual_1_1(x: Sequence[float], params: NondimParams) -> np.ndarray:
    """Reduced system for the orbit with one impact on each wall per period.

    ``x = (Zdot, phi, dt_up)``; the downward duration is ``T - dt_up``.
    """
    Zd, phi, dt0 = (float(v) for v in x)
    F1, F2 = _F(phi)
    r, d, Lp, Lm = params.r, params.d, params.L_plus, params.L_minus
    t0, t1 = 0.0, dt0
    dtk = params.T - dt0
    e1 = -r * Zd * dt0 + F2(t1) - F2(t0) - F1(t0) * dt0 - Lm * dt0**2 / 2 + d
    e2 = (r**2 * Zd * dtk - (r + 1) * F1(t1) * dtk + r * F1(t0) * dtk + F2(t0) - F2(t1)
          + r * Lm * dt0 * dtk - Lp * dtk**2 / 2 - d)
    e3 = Zd - (-(r + 1) * (F1(t1) - F1(t0)) + r * Lm * dt0 - Lp * dtk) / (1 - r**2)
    return np.array([e1, e2, e3])


def residual_1_1_s(x: Sequence[float], params: NondimParams) -> np.ndarray:
    """Reduced system for the orbit that slides once on the way up.

    ``x = (Zdot, phi, dt0, dt1, dt2)``: travel to the switching surface,
    sliding, travel to the top wall.
    """
    Zd, phi, dt0, dt1, dt2 = (float(v) for v in x)
    F1, F2 = _F(phi)
    r, d, Lp, Lm = params.r, params.d, params.L_plus, params.L_minus
    t0 = 0.0
    t1 = t0 + dt0
    t2 = t1 + dt1
    t3 = t2 + dt2
    dtk = params.T - (dt0 + dt1 + dt2)
    e1 = -r * Zd + F1(t1) - F1(t0) - Lm * dt0
    e2 = float(wrap_angle(math.pi * t2 + phi - params.slide_exit_phase))
    e3 = d + (-r * Zd * dt0 + F2(t1) - F2(t0) - F1(t0) * dt0 - Lm * dt0**2 / 2
              + F2(t3) - F2(t2) - F1(t2) * dt2 - Lm * dt2**2 / 2)
    e4 = (-(r + 1) * dtk * F1(t3) + r * dtk * F1(t2) + r * dtk * Lm * dt2 + F2(t0) - F2(t3)
          - Lp * dtk**2 / 2 - d)
    e5 = -(r + 1) * F1(t3) + r * F1(t2) + r * Lm * dt2 + F1(t0) - Lp * dtk - Zd
    return np.array([e1, e2, e3, e4, e5])


def residual_1_1_c(x: Sequence[float], params: NondimParams) -> np.ndarray:
    """Reduced system for the orbit that crosses into ``Z' > 0`` and back on the way up."""
    Zd, phi, dt0, dt1, dt2 = (float(v) for v in x)
    F1, F2 = _F(phi)
    r, d, Lp, Lm = params.r, params.d, params.L_plus, params.L_minus
    t0 = 0.0
    t1 = t0 + dt0
    t2 = t1 + dt1
    t3 = t2 + dt2
    dtk = params.T - (dt0 + dt1 + dt2)
    a = -r * Zd + F1(t1) - F1(t0) - Lm * dt0
    b = F1(t2) - F1(t1) - Lp * dt1
    c = d + (-r * Zd * dt0 - F2(t0) - F1(t0) * dt0 - Lm * dt0**2 / 2
             - F1(t1) * dt1 - Lp * dt1**2 / 2 + F2(t3) - F1(t2) * dt2 - Lm * dt2**2 / 2)
    e = (-(r + 1) * dtk * F1(t3) + r * dtk * F1(t2) + r * dtk * Lm * dt2 + F2(t0) - F2(t3)
         - Lp * dtk**2 / 2 - d)
    g = -(r + 1) * F1(t3) + r * F1(t2) + r * Lm * dt2 + F1(t0) - Lp * dtk - Zd
    return np.array([a, b, c, e, g])


def residual_1_1_cs(x: Sequence[float], params: NondimParams) -> np.ndarray:
    """Reduced system for the orbit that crosses, returns and then slides on the way up."""
    Zd, phi, dt0, dt1, dt2, dt3 = (float(v) for v in x)
    F1, F2 = _F(phi)
    r, d, Lp, Lm = params.r, params.d, params.L_plus, params.L_minus
    t0 = 0.0
    t1 = t0 + dt0
    t2 = t1 + dt1
    t3 = t2 + dt2
    t4 = t3 + dt3
    dtk = params.T - (dt0 + dt1 + dt2 + dt3)
    A = -r * Zd + F1(t1) - F1(t0) - Lm * dt0
    B = F1(t2) - F1(t1) - Lp * dt1
    C = float(wrap_angle(math.pi * t3 + phi - params.slide_exit_phase))
    D = d + (-r * Zd * dt0 - F2(t0) - F1(t0) * dt0 - Lm * dt0**2 / 2
             + F2(t2) - F1(t1) * dt1 - Lp * dt1**2 / 2
             + F2(t4) - F2(t3) - F1(t3) * dt3 - Lm * dt3**2 / 2)
    E = (-(r + 1) * dtk * F1(t4) + r * F1(t3) * dtk + F2(t0) - F2(t4)
         + r * dtk * Lm * dt3 - Lp * dtk**2 / 2 - d)
    F = -(r + 1) * F1(t4) + r * F1(t3) + r * Lm * dt3 + F1(t0) - Lp * dtk - Zd
    return np.array([A, B, C, D, E, F])


def residual_2T(x: Sequence[float], params: NondimParams, itin: Itinerary) -> np.ndarray:
    """Stacked system for orbits repeating every two forcing periods.

    The walk closes after both halves, so the bottom impact velocity and
    the forcing antiderivatives coincide at the first and fifth impacts.
    """
    if itin.p != 2:
        raise UnknownItinerary(f"{itin.label} is not a two-period itinerary")
    return residual_generic(x, itin, params)


def residual_1_1_qform(x: Sequence[float], params: NondimParams) -> np.ndarray:
    """Alternative form of the 1:1 system in ``(Zdot, q, phi)`` with ``dt_up = q T``."""
    Zd, q, phi = (float(v) for v in x)
    F1, F2 = _F(phi)
    r, d, Lp, Lm, T = params.r, params.d, params.L_plus, params.L_minus, params.T
    du, dd = q * T, (1.0 - q) * T
    t0, t1 = 0.0, du
    e1 = F1(t1) - F1(t0) - ((r - 1) * Zd + (-Lp * dd + r * Lm * du) / (1 + r))
    e2 = (r * du - dd) * Zd - (-T * F1(t0) - Lm * du**2 / 2 + Lp * dd**2 / 2)
    e3 = F2(t1) - F2(t0) - (-d + du * dd / (2 * T) * (Lp * dd + Lm * du + 2 * (1 + r) * Zd))
    return np.array([e1, e2, e3])


_REDUCED: Dict[str, Callable[[Sequence[float], NondimParams], np.ndarray]] = {
    "1:1": residual_1_1,
    "1:1s": residual_1_1_s,
    "1:1c": residual_1_1_c,
    "1:1cs": residual_1_1_cs,
}


def residual_for(itin: Itinerary) -> Callable[[Sequence[float], NondimParams], np.ndarray]:
    """Defining system used by the solver for ``itin``."""
    if itin.p == 1 and itin.label in _REDUCED:
        return _REDUCED[itin.label]
    if itin.p == 2:
        return lambda x, params: residual_2T(x, params, itin)
    return lambda x, params: residual_generic(x, itin, params)


def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-7) -> np.ndarray:
    """Central-difference Jacobian."""
    x = np.asarray(x, dtype=float)
    f0 = fun(x)
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return J


def newton(fun: Callable[[np.ndarray], np.ndarray], x0: Sequence[float], tol: float = TOL_RESIDUAL,
           max_iter: int = 100, fd_step: float = 1e-7, min_step: float = 1e-12) -> Tuple[np.ndarray, float, bool]:
    """Damped Newton iteration with Armijo backtracking on the residual norm.

    Returns ``(x, residual_norm, converged)``; iterates past ``tol`` while
    the residual keeps dropping so solutions sit well inside tolerance.
    """
    x = np.asarray(x0, dtype=float).copy()
    F = fun(x)
    nrm = float(np.linalg.norm(F))
    if not np.isfinite(nrm):
        return x, nrm, False
    for _ in range(max_iter):
        if nrm <= tol * 1e-3:
            break
        J = fd_jacobian(fun, x, fd_step)
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(J, -F, rcond=None)[0]
        if not np.all(np.isfinite(dx)):
            break
        lam = 1.0
        accepted = False
        while lam >= min_step:
            xn = x + lam * dx
            Fn = fun(xn)
            nn = float(np.linalg.norm(Fn))
            if np.isfinite(nn) and nn <= (1.0 - 1e-4 * lam) * nrm:
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            break
        progress = nrm - nn
        x, F, nrm = xn, Fn, nn
        if nrm <= tol and progress <= 1e-3 * nrm:
            break
    return x, nrm, nrm <= tol


@dataclass(frozen=True)
class Violation:
    """A broken physical assumption with the time and value that witness it."""

    code: str
    leg: int
    t: float
    value: float
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.code}@leg{self.leg}(t={self.t:.6g},{self.value:.3g})"


@dataclass
class OrbitSolution:
    """Converged periodic orbit.

    ``dts`` holds every leg duration including the final downward leg, so
    ``dts[:-1]`` are the free unknowns and ``dt_down`` the derived one.
    """

    itinerary: Itinerary
    params: NondimParams
    Zdot_init: float
    phi: float
    dts: np.ndarray
    times: np.ndarray
    Z: np.ndarray
    Zdot: np.ndarray
    residual_norm: float
    feasible: bool = True
    physical: bool = True
    violations: List[Violation] = field(default_factory=list)

    @property
    def x(self) -> np.ndarray:
        return np.concatenate(([self.Zdot_init, self.phi], self.dts[:-1]))

    @property
    def d(self) -> float:
        return self.params.d

    @property
    def dt_down(self) -> float:
        return float(self.dts[-1])

    @property
    def label(self) -> str:
        return self.itinerary.label

    def impact_velocities(self) -> List[Tuple[float, float, str]]:
        """``(t mod T, Zdot, end)`` for each wall impact of the orbit."""
        out = []
        T = self.params.T
        for j, leg in enumerate(self.itinerary.legs):
            tgt = LEG_INFO[leg][1]
            if tgt in ("G+", "G-"):
                out.append(((self.times[j + 1] + self.phi / math.pi) % T, float(self.Zdot[j + 1]),
                            "bottom" if tgt == "G+" else "top"))
        return out

    def near_grazing(self, tol: float = NEAR_GRAZING) -> bool:
        for j, leg in enumerate(self.itinerary.legs):
            if LEG_INFO[leg][1] in ("G+", "G-") and abs(self.Zdot[j + 1]) < tol:
                return True
        return False


def build_solution(itin: Itinerary, x: Sequence[float], params: NondimParams,
                   residual_norm: Optional[float] = None) -> OrbitSolution:
    """Reconstruct intermediate events of the orbit with unknowns ``x``."""
    x = np.asarray(x, dtype=float).copy()
    x[1] = x[1] % (2 * math.pi)
    w = walk(x, itin, params)
    if residual_norm is None:
        residual_norm = float(np.linalg.norm(residual_for(itin)(x, params)))
    return OrbitSolution(itin, params, float(x[0]), float(x[1]), w.dts, w.times, w.Z, w.v_in,
                         residual_norm)


def solve_orbit(itin: Itinerary, guess: Sequence[float], params: NondimParams,
                tol: float = TOL_RESIDUAL, check: bool = True) -> OrbitSolution:
    """Solve the defining system of ``itin`` from ``guess``.

    Raises
    ------
    NoConvergence
        When the damped Newton iteration stalls above ``tol``.
    """
    guess = np.asarray(guess, dtype=float)
    if not np.all(np.isfinite(guess)):
        raise NoConvergence("non-finite initial guess")
    fun = residual_for(itin)
    x, nrm, ok = newton(lambda z: fun(z, params), guess, tol=tol)
    if not ok:
        raise NoConvergence(f"{itin.label}: residual {nrm:.3g} above {tol:.1g}", nrm)
    sol = build_solution(itin, x, params, nrm)
    if check:
        feasible, physical, viol = check_physicality(sol)
        sol.feasible, sol.physical, sol.violations = feasible, physical, viol
    return sol


def _leg_checks(sol: OrbitSolution, tol: float) -> List[Violation]:
    itin, p = sol.itinerary, sol.params
    half = 0.5 * p.d
    phi = sol.phi
    out: List[Violation] = []
    v_start = -p.r * sol.Zdot_init
    for j, leg in enumerate(itin.legs):
        src, tgt, region = LEG_INFO[leg]
        t0, t1 = sol.times[j], sol.times[j + 1]
        Z0 = sol.Z[j]
        if src == "G+":
            Z0, v0 = half, -p.r * sol.Zdot[j]
        elif src == "G-":
            Z0, v0 = -half, -p.r * sol.Zdot[j]
        else:
            v0 = 0.0
        if j == 0:
            v0 = v_start
        if region is Region.SLIDING:
            theta = math.pi * t0 + phi
            f_on = math.cos(theta)
            if not (p.L_minus - tol <= f_on <= p.L_plus + tol):
                out.append(Violation("ONSET_OUTSIDE_SLIDING_BAND", j, t0, f_on,
                                     "forcing outside [L-, L+] at sliding onset"))
            continue
        L = p.L_plus if region is Region.SIGMA_PLUS else p.L_minus
        sgn = 1.0 if region is Region.SIGMA_PLUS else -1.0
        crit = critical_times(t0, t1, L, phi)
        crit = crit[(crit > t0 + 1e-12) & (crit < t1 - 1e-12)]
        if crit.size and p.L_plus > p.L_minus:
            Zc, vc = segment_eval(t0, Z0, v0, L, phi, crit)
            k = int(np.argmin(sgn * vc))
            if sgn * vc[k] < -tol:
                out.append(Violation("SIGMA_REACHED", j, float(crit[k]), float(vc[k]),
                                     "velocity changes sign inside a leg"))
        # displacement extremes sit at velocity zeros; sample them and the ends
        grid = np.linspace(t0, t1, 201)
        Zg, vg = segment_eval(t0, Z0, v0, L, phi, grid)
        zeros = []
        s = sgn * vg
        for i in np.nonzero((s[:-1] > 0) & (s[1:] <= 0))[0]:
            zeros.append(grid[i + 1])
        pts = np.concatenate((grid, zeros)) if zeros else grid
        Zp, _ = segment_eval(t0, Z0, v0, L, phi, pts)
        over = Zp - half
        under = -half - Zp
        if np.max(over) > tol:
            i = int(np.argmax(over))
            out.append(Violation("GAMMA_PLUS_EXCEEDED", j, float(pts[i]), float(Zp[i]),
                                 "trajectory passes the bottom wall"))
        if np.max(under) > tol:
            i = int(np.argmax(under))
            out.append(Violation("GAMMA_MINUS_EXCEEDED", j, float(pts[i]), float(Zp[i]),
                                 "trajectory passes the top wall"))
        v1 = sol.Zdot[j + 1]
        if tgt == "G+" and v1 <= 0:
            out.append(Violation("WRONG_IMPACT_DIRECTION", j, t1, v1, "bottom impact moving away"))
        if tgt == "G-" and v1 >= 0:
            out.append(Violation("WRONG_IMPACT_DIRECTION", j, t1, v1, "top impact moving away"))
        if tgt == "S":
            nxt = itin.legs[j + 1]
            f1 = math.cos(math.pi * t1 + phi)
            if nxt is LegKind.SS_SLIDE:
                decreasing = math.sin(math.pi * t1 + phi) > 0
                if region is Region.SIGMA_MINUS:
                    ok = (p.L_minus - tol <= f1 <= p.L_plus + tol) and decreasing
                    if f1 > p.L_plus + tol:
                        ok = False
                else:
                    ok = p.L_minus - tol <= f1 <= p.L_plus + tol
                if not ok:
                    out.append(Violation("ONSET_OUTSIDE_SLIDING_BAND", j, t1, f1,
                                         "sliding onset outside the sliding band"))
            else:
                if region is Region.SIGMA_MINUS and not f1 > p.L_plus - tol:
                    out.append(Violation("CROSSING_CONDITION", j, t1, f1,
                                         "crossing upward needs forcing above L+"))
                if region is Region.SIGMA_PLUS and not f1 < p.L_minus + tol:
                    out.append(Violation("CROSSING_CONDITION", j, t1, f1,
                                         "crossing downward needs forcing below L-"))
            if abs(sol.Z[j + 1]) > half + tol:
                code = "GAMMA_PLUS_EXCEEDED" if sol.Z[j + 1] > 0 else "GAMMA_MINUS_EXCEEDED"
                if not any(v.code == code and v.leg == j for v in out):
                    out.append(Violation(code, j, t1, float(sol.Z[j + 1]), "switching point outside capsule"))
    return out


@dataclass
class ReplayReport:
    """Comparison of an orbit with the simulator started from its first impact."""

    matches: bool
    expected: List[EventKind]
    observed: List[Event]
    max_time_error: float
    max_velocity_error: float
    witness: Optional[Event] = None


def replay(sol: OrbitSolution, periods: int = 1, tol: float = 1e-6) -> ReplayReport:
    """Simulate from the orbit's first bottom impact and compare event by event.

    The replay matches when the simulator logs the expected event kinds in
    order, each within ``tol`` of the orbit's time and impact velocity.
    """
    p = sol.params.with_phi(sol.phi)
    itin = sol.itinerary
    v0 = -p.r * sol.Zdot_init
    init = RelState(0.0, 0.5 * p.d, v0, Region.SIGMA_MINUS if v0 < 0 else Region.SIGMA_PLUS)
    horizon = periods * itin.p * p.T
    expected = itin.expected_events() * periods
    try:
        run = simulate(p, init, horizon + 0.05, record_trajectory=False)
        events = run.events
    except SimulationError:
        events = []
    skip = {EventKind.GRAZE_SIGMA}
    if p.L_plus == p.L_minus:
        # without friction the switching surface carries no dynamics
        skip |= {EventKind.CROSS_UP, EventKind.CROSS_DOWN}
    observed = [e for e in events if e.kind not in skip]
    n = len(expected)
    ref_t = np.concatenate([sol.times[1:] + k * itin.p * p.T for k in range(periods)])
    ref_v = np.concatenate([sol.Zdot[1:]] * periods)
    matches = True
    witness = None
    terr = verr = 0.0
    for i in range(n):
        if i >= len(observed):
            matches = False
            break
        ev = observed[i]
        if ev.kind is not expected[i]:
            matches = False
            witness = ev
            break
        terr = max(terr, abs(ev.t - ref_t[i]))
        if ev.is_impact:
            verr = max(verr, abs(ev.v_pre - ref_v[i]))
        if max(terr, verr) > tol:
            matches = False
            witness = ev
            break
    return ReplayReport(matches, expected, observed[: n + 1], terr, verr, witness)


def check_physicality(sol: OrbitSolution, tol: float = TOL_GEOMETRY) -> Tuple[bool, bool, List[Violation]]:
    """Return ``(feasible, physical, violations)``.

    Feasible means every leg has positive duration. Physical additionally
    requires every switching event to satisfy its crossing or sliding
    conditions, the motion to stay inside the capsule without unlisted
    velocity sign changes, and a simulator replay to log the same events.
    """
    feasible = bool(np.all(sol.dts > 0.0))
    viol: List[Violation] = []
    if not feasible:
        for j, dt in enumerate(sol.dts):
            if dt <= 0.0:
                viol.append(Violation("NONPOSITIVE_DURATION", j, float(sol.times[j]), float(dt)))
        return False, False, viol
    viol.extend(_leg_checks(sol, tol))
    rep = replay(sol)
    if not rep.matches:
        w = rep.witness
        viol.append(Violation("REPLAY_MISMATCH", -1, w.t if w else float("nan"),
                              w.v_pre if w else float("nan"),
                              f"simulator logged {w.kind.value if w else 'too few events'}"))
    return True, not viol, viol


def guess_from_events(events: Sequence[Event], itin: Itinerary, phi_sim: float) -> Optional[np.ndarray]:
    """Extract unknowns from the last occurrence of ``itin``'s event pattern in a log."""
    pattern = itin.expected_events()
    evs = [e for e in events if e.kind is not EventKind.GRAZE_SIGMA]
    best = None
    for i, e in enumerate(evs):
        if e.kind is not EventKind.IMPACT_BOTTOM:
            continue
        seg = evs[i + 1: i + 1 + len(pattern)]
        if len(seg) < len(pattern):
            break
        if [s.kind for s in seg] != pattern:
            continue
        times = np.array([e.t] + [s.t for s in seg])
        dts = np.diff(times)
        phi = (math.pi * e.t + phi_sim) % (2 * math.pi)
        best = np.concatenate(([e.v_pre, phi], dts[:-1]))
    return best


def seed_from_simulation(itin: Itinerary, params: NondimParams, transient_periods: int = 200,
                         record_periods: int = 10, init: Optional[RelState] = None) -> Optional[np.ndarray]:
    """Run the simulator to a steady state and read a guess off its event log."""
    if init is None:
        init = initial_state(0.0, 0.0, 0.0, params)
    try:
        ss = steady_state_impacts(params, init, transient_periods, record_periods)
    except SimulationError:
        return None
    return guess_from_events(ss.events, itin, params.phi)


def seed_grid(itin: Itinerary, params: NondimParams, n_phi: int = 8, n_dt: int = 6,
              Zdot0: float = 0.6) -> List[np.ndarray]:
    """Multi-start guesses over the phase and the upward travel time."""
    T = params.T
    out = []
    for phi in np.linspace(0.0, 2 * math.pi, n_phi, endpoint=False):
        for up in np.linspace(T / (n_dt + 1), T * n_dt / (n_dt + 1), n_dt):
            dts: List[float] = []
            for h in itin.halves or ("",):
                k = len(UPWARD[h])
                dts.extend([up / k] * k)
                dts.append(T - up)
            out.append(np.concatenate(([Zdot0, phi], dts[:-1])))
    return out


def _same_root(a: np.ndarray, b: np.ndarray, tol: float = 1e-6) -> bool:
    d = np.abs(a - b)
    d[1] = abs(float(wrap_angle(a[1] - b[1])))
    return bool(np.max(d) < tol)


def _same_orbit(a: OrbitSolution, b: OrbitSolution, tol: float = 1e-6) -> bool:
    """Same root, or the same multi-period orbit started one forcing period later."""
    if _same_root(a.x, b.x, tol):
        return True
    if a.itinerary.p == 1:
        return False
    va = sorted((e, round(t, 6) % a.params.T, v) for t, v, e in a.impact_velocities())
    vb = sorted((e, round(t, 6) % b.params.T, v) for t, v, e in b.impact_velocities())
    return len(va) == len(vb) and all(
        ea == eb and abs(ta - tb) < 1e-5 and abs(ua - ub) < tol for (ea, ta, ua), (eb, tb, ub) in zip(va, vb))


def find_orbits(itin: Itinerary, params: NondimParams, seed_from: str = "simulate",
                extra_guesses: Sequence[Sequence[float]] = (),
                keep_infeasible: bool = False) -> List[OrbitSolution]:
    """Collect every distinct root reachable from the seeds, each classified.

    Roots with a nonpositive leg duration do not describe a motion and are
    dropped unless ``keep_infeasible`` is set.
    """
    guesses: List[np.ndarray] = [np.asarray(g, dtype=float) for g in extra_guesses]
    if seed_from == "simulate":
        g = seed_from_simulation(itin, params)
        if g is not None:
            guesses.append(g)
        else:
            guesses.extend(seed_grid(itin, params))
    elif seed_from == "grid":
        guesses.extend(seed_grid(itin, params))
    else:
        raise ValueError(f"unknown seeding strategy {seed_from!r}")
    roots: List[OrbitSolution] = []
    for g in guesses:
        try:
            sol = solve_orbit(itin, g, params)
        except NoConvergence:
            continue
        if not sol.feasible and not keep_infeasible:
            continue
        if not any(_same_orbit(sol, s) for s in roots):
            roots.append(sol)
    return roots


ORBIT_FIELDS = ["label", "d", "Zdot_init", "phi", "dts", "residual", "feasible", "physical", "violations"]


def write_orbits_csv(path, sols: Sequence[OrbitSolution]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ORBIT_FIELDS)
        for s in sols:
            w.writerow([s.label, repr(float(s.d)), repr(float(s.Zdot_init)), repr(float(s.phi)),
                        " ".join(repr(float(v)) for v in s.dts), repr(float(s.residual_norm)),
                        int(s.feasible), int(s.physical), " ".join(v.code for v in s.violations)])


def read_orbits_csv(path) -> List[dict]:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append({
                "label": r["label"], "d": float(r["d"]), "Zdot_init": float(r["Zdot_init"]),
                "phi": float(r["phi"]), "dts": [float(v) for v in r["dts"].split()],
                "residual": float(r["residual"]), "feasible": bool(int(r["feasible"])),
                "physical": bool(int(r["physical"])),
                "violations": r["violations"].split() if r["violations"] else [],
            })
    return rows
