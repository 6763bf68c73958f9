"""Branch continuation, critical-point location and numeric bifurcation sweeps.

Critical points are located twice: by root-finding an indicator along
the reduced-system branch, and by solving the reduced system augmented
with the defining tangency condition and ``d`` as an extra unknown.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from .flow import (Event, EventKind, ImpactRecord, Region, RelState, SimulationError,
                   critical_times, initial_state, segment_eval, steady_state_impacts)
from .model import NondimParams, ParamFamily, ParameterError, wrap_angle
from .orbits import (LEG_INFO, Itinerary, LegKind, NoConvergence, OrbitSolution, build_solution,
                     check_physicality, newton, residual_for, seed_from_simulation, solve_orbit, walk)
from .stability import SingularDenominator, StabilityReport, monodromy, stability

log = logging.getLogger(__name__)

AGREEMENT_TOL = 1e-4


class NoBracket(RuntimeError):
    """The indicator does not change sign over the supplied branch."""


class NotApplicable(RuntimeError):
    """The requested bifurcation cannot occur for these parameters."""


class Termination(str, Enum):
    PD = "PD"
    FOLD = "Fold"
    GRAZING_SLIDING = "GrazingSlidingSigma"
    SWITCHING_SLIDING = "SwitchingSliding"
    CROSSING_SLIDING = "CrossingSliding"
    GRAZING_GAMMA_PLUS = "GrazingGammaPlus"
    GRAZING_GAMMA_MINUS = "GrazingGammaMinus"
    SOLVER_FAILURE = "SolverFailure"
    RANGE_END = "RangeEnd"


@dataclass
class BranchPoint:
    d: float
    sol: OrbitSolution
    report: Optional[StabilityReport]


@dataclass
class Branch:
    """Orbits of one itinerary along ``d``.

    ``overshoot`` keeps the first rejected solution (unphysical or past a
    smooth bifurcation) so critical points can be bracketed.
    """

    itinerary: Itinerary
    family: ParamFamily
    points: List[BranchPoint] = field(default_factory=list)
    termination: Termination = Termination.RANGE_END
    overshoot: Optional[BranchPoint] = None

    @property
    def label(self) -> str:
        return self.itinerary.label

    @property
    def ds(self) -> np.ndarray:
        return np.array([p.d for p in self.points])

    def all_points(self) -> List[BranchPoint]:
        return self.points + ([self.overshoot] if self.overshoot is not None else [])


@dataclass
class BifurcationPoint:
    """Critical parameter value with the tangency data that defines it."""

    kind: str
    d_star: float
    label: str
    witness: float
    residual: float
    d_bisect: float = float("nan")
    d_augmented: float = float("nan")
    solution: Optional[OrbitSolution] = None

    @property
    def methods_agree(self) -> bool:
        return abs(self.d_bisect - self.d_augmented) <= AGREEMENT_TOL


def _dist(a: np.ndarray, b: np.ndarray) -> float:
    diff = np.abs(a - b)
    diff[1] = abs(float(wrap_angle(a[1] - b[1])))
    return float(np.max(diff))


def _as_guess(seed) -> np.ndarray:
    if isinstance(seed, OrbitSolution):
        return seed.x
    return np.asarray(seed, dtype=float)


def _termination_for(sol: OrbitSolution) -> Termination:
    legs = sol.itinerary.legs
    if not sol.feasible:
        for v in sol.violations:
            if legs[v.leg] is LegKind.SS_SLIDE:
                return Termination.CROSSING_SLIDING
            if legs[v.leg] is LegKind.SS_PLUS:
                return Termination.SWITCHING_SLIDING
        return Termination.SOLVER_FAILURE
    for v in sol.violations:
        if v.code == "SIGMA_REACHED":
            return Termination.GRAZING_SLIDING
        if v.code == "ONSET_OUTSIDE_SLIDING_BAND":
            return Termination.SWITCHING_SLIDING
        if v.code == "CROSSING_CONDITION":
            if legs[v.leg] is LegKind.GP_S:
                return Termination.SWITCHING_SLIDING
            return Termination.CROSSING_SLIDING
        if v.code == "GAMMA_PLUS_EXCEEDED":
            return Termination.GRAZING_GAMMA_PLUS
        if v.code == "GAMMA_MINUS_EXCEEDED":
            return Termination.GRAZING_GAMMA_MINUS
    return Termination.SOLVER_FAILURE


def _real_min(report: StabilityReport) -> float:
    e = report.eigenvalues
    real = e[np.abs(e.imag) < 1e-12].real
    return float(np.min(real)) if real.size else float("inf")


def _real_max(report: StabilityReport) -> float:
    e = report.eigenvalues
    real = e[np.abs(e.imag) < 1e-12].real
    return float(np.max(real)) if real.size else float("-inf")


def continue_branch(itin: Union[Itinerary, str], family: ParamFamily, d_start: float, d_end: float,
                    step: float = 1e-3, seed=None, through_pd: bool = False, through_fold: bool = False,
                    min_step: float = 1e-6, max_jump: float = 0.05, check: bool = True) -> Branch:
    """Natural-parameter continuation from ``d_start`` towards ``d_end``.

    The step is halved on solver failure or a jump in the unknowns. The
    branch stops at the first unphysical solution (reason taken from its
    violation), at an eigenvalue crossing -1 or +1 unless told to pass
    through, or when the step falls below ``min_step``.
    """
    if isinstance(itin, str):
        itin = Itinerary.from_label(itin)
    branch = Branch(itin, family)
    direction = 1.0 if d_end > d_start else -1.0
    h = abs(step)
    if seed is None:
        seed = seed_from_simulation(itin, family(d_start))
        if seed is None:
            branch.termination = Termination.SOLVER_FAILURE
            return branch
    try:
        sol = solve_orbit(itin, _as_guess(seed), family(d_start), check=check)
    except (NoConvergence, ParameterError):
        branch.termination = Termination.SOLVER_FAILURE
        return branch
    rep = _safe_stability(sol)
    first = BranchPoint(d_start, sol, rep)
    if check and not sol.physical:
        branch.overshoot = first
        branch.termination = _termination_for(sol)
        return branch
    branch.points.append(first)
    d = d_start
    while direction * (d_end - d) > 1e-14:
        d_next = d + direction * min(h, abs(d_end - d))
        pts = branch.points
        guess = pts[-1].sol.x.copy()
        if len(pts) >= 2:
            slope = (pts[-1].sol.x - pts[-2].sol.x) / (pts[-1].d - pts[-2].d)
            slope[1] = float(wrap_angle(pts[-1].sol.x[1] - pts[-2].sol.x[1])) / (pts[-1].d - pts[-2].d)
            guess = guess + slope * (d_next - d)
        try:
            new = solve_orbit(itin, guess, family(d_next), check=check)
            ok = _dist(new.x, guess) <= max_jump * max(1.0, h / abs(step))
        except (NoConvergence, ParameterError):
            ok = False
        if not ok:
            h *= 0.5
            if h < min_step:
                last = branch.points[-1].report
                if last is not None and _real_max(last) > 0.9:
                    branch.termination = Termination.FOLD
                else:
                    branch.termination = Termination.SOLVER_FAILURE
                return branch
            continue
        rep = _safe_stability(new)
        point = BranchPoint(d_next, new, rep)
        if check and not new.physical:
            branch.overshoot = point
            branch.termination = _termination_for(new)
            return branch
        prev = branch.points[-1].report
        if rep is not None and prev is not None:
            if not through_pd and _real_min(prev) > -1.0 >= _real_min(rep):
                branch.overshoot = point
                branch.termination = Termination.PD
                return branch
            if not through_fold and _real_max(prev) < 1.0 <= _real_max(rep):
                branch.overshoot = point
                branch.termination = Termination.FOLD
                return branch
        branch.points.append(point)
        d = d_next
        h = min(abs(step), 2 * h)
    branch.termination = Termination.RANGE_END
    return branch


def _safe_stability(sol: OrbitSolution) -> Optional[StabilityReport]:
    try:
        return stability(sol)
    except SingularDenominator:
        return None


# ---------------------------------------------------------------- indicators

def _leg_start(w, itin: Itinerary, j: int, params: NondimParams) -> Tuple[float, float, float]:
    src = LEG_INFO[itin.legs[j]][0]
    half = 0.5 * params.d
    if src == "G+":
        Z0 = half
    elif src == "G-":
        Z0 = -half
    else:
        Z0 = float(w.Z[j])
    return float(w.times[j]), Z0, float(w.v_out[j])


def _legs_of(itin: Itinerary, kinds: Sequence[LegKind]) -> List[int]:
    return [j for j, leg in enumerate(itin.legs) if leg in kinds]


def sigma_graze_indicator(sol: OrbitSolution, legs: Optional[Sequence[int]] = None) -> Tuple[float, float, int]:
    """Largest velocity reached on upward wall-to-wall legs, with its time and leg.

    Zero at a grazing-sliding bifurcation; positive means the orbit
    touches the switching surface without an event being listed.
    """
    p, itin = sol.params, sol.itinerary
    w = walk(sol.x, itin, p)
    if legs is None:
        legs = _legs_of(itin, [LegKind.GP_GM])
    if not legs:
        raise NotApplicable(f"{itin.label} has no wall-to-wall upward leg")
    best = (-math.inf, float("nan"), -1)
    for j in legs:
        t0, Z0, v0 = _leg_start(w, itin, j, p)
        t1 = float(w.times[j + 1])
        crit = critical_times(t0, t1, p.L_minus, sol.phi)
        cand = np.concatenate(([t0], crit, [t1])) if crit.size else np.array([t0, t1])
        _, v = segment_eval(t0, Z0, v0, p.L_minus, sol.phi, cand)
        k = int(np.argmax(v))
        if v[k] > best[0]:
            best = (float(v[k]), float(cand[k]), j)
    return best


def switching_indicator(sol: OrbitSolution, leg: int) -> Tuple[float, float]:
    """Phase of the first switching-surface arrival relative to the upper band edge."""
    p = sol.params
    t = float(sol.times[leg + 1])
    return float(wrap_angle(math.pi * t + sol.phi - p.slide_enter_phase)), t


def crossing_slide_indicator(sol: OrbitSolution, leg: int) -> Tuple[float, float]:
    """Phase of the return from ``Z' > 0`` relative to the sliding exit phase."""
    p = sol.params
    t = float(sol.times[leg + 1])
    return float(wrap_angle(math.pi * t + sol.phi - p.slide_exit_phase)), t


def gamma_indicator(sol: OrbitSolution, end: str = "bottom") -> Tuple[float, float, int, bool]:
    """Closest non-impact approach to a wall: ``(gap, time, leg, at_node)``.

    The gap is ``max Z - d/2`` for the bottom wall and ``-d/2 - min Z``
    for the top; zero at an impact-grazing bifurcation.
    """
    p, itin = sol.params, sol.itinerary
    half = 0.5 * p.d
    sgn = 1.0 if end == "bottom" else -1.0
    w = walk(sol.x, itin, p)
    best = (-math.inf, float("nan"), -1, False)
    for j, leg in enumerate(itin.legs):
        src, tgt, region = LEG_INFO[leg]
        if region is Region.SLIDING:
            continue
        L = p.L_plus if region is Region.SIGMA_PLUS else p.L_minus
        t0, Z0, v0 = _leg_start(w, itin, j, p)
        t1 = float(w.times[j + 1])
        if tgt == "S":
            gap = sgn * float(w.Z[j + 1]) - half
            if gap > best[0]:
                best = (gap, t1, j, True)
        crit = critical_times(t0, t1, L, sol.phi)
        grid = np.concatenate(([t0], crit, [t1]))
        _, vg = segment_eval(t0, Z0, v0, L, sol.phi, grid)
        for a, b, va, vb in zip(grid[:-1], grid[1:], vg[:-1], vg[1:]):
            # extremum of sgn*Z where sgn*v turns from positive to negative
            if sgn * va > 0 > sgn * vb:
                tz = brentq(lambda t: float(segment_eval(t0, Z0, v0, L, sol.phi, t)[1]), a, b,
                            xtol=1e-15, rtol=4 * np.finfo(float).eps)
                if tz < t1 - 1e-12 and tz > t0 + 1e-12:
                    Zz = float(segment_eval(t0, Z0, v0, L, sol.phi, tz)[0])
                    gap = sgn * Zz - half
                    if gap > best[0]:
                        best = (gap, tz, j, False)
    return best


def pd_indicator(sol: OrbitSolution) -> float:
    return _real_min(stability(sol)) + 1.0


def fold_indicator(sol: OrbitSolution) -> float:
    return _real_max(stability(sol)) - 1.0


# ------------------------------------------------------------ bracketing

def _solve_at(itin: Itinerary, family: ParamFamily, d: float, guess: np.ndarray) -> OrbitSolution:
    return solve_orbit(itin, guess, family(d), check=False)


def _bracket(branch: Branch, indicator: Callable[[OrbitSolution], float]) -> Tuple[BranchPoint, BranchPoint]:
    pts = branch.all_points()
    vals = []
    for pt in pts:
        try:
            vals.append(indicator(pt.sol))
        except (SingularDenominator, NotApplicable):
            vals.append(float("nan"))
    for a, b, va, vb in zip(pts[:-1], pts[1:], vals[:-1], vals[1:]):
        if np.isfinite(va) and np.isfinite(vb) and (va == 0.0 or va * vb < 0):
            return a, b
    raise NoBracket(f"indicator keeps its sign along the {branch.label} branch")


def _root_along(branch: Branch, indicator: Callable[[OrbitSolution], float], xtol: float = 1e-10,
                bisect_only: bool = False) -> Tuple[float, OrbitSolution]:
    a, b = _bracket(branch, indicator)
    itin, fam = branch.itinerary, branch.family
    cache: Dict[float, OrbitSolution] = {a.d: a.sol, b.d: b.sol}

    def g(d: float) -> float:
        near = min(cache, key=lambda k: abs(k - d))
        sol = _solve_at(itin, fam, d, cache[near].x)
        cache[d] = sol
        return indicator(sol)

    lo, hi = a.d, b.d
    flo = indicator(a.sol)
    if bisect_only:
        while abs(hi - lo) > xtol:
            mid = 0.5 * (lo + hi)
            fm = g(mid)
            if fm * flo > 0:
                lo, flo = mid, fm
            else:
                hi = mid
        d_star = 0.5 * (lo + hi)
    else:
        d_star = brentq(g, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)
    near = min(cache, key=lambda k: abs(k - d_star))
    return d_star, _solve_at(itin, fam, d_star, cache[near].x)


def solve_augmented(itin: Itinerary, family: ParamFamily, x0: Sequence[float], d0: float,
                    condition: Callable[[np.ndarray, np.ndarray, NondimParams], np.ndarray],
                    extra0: Sequence[float] = (), tol: float = 1e-11) -> Tuple[np.ndarray, float, np.ndarray, float]:
    """Solve the reduced system plus ``condition`` for the unknowns, ``d`` and extras."""
    n = len(x0)
    fun_red = residual_for(itin)

    def fun(z: np.ndarray) -> np.ndarray:
        x, d, extra = z[:n], z[n], z[n + 1:]
        try:
            p = family(float(d))
        except ParameterError:
            return np.full(n + 1 + len(extra0), np.nan)
        try:
            cond = condition(x, extra, p)
        except (SingularDenominator, ValueError):
            return np.full(n + 1 + len(extra0), np.nan)
        return np.concatenate((fun_red(x, p), cond))

    z0 = np.concatenate((np.asarray(x0, float), [d0], np.asarray(extra0, float)))
    z, nrm, ok = newton(fun, z0, tol=tol)
    if not ok:
        raise NoConvergence(f"augmented system for {itin.label}: residual {nrm:.3g}", nrm)
    return z[:n], float(z[n]), z[n + 1:], nrm


def _finish(kind: str, itin: Itinerary, family: ParamFamily, d_bis: float, sol_bis: OrbitSolution,
            witness: float, condition, extra0=(), witness_of=None) -> BifurcationPoint:
    x, d_aug, extra, nrm = solve_augmented(itin, family, sol_bis.x, d_bis, condition, extra0)
    sol = build_solution(itin, x, family(d_aug))
    feasible, physical, viol = check_physicality(sol)
    sol.feasible, sol.physical, sol.violations = feasible, physical, viol
    w = float(extra[0]) if len(extra) else (witness_of(sol) if witness_of else witness)
    return BifurcationPoint(kind, d_aug, itin.label, w, nrm, d_bis, d_aug, sol)


def _require_friction(branch: Branch) -> None:
    p = branch.points[0].sol.params if branch.points else branch.family(branch.overshoot.d)
    if p.L_plus - p.L_minus <= 0.0:
        raise NotApplicable("no sliding band without friction")


def find_grazing_sliding(branch: Branch, leg: Optional[int] = None) -> BifurcationPoint:
    """Grazing of the switching surface by an upward wall-to-wall leg."""
    _require_friction(branch)
    itin = branch.itinerary
    legs = [leg] if leg is not None else _legs_of(itin, [LegKind.GP_GM])
    if not legs:
        raise NotApplicable(f"{itin.label} has no wall-to-wall upward leg")
    chosen = None
    for j in legs:
        try:
            _bracket(branch, lambda s, j=j: sigma_graze_indicator(s, [j])[0])
            chosen = j
            break
        except NoBracket:
            continue
    if chosen is None:
        raise NoBracket(f"no switching-surface tangency along the {itin.label} branch")
    ind = lambda s: sigma_graze_indicator(s, [chosen])[0]  # noqa: E731
    d_bis, sol = _root_along(branch, ind)
    _, t_sig, _ = sigma_graze_indicator(sol, [chosen])

    def cond(x, extra, p):
        w = walk(x, itin, p)
        t0, Z0, v0 = _leg_start(w, itin, chosen, p)
        phi = float(x[1])
        t = float(extra[0])
        _, v = segment_eval(t0, Z0, v0, p.L_minus, phi, t)
        return np.array([float(v), math.cos(math.pi * t + phi) - p.L_minus])

    return _finish("GrazingSlidingSigma", itin, branch.family, d_bis, sol, t_sig, cond, [t_sig])


def find_switching_sliding(branch: Branch, leg: Optional[int] = None) -> BifurcationPoint:
    """First switching-surface arrival reaching the upper edge of the sliding band."""
    _require_friction(branch)
    itin = branch.itinerary
    legs = [leg] if leg is not None else _legs_of(itin, [LegKind.GP_S])
    if not legs:
        raise NotApplicable(f"{itin.label} never reaches the switching surface from a wall")
    for j in legs:
        try:
            _bracket(branch, lambda s, j=j: switching_indicator(s, j)[0])
        except NoBracket:
            continue
        d_bis, sol = _root_along(branch, lambda s: switching_indicator(s, j)[0])

        def cond(x, extra, p, j=j):
            w = walk(x, itin, p)
            t = float(w.times[j + 1])
            return np.array([float(wrap_angle(math.pi * t + float(x[1]) - p.slide_enter_phase))])

        return _finish("SwitchingSliding", itin, branch.family, d_bis, sol,
                       switching_indicator(sol, j)[1], cond,
                       witness_of=lambda s, j=j: float(s.times[j + 1]))
    raise NoBracket(f"no switching-sliding point along the {itin.label} branch")


def find_crossing_sliding(branch: Branch, leg: Optional[int] = None) -> BifurcationPoint:
    """Return from ``Z' > 0`` meeting the sliding exit phase, so the slide shrinks to nothing."""
    _require_friction(branch)
    itin = branch.itinerary
    legs = [leg] if leg is not None else _legs_of(itin, [LegKind.SS_PLUS])
    if not legs:
        raise NotApplicable(f"{itin.label} has no excursion into Z' > 0")
    for j in legs:
        try:
            _bracket(branch, lambda s, j=j: crossing_slide_indicator(s, j)[0])
        except NoBracket:
            continue
        d_bis, sol = _root_along(branch, lambda s: crossing_slide_indicator(s, j)[0])

        def cond(x, extra, p, j=j):
            w = walk(x, itin, p)
            t = float(w.times[j + 1])
            return np.array([float(wrap_angle(math.pi * t + float(x[1]) - p.slide_exit_phase))])

        return _finish("CrossingSliding", itin, branch.family, d_bis, sol,
                       crossing_slide_indicator(sol, j)[1], cond,
                       witness_of=lambda s, j=j: float(s.times[j + 1]))
    raise NoBracket(f"no crossing-sliding point along the {itin.label} branch")


def find_grazing_gamma(branch: Branch, end: str = "bottom") -> BifurcationPoint:
    """Zero-velocity contact with a wall away from the listed impacts."""
    if end not in ("bottom", "top"):
        raise ValueError("end must be 'bottom' or 'top'")
    itin = branch.itinerary
    ind = lambda s: gamma_indicator(s, end)[0]  # noqa: E731
    d_bis, sol = _root_along(branch, ind)
    gap, t_g, j, at_node = gamma_indicator(sol, end)
    sgn = 1.0 if end == "bottom" else -1.0
    kind = "GrazingGammaPlus" if end == "bottom" else "GrazingGammaMinus"
    if at_node:
        def cond(x, extra, p):
            w = walk(x, itin, p)
            return np.array([sgn * float(w.Z[j + 1]) - 0.5 * p.d])

        return _finish(kind, itin, branch.family, d_bis, sol, t_g, cond,
                       witness_of=lambda s: float(s.times[j + 1]))

    region = LEG_INFO[itin.legs[j]][2]

    def cond(x, extra, p):
        w = walk(x, itin, p)
        t0, Z0, v0 = _leg_start(w, itin, j, p)
        L = p.L_plus if region is Region.SIGMA_PLUS else p.L_minus
        Z, v = segment_eval(t0, Z0, v0, L, float(x[1]), float(extra[0]))
        return np.array([float(v), sgn * float(Z) - 0.5 * p.d])

    return _finish(kind, itin, branch.family, d_bis, sol, t_g, cond, [t_g])


def _det_condition(itin: Itinerary, sign: float):
    def cond(x, extra, p):
        sol = build_solution(itin, x, p, residual_norm=0.0)
        M = monodromy(sol).entries
        return np.array([float(np.linalg.det(M + sign * np.eye(2)))])

    return cond


def find_pd(branch: Branch) -> BifurcationPoint:
    """Real eigenvalue through -1, bisected to 1e-5 in ``d`` and refined on ``det(M + I) = 0``."""
    itin = branch.itinerary
    d_bis, sol = _root_along(branch, pd_indicator, xtol=1e-5, bisect_only=True)
    return _finish("PD", itin, branch.family, d_bis, sol, float("nan"), _det_condition(itin, 1.0))


def find_fold(branch: Branch, min_step: float = 1e-6) -> BifurcationPoint:
    """Turning point of the branch, refined on ``det(M - I) = 0``.

    With an eigenvalue bracket on the branch the crossing of +1 is
    bisected; otherwise the branch is pushed on with step halving down to
    ``min_step`` and the last converged point serves as the estimate.
    """
    itin = branch.itinerary
    try:
        d_bis, sol = _root_along(branch, fold_indicator, xtol=1e-6, bisect_only=True)
    except NoBracket:
        if len(branch.points) < 2:
            raise
        last = branch.points[-1]
        if _real_max(last.report) < 0.5 or branch.termination not in (Termination.FOLD,
                                                                     Termination.SOLVER_FAILURE):
            raise NoBracket("no eigenvalue approaches +1 at the end of the branch")
        d_bis, sol = last.d, last.sol
    return _finish("Fold", itin, branch.family, d_bis, sol, float("nan"), _det_condition(itin, -1.0))


BIFURCATION_FIELDS = ["kind", "d_star", "label", "witness_time", "residual", "d_bisect", "d_augmented"]


def write_bifurcations_csv(path, points: Sequence[BifurcationPoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BIFURCATION_FIELDS)
        for b in points:
            w.writerow([b.kind, repr(float(b.d_star)), b.label, repr(float(b.witness)),
                        repr(float(b.residual)), repr(float(b.d_bisect)), repr(float(b.d_augmented))])


def read_bifurcations_csv(path) -> List[BifurcationPoint]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append(BifurcationPoint(r["kind"], float(r["d_star"]), r["label"], float(r["witness_time"]),
                                        float(r["residual"]), float(r["d_bisect"]), float(r["d_augmented"])))
    return out


# ------------------------------------------------------------- numeric sweeps

def _segment_label(n: int, m: int, decor: str) -> str:
    return f"{n}:{m}{decor}"


def _decoration(kinds: Sequence[EventKind]) -> str:
    slide = EventKind.SLIDE_START in kinds
    cross = any(k in (EventKind.CROSS_UP, EventKind.CROSS_DOWN) for k in kinds)
    if slide and cross:
        first_slide = kinds.index(EventKind.SLIDE_START)
        if any(k in (EventKind.CROSS_UP, EventKind.CROSS_DOWN) for k in kinds[:first_slide]):
            return "cs"
        return "s"
    if slide:
        return "s"
    if cross:
        return "c"
    return ""


def label_attractor(impacts: Sequence[ImpactRecord], events: Sequence[Event], T: float = 2.0,
                    p_max: int = 8, tol: float = 1e-4, frictionless: bool = False) -> str:
    """Name a recorded steady state as ``n:m`` with decorations and ``/pT``.

    The smallest ``p`` for which impact times shift by ``pT`` and impact
    velocities repeat within ``tol`` sets the period. Each forcing period
    (bottom impact to bottom impact when there is one per period) is
    summarised by its bottom and top impact counts; periods with at most
    one impact per wall also carry ``s`` (slides), ``c`` (crosses) or
    ``cs`` (crosses then slides). Returns ``"chaotic"`` when no
    ``p <= p_max`` fits and ``"0:0"`` without impacts.
    """
    imp = sorted(impacts, key=lambda r: r.t)
    if not imp:
        return "0:0"
    times = np.array([r.t for r in imp])
    vel = np.array([r.Zdot for r in imp])
    ends = [r.end for r in imp]
    span = times[-1] - times[0]
    period = None
    for p in range(1, p_max + 1):
        if span < 2 * p * T - tol:
            break
        k = int(np.searchsorted(times, times[0] + p * T - tol))
        if k == 0 or k >= len(imp):
            continue
        ok = True
        for i in range(len(imp) - k):
            if (ends[i + k] != ends[i] or abs(times[i + k] - times[i] - p * T) > tol
                    or abs(vel[i + k] - vel[i]) > tol):
                ok = False
                break
        if ok:
            period = p
            break
    if period is None:
        return "chaotic"
    cycle = [i for i in range(len(imp)) if times[i] < times[0] + period * T - tol]
    cycle_bottoms = [i for i in cycle if ends[i] == "bottom"]
    if len(cycle_bottoms) == period:
        # one bottom impact per forcing period: each period runs from one to the next
        starts = [times[i] for i in cycle_bottoms]
    else:
        # otherwise cut at the forcing phase furthest from any impact
        ph = np.sort(np.mod(times[cycle], T))
        gaps = np.diff(np.concatenate((ph, [ph[0] + T])))
        k = int(np.argmax(gaps))
        cut = ph[k] + 0.5 * gaps[k]
        first = times[0] + np.mod(cut - times[0], T)
        starts = [first + q * T for q in range(period)]
    starts = [t - 1e-9 for t in starts]
    bounds = starts + [starts[0] + period * T]
    sig = [e for e in events if e.kind in (EventKind.SLIDE_START, EventKind.CROSS_UP, EventKind.CROSS_DOWN)]
    segs = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        n = sum(1 for i in range(len(imp)) if a <= times[i] < b and ends[i] == "bottom")
        m = sum(1 for i in range(len(imp)) if a <= times[i] < b and ends[i] == "top")
        decor = ""
        if not frictionless and n <= 1 and m <= 1:
            decor = _decoration([e.kind for e in sig if a <= e.t < b])
        segs.append(_segment_label(n, m, decor))
    if all(s == segs[0] for s in segs):
        return segs[0] if period == 1 else f"{segs[0]}/{period}T"
    # rotate so the plainest, most impacting period comes first
    def count(seg: str) -> int:
        n, m = seg.split(":")
        return int(n) + int(m.rstrip("sc"))

    def key(i):
        return [(-count(s), len(s), s) for s in segs[i:] + segs[:i]]

    start = min(range(len(segs)), key=key)
    segs = segs[start:] + segs[:start]
    return "-".join(segs) + f"/{period}T"


@dataclass
class SweepPoint:
    d: float
    A: float
    s: float
    impacts: List[ImpactRecord]
    label: str
    window: Tuple[float, float]
    error: str = ""


def _carry(ss, params_new: NondimParams) -> RelState:
    bottoms = [e for e in ss.events if e.kind is EventKind.IMPACT_BOTTOM]
    if bottoms:
        e = bottoms[-1]
        v = -params_new.r * e.v_pre
        return RelState(e.t, 0.5 * params_new.d, v, Region.SIGMA_MINUS if v < 0 else Region.SIGMA_PLUS)
    f = ss.final
    Z = float(np.clip(f.Z, -0.5 * params_new.d, 0.5 * params_new.d))
    return initial_state(f.t, Z, f.Zdot, params_new)


def sweep_numeric(family: ParamFamily, d_values: Sequence[float], transient: int = 200, record: int = 30,
                  init: Optional[RelState] = None, p_max: int = 8, tol: float = 1e-4,
                  carry: bool = True, wall_rest: bool = False) -> List[SweepPoint]:
    """Steady states along ``d_values`` in the given order.

    With ``carry`` each point starts from the attractor found at the previous
    one, which follows a branch through coexistence windows. Without it every
    point starts from ``init`` (rest at the centre by default).
    ``wall_rest`` is passed on to the simulator.
    """
    out: List[SweepPoint] = []
    state = init
    for d in d_values:
        if not carry:
            state = init
        phys = family.physical(float(d))
        try:
            p = family(float(d))
        except ParameterError as exc:
            out.append(SweepPoint(float(d), phys.A, phys.s, [], "invalid", (0.0, 0.0), str(exc)))
            continue
        if state is None:
            state = initial_state(0.0, 0.0, 0.0, p)
        elif abs(state.Z) > 0.5 * p.d:
            state = RelState(state.t, math.copysign(0.5 * p.d, state.Z), state.Zdot, state.region)
        try:
            ss = steady_state_impacts(p, state, transient, record, wall_rest=wall_rest)
        except SimulationError as exc:
            log.warning("sweep point d=%.6g failed: %s", d, exc)
            out.append(SweepPoint(float(d), phys.A, phys.s, [], "failed", (0.0, 0.0), str(exc)))
            state = None
            continue
        lab = label_attractor(ss.impacts, ss.events, p.T, p_max, tol, frictionless=p.L_plus == p.L_minus)
        out.append(SweepPoint(float(d), phys.A, phys.s, list(ss.impacts), lab, ss.window))
        state = _carry(ss, p)
    return out


def bouncing_type(impacts: Sequence[ImpactRecord], periods: int) -> bool:
    """Motion that keeps striking the bottom wall and rarely reaches the top.

    At least one bottom impact per two forcing periods on average, and at
    most a quarter as many top impacts as bottom ones.
    """
    nb = sum(1 for r in impacts if r.end == "bottom")
    nt = len(impacts) - nb
    return nb > 0 and 2 * nb >= periods and 4 * nt <= nb


def label_sequence(points: Sequence[SweepPoint], drop: Sequence[str] = ("failed", "invalid")) -> List[str]:
    """Labels in sweep order with consecutive repeats collapsed."""
    seq: List[str] = []
    for pt in points:
        if pt.label in drop:
            continue
        if not seq or seq[-1] != pt.label:
            seq.append(pt.label)
    return seq


DIAGRAM_FIELDS = ["d", "A", "s", "end", "t_mod", "Zdot", "label"]


def write_diagram_csv(path, points: Sequence[SweepPoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DIAGRAM_FIELDS)
        for pt in points:
            head = [repr(float(pt.d)), repr(float(pt.A)), repr(float(pt.s))]
            if not pt.impacts:
                # keep impact-free and failed points visible with empty impact columns
                w.writerow(head + ["", "", "", pt.label])
            for r in pt.impacts:
                w.writerow(head + [r.end, repr(float(r.t_mod)), repr(float(r.Zdot)), pt.label])


def read_diagram_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return [{"d": float(r["d"]), "A": float(r["A"]), "s": float(r["s"]), "end": r["end"],
                 "t_mod": float(r["t_mod"] or "nan"), "Zdot": float(r["Zdot"] or "nan"),
                 "label": r["label"]}
                for r in csv.DictReader(fh)]
