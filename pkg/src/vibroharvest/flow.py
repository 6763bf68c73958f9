"""Event-driven simulation of the capsule-bullet relative motion.

Between events the motion is available in closed form, so the simulator
never integrates numerically. It only locates the next wall contact
(``Z = +-d/2``) or zero of the relative velocity (``Z' = 0``), then applies
the impact law or the Filippov rules for crossing and sliding.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .model import NondimParams

SCAN_STEP = 0.01
EVENT_XTOL = 1e-14
TANGENCY_TOL = 1e-10
SIMULTANEOUS_TOL = 1e-12
GRAZE_SPEED = 1e-10
_WINDOW = 2.0
_MIN_GAP = 1e-9
_WALL_TOL = 1e-12
REST_SPEED = 1e-5
_RTOL = 4.0 * np.finfo(float).eps
_TWO_PI = 2.0 * math.pi


class SimulationError(RuntimeError):
    """Raised when a simulation cannot continue."""


class ChatterError(SimulationError):
    """Raised when events accumulate faster than the configured cap."""


class Region(str, Enum):
    SIGMA_PLUS = "SigmaPlus"
    SIGMA_MINUS = "SigmaMinus"
    SLIDING = "Sliding"


class EventKind(str, Enum):
    IMPACT_BOTTOM = "ImpactBottom"
    IMPACT_TOP = "ImpactTop"
    CROSS_UP = "CrossUp"
    CROSS_DOWN = "CrossDown"
    SLIDE_START = "SlideStart"
    SLIDE_END = "SlideEnd"
    GRAZE_SIGMA = "GrazeSigma"
    GRAZE_GAMMA = "GrazeGamma"


class SigmaOutcome(str, Enum):
    CROSS = "Cross"
    SLIDE = "Slide"
    GRAZE = "Graze"


IMPACT_KINDS = (EventKind.IMPACT_BOTTOM, EventKind.IMPACT_TOP, EventKind.GRAZE_GAMMA)


@dataclass(frozen=True)
class RelState:
    """Instantaneous relative state."""

    t: float
    Z: float
    Zdot: float
    region: Region


@dataclass(frozen=True)
class Event:
    """A nonsmooth event. ``v_pre``/``v_post`` bracket the velocity jump."""

    kind: EventKind
    t: float
    Z: float
    v_pre: float
    v_post: float

    @property
    def is_impact(self) -> bool:
        return self.kind in IMPACT_KINDS


@dataclass(frozen=True)
class Segment:
    """Closed-form piece of trajectory starting at ``t0``."""

    t0: float
    t1: float
    Z0: float
    v0: float
    region: Region


def force(region: Region, params: NondimParams) -> float:
    if region is Region.SIGMA_PLUS:
        return params.L_plus
    if region is Region.SIGMA_MINUS:
        return params.L_minus
    raise ValueError("sliding motion has no single constant force")


def segment_eval(t0: float, Z0: float, v0: float, L: float, phi: float, t):
    """Evaluate the closed-form motion from ``(t0, Z0, v0)`` under force ``L``.

    Works elementwise on arrays of ``t``.
    """
    t = np.asarray(t, dtype=float)
    dt = t - t0
    s0 = math.sin(math.pi * t0 + phi)
    c0 = math.cos(math.pi * t0 + phi)
    arg = np.pi * t + phi
    v = v0 + (np.sin(arg) - s0) / math.pi - L * dt
    Z = Z0 + v0 * dt - (np.cos(arg) - c0) / math.pi**2 - s0 / math.pi * dt - 0.5 * L * dt * dt
    return Z, v


def _scalar_v(t0: float, v0: float, L: float, phi: float, s0: float, t: float) -> float:
    return v0 + (math.sin(math.pi * t + phi) - s0) / math.pi - L * (t - t0)


def _scalar_Z(t0: float, Z0: float, v0: float, L: float, phi: float, s0: float, c0: float, t: float) -> float:
    dt = t - t0
    return (Z0 + v0 * dt - (math.cos(math.pi * t + phi) - c0) / math.pi**2
            - s0 / math.pi * dt - 0.5 * L * dt * dt)


def propagate_segment(state: RelState, region: Region, tau: float, params: NondimParams) -> RelState:
    """Advance ``state`` by ``tau`` under the constant force of ``region``.

    The caller guarantees that no event lies inside the interval.
    """
    if region is Region.SLIDING:
        raise ValueError("use slide_until_exit for sliding motion")
    Z, v = segment_eval(state.t, state.Z, state.Zdot, force(region, params), params.phi, state.t + tau)
    return RelState(state.t + tau, float(Z), float(v), region)


def apply_impact(v_pre: float, r: float) -> float:
    """Newtonian restitution law."""
    return -r * v_pre


def critical_times(a: float, b: float, L: float, phi: float) -> np.ndarray:
    """Times in ``(a, b)`` where ``cos(pi t + phi) = L``, i.e. where ``Z''`` vanishes."""
    base = math.acos(max(-1.0, min(1.0, L)))
    out = []
    for target in (base, _TWO_PI - base):
        # first t >= a with pi t + phi = target mod 2 pi
        k = math.ceil((math.pi * a + phi - target) / _TWO_PI)
        t = (target + _TWO_PI * k - phi) / math.pi
        while t < b:
            if t > a:
                out.append(t)
            t += 2.0
    return np.sort(np.asarray(out, dtype=float))


def classify_sigma_hit(t: float, incoming: Region, params: NondimParams,
                       tol: float = TANGENCY_TOL) -> SigmaOutcome:
    """Decide what happens when ``Z'`` reaches zero at time ``t``.

    Crossing needs both vector fields to point the same way through the
    switching surface. Sliding happens when the forcing lies in the band
    ``[L_minus, L_plus]``. Near the band edges the forcing slope decides:
    moving into the band gives sliding, moving out gives crossing or, when
    the flow cannot cross, a tangential return to the incoming side.
    """
    theta = math.pi * t + params.phi
    f = math.cos(theta)
    into_band_from_top = math.sin(theta) > 0.0  # f decreasing
    Lp, Lm = params.L_plus, params.L_minus
    has_band = Lp - Lm > 2.0 * tol
    if incoming is Region.SIGMA_MINUS:
        if f > Lp + tol:
            return SigmaOutcome.CROSS
        if abs(f - Lp) <= tol:
            if not into_band_from_top:
                return SigmaOutcome.CROSS
            return SigmaOutcome.SLIDE if has_band else SigmaOutcome.GRAZE
        if f >= Lm + tol:
            return SigmaOutcome.SLIDE
        if abs(f - Lm) <= tol and not into_band_from_top and has_band:
            return SigmaOutcome.SLIDE
        return SigmaOutcome.GRAZE
    if incoming is Region.SIGMA_PLUS:
        if f < Lm - tol:
            return SigmaOutcome.CROSS
        if abs(f - Lm) <= tol:
            if into_band_from_top:
                return SigmaOutcome.CROSS
            return SigmaOutcome.SLIDE if has_band else SigmaOutcome.GRAZE
        if f <= Lp - tol:
            return SigmaOutcome.SLIDE
        if abs(f - Lp) <= tol and into_band_from_top and has_band:
            return SigmaOutcome.SLIDE
        return SigmaOutcome.GRAZE
    raise ValueError("incoming region must be SigmaPlus or SigmaMinus")


def slide_until_exit(state: RelState, params: NondimParams) -> Tuple[Event, RelState]:
    """Hold ``Z`` fixed until the forcing leaves the sliding band.

    Exit towards ``Z' < 0`` happens when the forcing falls through
    ``L_minus``; exit towards ``Z' > 0`` when it rises through ``L_plus``.
    A state resting on a wall can only leave away from it.
    """
    theta0 = (math.pi * state.t + params.phi) % _TWO_PI
    to_minus = (params.slide_exit_phase - theta0) % _TWO_PI
    to_plus = (_TWO_PI - params.slide_enter_phase - theta0) % _TWO_PI
    # resting on a wall, only the exit away from that wall is possible
    if state.Z >= 0.5 * params.d - _WALL_TOL:
        to_plus = math.inf
    elif state.Z <= -0.5 * params.d + _WALL_TOL:
        to_minus = math.inf
    if to_minus <= to_plus:
        t_exit, region = state.t + to_minus / math.pi, Region.SIGMA_MINUS
    else:
        t_exit, region = state.t + to_plus / math.pi, Region.SIGMA_PLUS
    ev = Event(EventKind.SLIDE_END, t_exit, state.Z, 0.0, 0.0)
    return ev, RelState(t_exit, state.Z, 0.0, region)


def initial_state(t: float, Z: float, Zdot: float, params: NondimParams) -> RelState:
    """Build a state, choosing the region from the velocity and, at rest, the forcing."""
    if Zdot > 0.0:
        return RelState(t, Z, Zdot, Region.SIGMA_PLUS)
    if Zdot < 0.0:
        return RelState(t, Z, Zdot, Region.SIGMA_MINUS)
    f = math.cos(math.pi * t + params.phi)
    if f > params.L_plus:
        return RelState(t, Z, 0.0, Region.SIGMA_PLUS)
    if f < params.L_minus:
        return RelState(t, Z, 0.0, Region.SIGMA_MINUS)
    return RelState(t, Z, 0.0, Region.SLIDING)


def next_event(state: RelState, params: NondimParams, t_max: float) -> Optional[Event]:
    """Earliest event in ``(state.t, t_max]`` or ``None``.

    Roots are bracketed on a grid that includes every zero of ``Z''`` so
    that ``Z'`` is monotone between grid points, which makes sign changes
    exact detectors. Between zeros of ``Z'`` the displacement is monotone
    too, so wall contacts are bracketed the same way.
    """
    if state.region is Region.SLIDING:
        ev, _ = slide_until_exit(state, params)
        return ev if ev.t <= t_max else None
    if t_max <= state.t:
        return None
    L = force(state.region, params)
    phi = params.phi
    half = 0.5 * params.d
    sgn = 1.0 if state.region is Region.SIGMA_PLUS else -1.0
    t0, Z0, v0 = state.t, state.Z, state.Zdot
    s0 = math.sin(math.pi * t0 + phi)
    c0 = math.cos(math.pi * t0 + phi)
    on_sigma = v0 == 0.0

    def vel(t: float) -> float:
        return _scalar_v(t0, v0, L, phi, s0, t)

    def pos(t: float) -> float:
        return _scalar_Z(t0, Z0, v0, L, phi, s0, c0, t)

    a = t0
    while a < t_max:
        b = min(a + _WINDOW, t_max)
        crit = critical_times(a, b, L, phi)
        crit = crit[crit > a + _MIN_GAP]
        grid = np.union1d(np.arange(a, b, SCAN_STEP), crit)
        grid = np.append(grid[grid < b], b)
        Z, v = segment_eval(t0, Z0, v0, L, phi, grid)
        g = sgn * v
        if on_sigma and a == t0:
            g[0] = 1.0
        # first grid index at which the velocity has left its region
        bad = np.nonzero(g[1:] <= 0.0)[0]
        i_s = int(bad[0]) + 1 if bad.size else None
        t_s = None
        if i_s is not None:
            lo, hi = grid[i_s - 1], grid[i_s]
            if g[i_s] == 0.0:
                t_s = hi
            else:
                t_s = brentq(lambda t: sgn * vel(t), lo, hi, xtol=EVENT_XTOL, rtol=_RTOL)
            last = i_s - 1
        else:
            last = len(grid) - 1
        # wall contact on the monotone stretch before the velocity zero
        zz = Z[: last + 1]
        tt = grid[: last + 1]
        if t_s is not None:
            zz = np.append(zz, pos(t_s))
            tt = np.append(tt, t_s)
        if sgn > 0:
            hit = np.nonzero(zz[1:] - half >= 0.0)[0]
            wall = half
        else:
            hit = np.nonzero(zz[1:] + half <= 0.0)[0]
            wall = -half
        if hit.size:
            j = int(hit[0]) + 1
            lo, hi = tt[j - 1], tt[j]
            if zz[j] == wall:
                t_w = hi
            else:
                try:
                    t_w = brentq(lambda t: pos(t) - wall, lo, hi, xtol=EVENT_XTOL, rtol=_RTOL)
                except ValueError as exc:
                    # flight shorter than the root tolerance: impacts are accumulating
                    raise ChatterError(f"wall contact unresolvable near t={lo:.9f}") from exc
            if t_s is None or t_w <= t_s + SIMULTANEOUS_TOL:
                v_pre = vel(t_w)
                kind = EventKind.IMPACT_BOTTOM if wall > 0 else EventKind.IMPACT_TOP
                if abs(v_pre) < GRAZE_SPEED:
                    kind = EventKind.GRAZE_GAMMA
                return Event(kind, t_w, wall, v_pre, apply_impact(v_pre, params.r))
        if t_s is not None:
            outcome = classify_sigma_hit(t_s, state.region, params)
            if outcome is SigmaOutcome.CROSS:
                kind = EventKind.CROSS_UP if sgn < 0 else EventKind.CROSS_DOWN
            elif outcome is SigmaOutcome.SLIDE:
                kind = EventKind.SLIDE_START
            else:
                kind = EventKind.GRAZE_SIGMA
            return Event(kind, t_s, pos(t_s), 0.0, 0.0)
        a = b
    return None


def _after(event: Event, state: RelState, params: NondimParams) -> RelState:
    """State right after ``event`` that ended a segment started at ``state``."""
    if event.is_impact:
        wall_bottom = event.Z > 0
        v = event.v_post
        if v == 0.0:
            # exact grazing: leave the wall on the side the wall allows
            region = Region.SIGMA_MINUS if wall_bottom else Region.SIGMA_PLUS
        else:
            region = Region.SIGMA_PLUS if v > 0 else Region.SIGMA_MINUS
        return RelState(event.t, event.Z, v, region)
    if event.kind in (EventKind.CROSS_UP, EventKind.CROSS_DOWN):
        region = Region.SIGMA_PLUS if event.kind is EventKind.CROSS_UP else Region.SIGMA_MINUS
        return RelState(event.t, event.Z, 0.0, region)
    if event.kind is EventKind.SLIDE_START:
        return RelState(event.t, event.Z, 0.0, Region.SLIDING)
    if event.kind is EventKind.GRAZE_SIGMA:
        return RelState(event.t, event.Z, 0.0, state.region)
    raise ValueError(f"unexpected event {event.kind}")


@dataclass
class SimulationResult:
    """Event log and closed-form segments of one simulation run."""

    params: NondimParams
    events: List[Event]
    segments: List[Segment]
    final: RelState
    t_start: float
    t_end: float
    trajectory: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = None

    def sample(self, times: Sequence[float]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Evaluate ``(t, Z, Zdot, region)`` on arbitrary times within the run."""
        times = np.asarray(times, dtype=float)
        Z = np.empty_like(times)
        V = np.empty_like(times)
        reg = np.empty(times.shape, dtype=object)
        starts = np.array([s.t0 for s in self.segments])
        idx = np.clip(np.searchsorted(starts, times, side="right") - 1, 0, len(self.segments) - 1)
        for k in np.unique(idx):
            seg = self.segments[k]
            mask = idx == k
            if seg.region is Region.SLIDING:
                Z[mask] = seg.Z0
                V[mask] = 0.0
            else:
                z, v = segment_eval(seg.t0, seg.Z0, seg.v0, force(seg.region, self.params),
                                    self.params.phi, times[mask])
                Z[mask] = z
                V[mask] = v
            reg[mask] = seg.region.value
        return times, Z, V, reg

    def impacts(self) -> List[Event]:
        return [e for e in self.events if e.is_impact]


def _settle_on_wall(ev: Event, params: NondimParams) -> Optional[Event]:
    """Close a run of ever smaller impacts that converges onto the wall.

    For a rebound speed ``v`` the bullet decelerates under ``a_out`` and
    returns under ``a_back`` (the forces differ when friction is present),
    so each rebound shrinks by ``r sqrt(a_back / a_out)`` and the flights
    form a geometric series. Returns the rest onset, or ``None`` when the
    forcing does not press the bullet back onto the wall.
    """
    v = abs(ev.v_post)
    if v == 0.0 or v >= REST_SPEED:
        return None
    f = math.cos(math.pi * ev.t + params.phi)
    if ev.Z > 0:
        a_out, a_back = f - params.L_minus, f - params.L_plus
    else:
        a_out, a_back = params.L_plus - f, params.L_minus - f
    if a_out <= 0.0 or a_back <= 0.0:
        return None
    ratio = params.r * math.sqrt(a_back / a_out)
    if ratio >= 1.0:
        return None
    t_rest = ev.t + v * (1.0 / a_out + 1.0 / math.sqrt(a_out * a_back)) / (1.0 - ratio)
    return Event(EventKind.SLIDE_START, t_rest, ev.Z, 0.0, 0.0)


def simulate(params: NondimParams, init: RelState, horizon: float, *,
             max_events_per_period: int = 64, samples_per_period: int = 400,
             record_trajectory: bool = True, wall_rest: bool = False) -> SimulationResult:
    """Run the event-driven simulation over ``[init.t, init.t + horizon]``.

    With ``wall_rest`` an impact whose rebound is slower than ``REST_SPEED``
    while the net force presses into the wall is taken as the end of a
    converging impact sequence, after which the bullet rests on the wall
    like a sliding state. Without it such sequences trip the chatter guard.

    Raises
    ------
    ChatterError
        If more than ``max_events_per_period`` events fall within one
        forcing period.
    SimulationError
        If the initial state lies outside the capsule.
    """
    half = 0.5 * params.d
    if abs(init.Z) > half + 1e-12:
        raise SimulationError(f"initial Z={init.Z} outside [-{half}, {half}]")
    if init.region is Region.SLIDING and init.Zdot != 0.0:
        raise SimulationError("a sliding state must have zero velocity")
    t_end = init.t + max(horizon, 0.0)
    state = init
    events: List[Event] = []
    segments: List[Segment] = []
    cap = max_events_per_period
    while state.t < t_end:
        ev = next_event(state, params, t_end)
        seg_end = t_end if ev is None else ev.t
        segments.append(Segment(state.t, seg_end, state.Z, state.Zdot, state.region))
        if ev is None:
            if state.region is not Region.SLIDING:
                state = propagate_segment(state, state.region, t_end - state.t, params)
            else:
                state = replace(state, t=t_end)
            break
        events.append(ev)
        if len(events) > cap and ev.t - events[-cap - 1].t < params.T:
            raise ChatterError(
                f"more than {cap} events within one period ending at t={ev.t:.6f}"
            )
        if ev.kind is EventKind.SLIDE_END:
            _, state = slide_until_exit(state, params)
        else:
            state = _after(ev, state, params)
            rest = _settle_on_wall(ev, params) if wall_rest and ev.is_impact else None
            if rest is not None and rest.t < t_end:
                segments.append(Segment(ev.t, rest.t, ev.Z, 0.0, Region.SLIDING))
                events.append(rest)
                state = RelState(rest.t, ev.Z, 0.0, Region.SLIDING)
    result = SimulationResult(params, events, segments, state, init.t, t_end)
    if record_trajectory:
        n = int(round((t_end - init.t) / params.T * samples_per_period))
        times = init.t + np.arange(n + 1) * (params.T / samples_per_period) if n > 0 else np.empty(0)
        if times.size and segments:
            result.trajectory = result.sample(times)
        else:
            result.trajectory = (np.empty(0), np.empty(0), np.empty(0), np.empty(0, dtype=object))
    return result


@dataclass(frozen=True)
class ImpactRecord:
    """Impact in a recording window; ``Zdot`` is the pre-impact velocity."""

    t: float
    t_mod: float
    Zdot: float
    end: str


@dataclass
class SteadyState:
    impacts: List[ImpactRecord]
    events: List[Event]
    final: RelState
    window: Tuple[float, float]


def steady_state_impacts(params: NondimParams, init: RelState, transient_periods: int = 200,
                         record_periods: int = 30, **kwargs) -> SteadyState:
    """Discard a transient, then record every impact over the recording window."""
    pre = simulate(params, init, transient_periods * params.T, record_trajectory=False, **kwargs)
    run = simulate(params, pre.final, record_periods * params.T, record_trajectory=False, **kwargs)
    recs = [ImpactRecord(e.t, e.t % params.T, e.v_pre, "bottom" if e.Z > 0 else "top")
            for e in run.events if e.is_impact]
    return SteadyState(recs, run.events, run.final, (run.t_start, run.t_end))


def write_trajectory_csv(path, result: SimulationResult) -> None:
    t, Z, V, reg = result.trajectory if result.trajectory is not None else ([], [], [], [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "Z", "Zdot", "region"])
        for row in zip(t, Z, V, reg):
            w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), row[3]])


def write_events_csv(path, events: Iterable[Event]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "kind", "Z", "v_pre", "v_post"])
        for e in events:
            w.writerow([repr(float(e.t)), e.kind.value, repr(float(e.Z)), repr(float(e.v_pre)),
                        repr(float(e.v_post))])


def read_events_csv(path) -> List[Event]:
    with open(path, newline="") as fh:
        return [Event(EventKind(r["kind"]), float(r["t"]), float(r["Z"]),
                      float(r["v_pre"]), float(r["v_post"])) for r in csv.DictReader(fh)]
