"""Independent oracles and small utilities shared by the test modules.

The oracles deliberately avoid the library's closed forms: trajectories
come from a fixed-step Runge-Kutta integration, event times from a dense
scan plus bisection, and Jacobians from finite differences of simulator
runs.
"""
import math

import numpy as np

from vibroharvest.flow import EventKind, Region, RelState, simulate
from vibroharvest.orbits import LEG_INFO

# criterion number -> printed pass/fail line
ACCEPTANCE_LINES = {}


def report(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def critical(results, branch, kind, mu=0.5):
    """The critical point of ``kind`` found on a configured branch."""
    _, found, _ = results[(branch, mu)]
    pts = [b for b in found if b.kind == kind]
    assert pts, f"no {kind} on branch {branch} (mu={mu})"
    return pts[0]


# ---------------------------------------------------------------- RK4 oracle

def rk4_segments(t0, Z0, v0, L, phi, tau, h_max=1e-5):
    """Integrate ``Z'' = cos(pi t + phi) - L`` for many segments at once.

    Every segment takes the same number of steps, each no longer than
    ``h_max``; returns ``(Z, v)`` at ``t0 + tau``.
    """
    t = np.asarray(t0, float).copy()
    Z = np.asarray(Z0, float).copy()
    v = np.asarray(v0, float).copy()
    L = np.asarray(L, float)
    phi = np.asarray(phi, float)
    tau = np.asarray(tau, float)
    n = int(math.ceil(float(np.max(tau)) / h_max))
    h = tau / n

    def acc(tt):
        return np.cos(np.pi * tt + phi) - L

    for _ in range(n):
        a1 = acc(t)
        a2 = acc(t + 0.5 * h)
        a4 = acc(t + h)
        # for Z'' = a(t) the stages only need the forcing at three times
        Z = Z + h * v + h * h / 6.0 * (a1 + 2.0 * a2)
        v = v + h / 6.0 * (a1 + 4.0 * a2 + a4)
        t = t + h
    return Z, v


# --------------------------------------------------------- event-time oracle

def free_motion(state, params, t):
    """Displacement and velocity at ``t`` for unconstrained motion from ``state``."""
    L = params.L_plus if state.region is Region.SIGMA_PLUS else params.L_minus
    phi, t0, Z0, v0 = params.phi, state.t, state.Z, state.Zdot
    s = t - t0
    v = v0 + (np.sin(np.pi * t + phi) - math.sin(math.pi * t0 + phi)) / np.pi - L * s
    Z = (Z0 + v0 * s - (np.cos(np.pi * t + phi) - math.cos(math.pi * t0 + phi)) / np.pi**2
         - math.sin(math.pi * t0 + phi) / np.pi * s - 0.5 * L * s * s)
    return Z, v


def scan_first_event(state, params, t_max, grid=1e-4):
    """Earliest wall contact or velocity zero after ``state`` by scanning.

    The closed-form motion is written out again here rather than taken
    from the library. Returns ``(t, kind)`` with kind in
    ``{"bottom", "top", "sigma"}`` or ``None``.
    """
    half = 0.5 * params.d

    def motion(t):
        return free_motion(state, params, t)

    ts = np.arange(state.t, t_max + grid, grid)
    Z, v = motion(ts)
    cands = []
    for kind, g in (("bottom", Z - half), ("top", Z + half), ("sigma", v)):
        g = g.copy()
        g[0] = g[1] if abs(g[0]) < 1e-13 else g[0]
        idx = np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]
        if idx.size:
            i = int(idx[0])
            a, b = ts[i], ts[i + 1]

            def fn(t, kind=kind):
                z, vv = motion(t)
                return {"bottom": z - half, "top": z + half, "sigma": vv}[kind]

            fa = fn(a)
            for _ in range(200):
                m = 0.5 * (a + b)
                fm = fn(m)
                if fm == 0.0 or b - a < 1e-15:
                    a = b = m
                    break
                if np.sign(fm) == np.sign(fa):
                    a, fa = m, fm
                else:
                    b = m
            cands.append((0.5 * (a + b), kind))
    if not cands:
        return None
    return min(cands)


# ------------------------------------------------------ Jacobian oracles

def return_map(sol, t0, u):
    """Simulator map from the first bottom impact ``(t0, Zdot)`` to the one
    that closes the orbit's period."""
    p = sol.params.with_phi(sol.phi)
    n_bottom = sum(1 for leg in sol.itinerary.legs if LEG_INFO[leg][1] == "G+")
    v0 = -p.r * u
    init = RelState(t0, 0.5 * p.d, v0, Region.SIGMA_MINUS if v0 < 0 else Region.SIGMA_PLUS)
    run = simulate(p, init, sol.itinerary.p * p.T + 0.5, record_trajectory=False)
    bottoms = [e for e in run.events if e.kind is EventKind.IMPACT_BOTTOM]
    e = bottoms[n_bottom - 1]
    return np.array([e.t, e.v_pre])


def fd_return_map_jacobian(sol, h=1e-6):
    base = np.array([0.0, sol.Zdot_init])
    J = np.zeros((2, 2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        J[:, i] = (return_map(sol, *(base + e)) - return_map(sol, *(base - e))) / (2 * h)
    return J


def rel_err(A, B):
    return float(np.max(np.abs(A - B)) / np.max(np.abs(B)))


def leg_map(leg, t0, u, params):
    """Event-to-event map of one non-sliding leg, evaluated by scanning.

    Input pair is ``(t0, Zdot_pre)`` from a wall or ``(t0, Z0)`` from the
    switching surface; output is ``(t1, Zdot_pre)`` at a wall or
    ``(t1, Z1)`` on the switching surface.
    """
    src, tgt, region = LEG_INFO[leg]
    half = 0.5 * params.d
    if src == "S":
        state = RelState(t0, u, 0.0, region)
    else:
        state = RelState(t0, half if src == "G+" else -half, -params.r * u, region)
    hit = scan_first_event(state, params, t0 + 2.5)
    want = {"G+": "bottom", "G-": "top", "S": "sigma"}[tgt]
    assert hit is not None and hit[1] == want, (leg, hit)
    Z, v = free_motion(state, params, hit[0])
    return np.array([hit[0], Z if tgt == "S" else v])


def fd_leg_jacobian(leg, t0, u, params, h=1e-6):
    J = np.zeros((2, 2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        J[:, i] = (leg_map(leg, *(np.array([t0, u]) + e), params)
                   - leg_map(leg, *(np.array([t0, u]) - e), params)) / (2 * h)
    return J
