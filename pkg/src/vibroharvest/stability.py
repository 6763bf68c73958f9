"""Linear stability of periodic orbits from composed event-map Jacobians.

Each leg maps ``(t, Zdot)`` at a wall (pre-impact velocity) or ``(t, Z)``
on the switching surface to the same pair at the next event. Partials
come from differentiating the closed-form flow and applying the implicit
function theorem to the event condition that ends the leg.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple, Union

import numpy as np

from .orbits import LEG_INFO, LegKind, NEAR_GRAZING, OrbitSolution
from .flow import Region
from .model import NondimParams

SINGULAR_TOL = 1e-12
MARGINAL_TOL = 1e-8


class SingularDenominator(ArithmeticError):
    """An event-condition derivative vanished, which signals grazing."""


class Classification(str, Enum):
    STABLE = "Stable"
    UNSTABLE_PD = "UnstablePD"
    UNSTABLE_FOLD = "UnstableFold"
    UNSTABLE_COMPLEX = "UnstableComplex"
    MARGINAL = "Marginal"


def _f(t: float, phi: float) -> float:
    return math.cos(math.pi * t + phi)


def _F1(t: float, phi: float) -> float:
    return math.sin(math.pi * t + phi) / math.pi


def leg_partials(leg: LegKind, t0: float, t1: float, v0: float, v1: float,
                 params: NondimParams, phi: float) -> np.ndarray:
    """Jacobian of one leg at the given endpoint data.

    ``v0`` is the velocity just after leaving the source (post-impact at a
    wall, zero on the switching surface) and ``v1`` the velocity on arrival
    (pre-impact at a wall).

    Returns
    -------
    numpy.ndarray
        2x2 matrix from the source pair to the target pair.
    """
    src, tgt, region = LEG_INFO[leg]
    if region is Region.SLIDING:
        # exit time is pinned by the forcing phase, displacement carries over
        return np.array([[0.0, 0.0], [0.0, 1.0]])
    L = params.L_plus if region is Region.SIGMA_PLUS else params.L_minus
    r = params.r
    dt = t1 - t0
    f0, f1 = _f(t0, phi), _f(t1, phi)
    # partials of (Z1, v1) w.r.t. (t0, v0, Z0) and t1
    Zt0 = -v0 - f0 * dt + L * dt
    Zv0 = dt
    vt0 = -f0 + L
    vt1 = f1 - L
    if src == "S":
        # inputs (t0, Z0); v0 = 0 is fixed
        in_t = (Zt0, vt0)
        in_2 = (1.0, 0.0)
    else:
        # inputs (t0, Zdot_pre); v0 = -r Zdot_pre
        in_t = (Zt0, vt0)
        in_2 = (-r * Zv0, -r)
    J = np.empty((2, 2))
    if tgt == "S":
        if abs(vt1) < SINGULAR_TOL:
            raise SingularDenominator(f"{leg.value}: forcing equals the load at the switching time")
        for col, (dZ, dv) in enumerate((in_t, in_2)):
            dt1 = -dv / vt1
            J[0, col] = dt1
            J[1, col] = dZ + v1 * dt1
    else:
        if abs(v1) < SINGULAR_TOL:
            raise SingularDenominator(f"{leg.value}: arrival speed {v1:.3g} at the wall")
        for col, (dZ, dv) in enumerate((in_t, in_2)):
            dt1 = -dZ / v1
            J[0, col] = dt1
            J[1, col] = dv + vt1 * dt1
    return J


def jacobian_leg(leg_index: int, sol: OrbitSolution) -> np.ndarray:
    """Jacobian of leg ``leg_index`` of a converged orbit."""
    leg = sol.itinerary.legs[leg_index]
    p = sol.params
    src = LEG_INFO[leg][0]
    if src == "S":
        v0 = 0.0
    else:
        v0 = -p.r * sol.Zdot[leg_index]
    return leg_partials(leg, float(sol.times[leg_index]), float(sol.times[leg_index + 1]), v0,
                        float(sol.Zdot[leg_index + 1]), p, sol.phi)


@dataclass
class Monodromy:
    """Return-map derivative over one full orbit period with its factors."""

    entries: np.ndarray
    legs: List[np.ndarray]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.entries)

    def pd_indicator(self) -> float:
        """``det(M + I)``, zero at a period-doubling."""
        return float(np.linalg.det(self.entries + np.eye(2)))

    def fold_indicator(self) -> float:
        """``det(M - I)``, zero at a fold."""
        return float(np.linalg.det(self.entries - np.eye(2)))


def compose(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Product of leg Jacobians in leg order (later legs multiply on the left)."""
    out = np.eye(2)
    for J in mats:
        out = J @ out
    return out


def monodromy(sol: OrbitSolution) -> Monodromy:
    """Ordered product of the leg Jacobians, downward leg last."""
    legs = [jacobian_leg(j, sol) for j in range(len(sol.itinerary.legs))]
    return Monodromy(compose(legs), legs)


@dataclass
class StabilityReport:
    eigenvalues: np.ndarray
    classification: Classification
    margin: float
    near_grazing: bool = False
    label: str = ""
    d: float = float("nan")

    @property
    def stable(self) -> bool:
        return self.classification is Classification.STABLE


def classify_eigenvalues(eigs: Sequence[complex], tol: float = MARGINAL_TOL) -> Tuple[Classification, float]:
    eigs = np.asarray(eigs, dtype=complex)
    mags = np.abs(eigs)
    margin = float(np.max(mags) - 1.0)
    if abs(margin) <= tol:
        return Classification.MARGINAL, margin
    if margin < 0:
        return Classification.STABLE, margin
    dom = eigs[int(np.argmax(mags))]
    if abs(dom.imag) > 1e-12 * max(1.0, abs(dom)):
        return Classification.UNSTABLE_COMPLEX, margin
    if dom.real < -1.0:
        return Classification.UNSTABLE_PD, margin
    return Classification.UNSTABLE_FOLD, margin


def classify(mono: Union[Monodromy, np.ndarray, Sequence[complex]], tol: float = MARGINAL_TOL,
             near_grazing: bool = False, label: str = "", d: float = float("nan")) -> StabilityReport:
    """Classify by eigenvalue magnitudes; accepts a monodromy, a matrix or an eigenvalue pair."""
    if isinstance(mono, Monodromy):
        eigs = mono.eigenvalues()
    else:
        arr = np.asarray(mono)
        eigs = np.linalg.eigvals(arr) if arr.ndim == 2 else arr.astype(complex)
    cls, margin = classify_eigenvalues(eigs, tol)
    return StabilityReport(np.asarray(eigs, dtype=complex), cls, margin, near_grazing, label, d)


def stability(sol: OrbitSolution, tol: float = MARGINAL_TOL) -> StabilityReport:
    """Monodromy and classification of ``sol`` in one call."""
    mono = monodromy(sol)
    return classify(mono, tol, sol.near_grazing(NEAR_GRAZING), sol.label, sol.d)


def qform_jacobian_1_1(sol: OrbitSolution) -> np.ndarray:
    """Monodromy of a 1:1 orbit from the denominators of the ``q`` parametrization.

    Uses the periodic-orbit identity for the forcing difference to rewrite
    the arrival speeds; valid on the orbit only.
    """
    if sol.itinerary.label != "1:1":
        raise ValueError("q-form Jacobian only exists for the 1:1 orbit")
    p, phi = sol.params, sol.phi
    r, Lp, Lm = p.r, p.L_plus, p.L_minus
    Zd0 = sol.Zdot_init
    t0, tk, tk1 = sol.times
    du, dd = tk - t0, tk1 - tk
    Zk = float(sol.Zdot[1])
    den0 = Zd0 + (Lp * dd + Lm * du) / (1 + r)
    den1 = Zk + (Lm * du + Lp * dd) / (1 + r)
    tk_Z = -r * du / den0
    tk_t = (r * Zd0 - _f(t0, phi) * du + Lm * du) / den0
    vk_t = tk_t * (_f(tk, phi) - Lm) - (_f(t0, phi) - Lm)
    vk_Z = -r + tk_Z * (_f(tk, phi) - Lm)
    tk1_t = (r * Zk - _f(tk, phi) * dd + Lp * dd) / den1
    tk1_Z = -r * dd / den1
    vk1_t = tk1_t * (_f(tk1, phi) - Lp) - (_f(tk, phi) - Lp)
    vk1_Z = -r + tk1_Z * (_f(tk1, phi) - Lp)
    up = np.array([[tk_t, tk_Z], [vk_t, vk_Z]])
    down = np.array([[tk1_t, tk1_Z], [vk1_t, vk1_Z]])
    return down @ up


def explicit_upward_1_1c(sol: OrbitSolution) -> np.ndarray:
    """Bottom-to-top Jacobian of a 1:1c orbit written out term by term.

    Sums every dependency path from ``(t0, Zdot0)`` through the two
    switching times and displacements to the top impact, rather than
    multiplying per-leg matrices.
    """
    if sol.itinerary.label != "1:1c":
        raise ValueError("explicit chain only available for the 1:1c orbit")
    p, phi, r = sol.params, sol.phi, sol.params.r
    Lp, Lm = p.L_plus, p.L_minus
    t0, t1, t2, tk = sol.times[:4]
    Zd0 = sol.Zdot_init
    dt0, dt1, dtk = t1 - t0, t2 - t1, tk - t2
    f = lambda t: _f(t, phi)  # noqa: E731
    F1 = lambda t: _F1(t, phi)  # noqa: E731
    # bottom wall to first switching time
    t1_t0 = (f(t0) - Lm) / (f(t1) - Lm)
    t1_Z = r / (f(t1) - Lm)
    Z1_Z = -r * dt0
    Z1_t0 = F1(t1) - F1(t0) - f(t0) * dt0
    Z1_t1 = -r * Zd0 + F1(t1) - F1(t0) - Lm * dt0
    # loop in Z' > 0
    t2_t1 = (f(t1) - Lp) / (f(t2) - Lp)
    Z2_Z1 = 1.0
    Z2_t1 = F1(t2) - F1(t1) - f(t1) * dt1
    Z2_t2 = F1(t2) - F1(t1) - Lp * dt1
    # second switching time to the top wall
    vk = F1(tk) - F1(t2) - Lm * dtk
    tk_Z2 = -1.0 / vk
    tk_t2 = (-Z2_t2 + f(t2) * dtk - Lm * dtk) / vk
    vk_t2 = -f(t2) + Lm  # at fixed arrival time
    vk_tk = f(tk) - Lm

    def tk_of(t1_x, Z1_x):
        return (tk_t2 * t2_t1 * t1_x
                + tk_Z2 * (Z2_t2 * t2_t1 * t1_x + Z2_t1 * t1_x + Z2_Z1 * Z1_x + Z2_Z1 * Z1_t1 * t1_x))

    tk_t0 = tk_of(t1_t0, Z1_t0)
    tk_Zd = tk_of(t1_Z, Z1_Z)
    vk_t0 = vk_t2 * t2_t1 * t1_t0 + vk_tk * tk_t0
    vk_Zd = vk_t2 * t2_t1 * t1_Z + vk_tk * tk_Zd
    return np.array([[tk_t0, tk_Zd], [vk_t0, vk_Zd]])


STABILITY_FIELDS = ["d", "label", "eig1_re", "eig1_im", "eig2_re", "eig2_im", "classification", "margin"]


def write_stability_csv(path, reports: Sequence[StabilityReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STABILITY_FIELDS)
        for rep in reports:
            e = list(rep.eigenvalues) + [complex("nan")] * (2 - len(rep.eigenvalues))
            w.writerow([repr(float(rep.d)), rep.label, repr(float(e[0].real)), repr(float(e[0].imag)),
                        repr(float(e[1].real)), repr(float(e[1].imag)), rep.classification.value,
                        repr(float(rep.margin))])


def read_stability_csv(path) -> List[StabilityReport]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            eigs = np.array([complex(float(row["eig1_re"]), float(row["eig1_im"])),
                             complex(float(row["eig2_re"]), float(row["eig2_im"]))])
            out.append(StabilityReport(eigs, Classification(row["classification"]), float(row["margin"]),
                                       label=row["label"], d=float(row["d"])))
    return out
