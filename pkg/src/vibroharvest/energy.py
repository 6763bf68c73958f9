"""Output voltage of the dielectric membranes from impact velocities.

Each impact deflects a membrane by ``delta`` (kinetic energy of the bullet
against the membrane stiffness), which stretches its area and changes the
capacitive output voltage. Averages are taken per impact and per unit of
dimensionless time over a recording window.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

from .model import PhysicalParams


class NoImpacts(ValueError):
    """Raised when a per-impact average is requested for an impact-free window."""


@dataclass(frozen=True)
class EnergyParams:
    """Membrane and circuit constants.

    Parameters
    ----------
    U_in : float
        Constant input voltage (mV).
    R_c : float
        Undeformed membrane radius (mm).
    R_b : float
        Bullet radius (mm).
    K : float
        Membrane elastic parameter.
    nu : float
        Elastic exponent parameter.
    m : float
        Bullet mass (kg).
    angle_model : str
        ``"table"`` evaluates the published contact-angle expression as
        printed; ``"tangent"`` uses the angle at which a straight membrane
        from the rim touches the bullet (see ``cos_alpha_tangent``).
    """

    U_in: float = 2000.0
    R_c: float = 6.3
    R_b: float = 5.0
    K: float = 4.0847e5
    nu: float = 2.6
    m: float = 0.0035
    angle_model: str = "table"

    def __post_init__(self) -> None:
        for name in ("U_in", "R_c", "R_b", "K", "nu", "m"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name}={getattr(self, name)} must be positive")
        if self.angle_model not in ("table", "tangent"):
            raise ValueError(f"unknown angle_model {self.angle_model!r}")


def velocity_scale(phys: PhysicalParams) -> float:
    """Factor turning a dimensionless relative velocity into m/s.

    Displacements scale with ``A / (M omega^2)`` and time with ``pi / omega``,
    so velocities scale with ``A pi / (M omega)``.
    """
    return phys.A * math.pi / (phys.M * phys.omega)


def deflection_mm(V: float, ep: EnergyParams) -> float:
    """Largest membrane deflection (mm) for a dimensional impact speed ``V`` (m/s)."""
    delta_m = (ep.nu + 1.0) * ep.m * V * V / (2.0 * ep.K)
    return 1e3 * delta_m


def cos_alpha(delta: float, ep: EnergyParams) -> float:
    """Cosine of the membrane contact angle as published, clamped to ``[-1, 1]``.

    The expression mixes lengths and squared lengths, so its value depends
    on the unit of ``delta``; lengths are in mm here. For deflections below
    roughly 0.76 mm it exceeds one and clamps to an undeformed membrane;
    just beyond, the denominator changes sign and it clamps to minus one
    until it re-enters the range at deflections of a few millimetres.
    """
    Rb, Rc = ep.R_b, ep.R_c
    num = -2.0 * Rb * (delta - Rb) + 2.0 * Rc
    den = math.sqrt(Rc * Rc + (delta - Rb) ** 2) - 2.0 * delta * Rb
    if den == 0.0:
        return 1.0 if num >= 0.0 else -1.0
    return max(-1.0, min(1.0, num / den))


def cos_alpha_tangent(delta: float, ep: EnergyParams) -> float:
    """Cosine of the contact angle for a membrane running straight from the
    rim to its tangent point on the bullet, which sits ``delta`` deep.

    Reduces to one at ``delta = 0``.
    """
    Rb, Rc = ep.R_b, ep.R_c
    h = delta - Rb  # depth of the bullet centre below the rim plane
    D2 = Rc * Rc + h * h
    c = (-Rb * h + Rc * math.sqrt(max(D2 - Rb * Rb, 0.0))) / D2
    return max(-1.0, min(1.0, c))


def membrane_area(c: float, ep: EnergyParams) -> float:
    """Deformed membrane area (mm^2) for contact-angle cosine ``c``."""
    s2 = 1.0 - c * c
    return (2.0 * math.pi * ep.R_b**2 * (1.0 - c) + math.pi * ep.R_c**2
            - math.pi * ep.R_b**2 * s2 * c)


def impact_voltage(Zdot: float, phys: PhysicalParams, ep: EnergyParams = EnergyParams()) -> float:
    """Net output voltage ``U_k`` (mV) of one impact with dimensionless speed ``Zdot``."""
    V = velocity_scale(phys) * abs(Zdot)
    delta = deflection_mm(V, ep)
    c = cos_alpha(delta, ep) if ep.angle_model == "table" else cos_alpha_tangent(delta, ep)
    area = membrane_area(c, ep)
    U_imp = (area / (math.pi * ep.R_c**2)) ** 2 * ep.U_in
    return U_imp - ep.U_in


@dataclass
class EnergyMetrics:
    """Per-impact voltages and their two averages over a window.

    ``U_bar_I`` is ``None`` when the window holds no impact.
    """

    per_impact: List[Tuple[float, float]]
    U_bar_I: Optional[float]
    U_bar_T: float
    window: Tuple[float, float]
    N: int = field(init=False)

    def __post_init__(self) -> None:
        self.N = len(self.per_impact)


def average_metrics(impacts: Sequence[Tuple[float, float]], window: Tuple[float, float],
                    phys: PhysicalParams, ep: EnergyParams = EnergyParams()) -> EnergyMetrics:
    """Voltage averages for impacts ``(t_k, Zdot_k)`` inside ``window``.

    Impacts outside the window are ignored. An empty window gives
    ``U_bar_I = None`` and ``U_bar_T = 0``; use ``require_impacts`` to turn
    that into a ``NoImpacts`` error.
    """
    t0, tf = window
    if not tf > t0:
        raise ValueError("window must have positive length")
    per = [(float(t), impact_voltage(v, phys, ep)) for t, v in impacts if t0 <= t <= tf]
    total = float(sum(u for _, u in per))
    U_I = total / len(per) if per else None
    return EnergyMetrics(per, U_I, total / (tf - t0), (t0, tf))


def require_impacts(metrics: EnergyMetrics) -> float:
    """Return ``U_bar_I`` or raise ``NoImpacts``."""
    if metrics.U_bar_I is None:
        raise NoImpacts(f"no impacts in window {metrics.window}")
    return metrics.U_bar_I


def metrics_from_records(records: Iterable, window: Tuple[float, float], phys: PhysicalParams,
                         ep: EnergyParams = EnergyParams()) -> EnergyMetrics:
    """Averages from simulator impact records (anything with ``t`` and ``Zdot``)."""
    return average_metrics([(r.t, r.Zdot) for r in records], window, phys, ep)


def orbit_metrics(sol, phys: PhysicalParams, ep: EnergyParams = EnergyParams()) -> EnergyMetrics:
    """Averages over one full period ``pT`` of a solved periodic orbit."""
    span = sol.itinerary.p * sol.params.T
    impacts = [(t % span, v) for t, v, _ in sol.impact_velocities()]
    return average_metrics(impacts, (0.0, span), phys, ep)


ENERGY_FIELDS = ["d", "mu_k", "N", "U_bar_I", "U_bar_T"]


def write_energy_csv(path, rows: Sequence[Tuple[float, float, EnergyMetrics]]) -> None:
    """Summary rows ``(d, mu_k, metrics)``; an empty window writes ``nan`` for ``U_bar_I``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ENERGY_FIELDS)
        for d, mu, m in rows:
            UI = m.U_bar_I if m.U_bar_I is not None else float("nan")
            w.writerow([repr(float(d)), repr(float(mu)), m.N, repr(float(UI)), repr(float(m.U_bar_T))])


def write_impact_detail_csv(path, impacts: Sequence[Tuple[float, float]], phys: PhysicalParams,
                            ep: EnergyParams = EnergyParams()) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "Zdot", "U"])
        for t, v in impacts:
            w.writerow([repr(float(t)), repr(float(v)), repr(impact_voltage(v, phys, ep))])


def read_energy_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return [{"d": float(r["d"]), "mu_k": float(r["mu_k"]), "N": int(r["N"]),
                 "U_bar_I": float(r["U_bar_I"]), "U_bar_T": float(r["U_bar_T"])}
                for r in csv.DictReader(fh)]
