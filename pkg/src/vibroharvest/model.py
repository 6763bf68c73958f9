"""Physical and dimensionless parameters of the inclined capsule harvester.

The relative coordinate ``Z`` (capsule minus bullet, scaled) obeys

    Z'' = cos(pi t + phi) - L

with ``L = L_plus`` while ``Z' > 0`` and ``L = L_minus`` while ``Z' < 0``.
Time is scaled so that one forcing period has length ``T = 2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

GRAVITY = 9.8
PERIOD = 2.0


class ParameterError(ValueError):
    """Raised when parameters fall outside the supported regime."""


@dataclass(frozen=True)
class PhysicalParams:
    """Dimensional description of the capsule, bullet and forcing.

    Parameters
    ----------
    A : float
        Forcing amplitude (N).
    M : float
        Capsule mass (kg).
    s : float
        Capsule length (m).
    omega : float
        Forcing angular frequency (rad/s).
    beta : float
        Inclination angle (rad).
    mu_k : float
        Kinetic friction coefficient.
    r : float
        Coefficient of restitution.
    m : float
        Bullet mass (kg). Recorded only, never enters the relative dynamics.
    g : float
        Gravitational acceleration (m/s^2).
    phi : float
        Forcing phase (rad).
    """

    A: float
    M: float = 0.1245
    s: float = 0.5
    omega: float = 5.0 * math.pi
    beta: float = math.pi / 4
    mu_k: float = 0.5
    r: float = 0.5
    m: float = 0.0035
    g: float = GRAVITY
    phi: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.r < 1.0:
            raise ParameterError(f"restitution r={self.r} must lie in (0, 1)")
        if self.mu_k < 0.0:
            raise ParameterError(f"mu_k={self.mu_k} must be nonnegative")
        if not 0.0 <= self.beta < math.pi / 2:
            raise ParameterError(f"beta={self.beta} must lie in [0, pi/2)")
        for name in ("A", "M", "omega", "s", "m", "g"):
            if not getattr(self, name) > 0.0:
                raise ParameterError(f"{name}={getattr(self, name)} must be positive")

    @property
    def eta(self) -> float:
        """Bullet to capsule mass ratio."""
        return self.m / self.M

    def with_d(self, d: float, vary: str = "A") -> "PhysicalParams":
        """Return a copy whose dimensionless length equals ``d``.

        ``vary`` selects which dimensional quantity absorbs the change,
        either the amplitude ``"A"`` (fixed length) or the length ``"s"``.
        """
        if d <= 0.0:
            raise ParameterError(f"d={d} must be positive")
        k = self.M * self.omega**2 / math.pi**2
        if vary == "A":
            return replace(self, A=k * self.s / d)
        if vary == "s":
            return replace(self, s=d * self.A / k)
        raise ParameterError(f"cannot vary {vary!r}; choose 'A' or 's'")


@dataclass(frozen=True)
class NondimParams:
    """Dimensionless system on which every computation runs.

    Attributes
    ----------
    d : float
        Dimensionless capsule length, walls at ``Z = +d/2`` (bottom) and
        ``Z = -d/2`` (top).
    L_plus, L_minus : float
        Constant net forces while ``Z' > 0`` and ``Z' < 0``.
    r : float
        Coefficient of restitution.
    phi : float
        Forcing phase.
    """

    d: float
    L_plus: float
    L_minus: float
    r: float
    phi: float = 0.0
    T: float = field(default=PERIOD)

    def __post_init__(self) -> None:
        if not self.d > 0.0:
            raise ParameterError(f"d={self.d} must be positive")
        if not 0.0 < self.r < 1.0:
            raise ParameterError(f"restitution r={self.r} must lie in (0, 1)")
        if self.L_minus > self.L_plus:
            raise ParameterError("L_minus must not exceed L_plus")
        for name in ("L_plus", "L_minus"):
            val = getattr(self, name)
            if not -1.0 < val < 1.0:
                raise ParameterError(
                    f"{name}={val:.6g} outside (-1, 1): forcing can no longer "
                    "overcome the constant load"
                )

    @property
    def g1bar(self) -> float:
        """Dimensionless gravity term."""
        return -0.5 * (self.L_plus + self.L_minus)

    @property
    def g2bar(self) -> float:
        """Dimensionless friction term."""
        return 0.5 * (self.L_plus - self.L_minus)

    @property
    def slide_enter_phase(self) -> float:
        """Phase ``arccos(L_plus)`` at which the forcing enters the sliding band."""
        return math.acos(self.L_plus)

    @property
    def slide_exit_phase(self) -> float:
        """Phase ``arccos(L_minus)`` at which sliding ends towards ``Z' < 0``."""
        return math.acos(self.L_minus)

    @property
    def max_slide_duration(self) -> float:
        """Longest possible sliding interval in dimensionless time."""
        return (self.slide_exit_phase - self.slide_enter_phase) / math.pi

    def with_phi(self, phi: float) -> "NondimParams":
        return replace(self, phi=phi)


def nondimensionalize(p: PhysicalParams) -> NondimParams:
    """Map dimensional parameters onto the dimensionless system.

    Raises
    ------
    ParameterError
        If either constant force leaves ``(-1, 1)``.
    """
    d = p.M * p.omega**2 * p.s / (p.A * math.pi**2)
    g1 = p.M * p.g * math.sin(p.beta) / p.A
    g2 = p.M * p.mu_k * p.g * math.cos(p.beta) / p.A
    return NondimParams(d=d, L_plus=-(g1 - g2), L_minus=-(g1 + g2), r=p.r, phi=p.phi)


@dataclass(frozen=True)
class Forcing:
    """Harmonic forcing ``cos(pi t + phi)`` and its first two antiderivatives."""

    phi: float = 0.0

    def f(self, t):
        return np.cos(np.pi * t + self.phi)

    def F1(self, t):
        return np.sin(np.pi * t + self.phi) / np.pi

    def F2(self, t):
        return -np.cos(np.pi * t + self.phi) / np.pi**2


def forcing_eval(t: float, phi: float) -> Tuple[float, float, float]:
    """Return ``(f, F1, F2)`` at time ``t`` for phase ``phi``."""
    c = math.cos(math.pi * t + phi)
    return c, math.sin(math.pi * t + phi) / math.pi, -c / math.pi**2


def phase(t, phi: float):
    """Forcing phase ``pi t + phi`` reduced to ``[0, 2 pi)``."""
    return np.mod(np.pi * np.asarray(t) + phi, 2.0 * np.pi)


def wrap_angle(x):
    """Reduce an angle difference to ``[-pi, pi)``."""
    return np.mod(np.asarray(x) + np.pi, 2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class ParamFamily:
    """One-parameter family of systems indexed by the dimensionless length.

    Parameters
    ----------
    base : PhysicalParams
        Template whose fields other than the varied one stay fixed.
    vary : str
        ``"A"`` sweeps the amplitude at fixed length, ``"s"`` the length at
        fixed amplitude.
    """

    base: PhysicalParams
    vary: str = "A"

    def physical(self, d: float) -> PhysicalParams:
        return self.base.with_d(d, self.vary)

    def __call__(self, d: float) -> NondimParams:
        return nondimensionalize(self.physical(d))
