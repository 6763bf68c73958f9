"""Shared fixtures: parameter families, reference orbits and critical-point runs.

Expensive computations (branch continuations behind the critical values)
are session-scoped so the unit and acceptance suites share them.
"""
import math
from pathlib import Path

import pytest

from vibroharvest.cli import run_branch
from vibroharvest.config import load_config
from vibroharvest.model import ParamFamily, PhysicalParams
from vibroharvest.orbits import Itinerary, seed_from_simulation, solve_orbit

from helpers import ACCEPTANCE_LINES

RECIPES = Path(__file__).resolve().parent.parent / "recipes"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def fam_main():
    """mu_k = 0.5, beta = pi/4, r = 0.5, swept through the amplitude."""
    return ParamFamily(PhysicalParams(A=3.0))


@pytest.fixture(scope="session")
def fam_frictionless():
    return ParamFamily(PhysicalParams(A=3.0, mu_k=0.0))


@pytest.fixture(scope="session")
def fam_low_r():
    """beta = pi/6, r = 0.25 set, mu_k = 0.5."""
    return ParamFamily(PhysicalParams(A=6.0, beta=math.pi / 6, r=0.25))


@pytest.fixture(scope="session")
def fam_slow():
    """omega = 2 pi, beta = pi/12, r = 0.3, A = 1.5 with the length varied, mu_k = 0.2."""
    return ParamFamily(PhysicalParams(A=1.5, s=1.0, omega=2 * math.pi, beta=math.pi / 12, r=0.3,
                                      mu_k=0.2), vary="s")


REFERENCE_ORBITS = {
    "1:1": 0.30,
    "1:1s": 0.2432,
    "1:1c": 0.2255,
    "1:1cs": 0.2415,
    "1:1/2T": 0.2654,
    "1:1-1:1s/2T": 0.2603,
    "1:1-1:1cs/2T": 0.255,
    "1:1c/2T": 0.2148,
}


@pytest.fixture(scope="session")
def reference_orbits(fam_main):
    """Stable orbit of each family on the mu_k = 0.5 set, seeded from the simulator."""
    out = {}
    for label, d in REFERENCE_ORBITS.items():
        itin = Itinerary.from_label(label)
        p = fam_main(d)
        guess = seed_from_simulation(itin, p)
        assert guess is not None, f"simulator shows no {label} at d={d}"
        out[label] = solve_orbit(itin, guess, p)
    return out


def _run_recipe_branches(name):
    cfg = load_config(RECIPES / name)
    results = {}
    for bc in cfg.branches:
        for mu in (bc.mu_values or cfg.mu_values()):
            results[(bc.name, mu)] = run_branch(cfg, bc, mu, cfg.solver.seed_from)
    return results


@pytest.fixture(scope="session")
def ladder():
    """Branches and critical points of the mu_k = 0.5 diagram recipe."""
    return _run_recipe_branches("fig05.ini")


@pytest.fixture(scope="session")
def pd_by_friction():
    """Period doubling of the 1:1 branch for each friction value of the amplitude diagrams."""
    return _run_recipe_branches("fig04.ini")


@pytest.fixture(scope="session")
def low_r_critical():
    """Branches and critical points of the beta = pi/6, r = 0.25 recipe."""
    return _run_recipe_branches("fig10.ini")


@pytest.fixture(scope="session")
def slow_critical():
    """Period doublings and fold of the omega = 2 pi recipe."""
    return _run_recipe_branches("fig08.ini")

