import math

import numpy as np
import pytest

from vibroharvest.flow import EventKind
from vibroharvest.orbits import (LegKind, NoConvergence, Itinerary, UnknownItinerary, build_solution,
                                 check_physicality, find_orbits, read_orbits_csv, replay, residual_1_1,
                                 residual_1_1_c, residual_1_1_cs, residual_1_1_qform, residual_1_1_s,
                                 residual_2T, residual_for, residual_generic, seed_from_simulation,
                                 solve_orbit, walk, write_orbits_csv)

from helpers import critical

# ------------------------------------------------------------ itineraries


def test_labels_build_composable_legs():
    it = Itinerary.from_label("1:1cs")
    assert it.legs == (LegKind.GP_S, LegKind.SS_PLUS, LegKind.SS_SLIDE, LegKind.S_GM, LegKind.GM_GP)
    assert it.p == 1 and it.n_unknowns == 6
    assert it.s_indicator() == [1, 1, 0, 1, 1]
    assert it.expected_events() == [EventKind.CROSS_UP, EventKind.SLIDE_START, EventKind.SLIDE_END,
                                    EventKind.IMPACT_TOP, EventKind.IMPACT_BOTTOM]
    mixed = Itinerary.from_label("1:1-1:1s/2T")
    assert mixed.p == 2 and mixed.halves == ("", "s")
    assert len(mixed.legs) == 6
    assert Itinerary.from_label("1:1c/2T").halves == ("c", "c")


@pytest.mark.parametrize("label", ["2:1", "1:1x", "1:1-1:1s", "1:1/4T", "0:1cs", ""])
def test_unsupported_labels_rejected(label):
    with pytest.raises(UnknownItinerary):
        Itinerary.from_label(label)


@pytest.mark.parametrize("legs", [
    (LegKind.GP_GM, LegKind.GP_GM),
    (LegKind.GM_GP,),
    (LegKind.GP_S, LegKind.SS_SLIDE, LegKind.SS_SLIDE, LegKind.S_GM, LegKind.GM_GP),
    (),
])
def test_invalid_leg_sequences_rejected(legs):
    with pytest.raises(UnknownItinerary):
        Itinerary("custom", tuple(legs))


def test_unknown_count_checked(fam_main):
    with pytest.raises(ValueError):
        walk([0.5, 0.1], Itinerary.from_label("1:1"), fam_main(0.3))


# ------------------------------------------------- simulator-extracted orbits

@pytest.mark.parametrize("label, d", [
    ("1:1", 0.30), ("1:1s", 0.2432), ("1:1c", 0.2255), ("1:1cs", 0.241),
    ("1:1/2T", 0.2654), ("1:1-1:1s/2T", 0.2603),
])
def test_simulated_orbit_satisfies_reduced_system(fam_main, label, d):
    itin = Itinerary.from_label(label)
    x = seed_from_simulation(itin, fam_main(d), transient_periods=400)
    assert x is not None, f"no {label} in the simulated steady state"
    assert np.linalg.norm(residual_for(itin)(x, fam_main(d))) <= 1e-6


@pytest.mark.parametrize("label", ["1:1", "1:1s", "1:1c", "1:1cs"])
def test_reduced_system_matches_generic_walk_roots(reference_orbits, label):
    sol = reference_orbits[label]
    assert sol.residual_norm <= 1e-10
    assert np.linalg.norm(residual_generic(sol.x, sol.itinerary, sol.params)) <= 1e-9


def test_perturbed_velocity_leaves_the_root(reference_orbits):
    sol = reference_orbits["1:1"]
    x = sol.x.copy()
    x[0] += 0.1
    assert np.linalg.norm(residual_1_1(x, sol.params)) > 1e-3


def test_wrong_arccos_branch_rejected(reference_orbits):
    sol = reference_orbits["1:1s"]
    p = sol.params
    x = sol.x.copy()
    t_exit = sol.times[2]
    # move the exit to the mirror phase, where the forcing equals L- while decreasing
    mirror = (2 * math.pi - p.slide_exit_phase - sol.phi) / math.pi
    while mirror < sol.times[1]:
        mirror += 2.0
    x[3] += mirror - t_exit
    assert abs(residual_1_1_s(x, p)[1]) > 0.5
    assert np.linalg.norm(residual_1_1_s(x, p)) > 0.1


def test_crossing_conditions_at_solution(reference_orbits):
    sol = reference_orbits["1:1c"]
    p = sol.params
    t1, t2 = sol.times[1], sol.times[2]
    assert math.cos(math.pi * t1 + sol.phi) > p.L_plus
    assert math.cos(math.pi * t2 + sol.phi) < p.L_minus
    assert sol.physical and not sol.violations


# -------------------------------------------------------------- q-form

def _qform_point(sol):
    return np.array([sol.Zdot_init, sol.dts[0] / sol.params.T, sol.phi])


@pytest.mark.parametrize("which", ["friction", "frictionless"])
def test_qform_vanishes_at_roots(reference_orbits, fam_frictionless, which):
    if which == "friction":
        sol = reference_orbits["1:1"]
    else:
        itin = Itinerary.from_label("1:1")
        p = fam_frictionless(0.30)
        sol = solve_orbit(itin, seed_from_simulation(itin, p), p)
        assert p.L_plus == p.L_minus
    assert np.linalg.norm(residual_1_1_qform(_qform_point(sol), sol.params)) <= 1e-10


def test_qform_unit_fraction_is_infeasible(reference_orbits):
    sol = reference_orbits["1:1"]
    p = sol.params
    x = np.array([sol.Zdot_init, sol.phi, p.T])
    bad = build_solution(sol.itinerary, x, p)
    feasible, physical, viol = check_physicality(bad)
    assert not feasible and not physical
    assert [v.code for v in viol] == ["NONPOSITIVE_DURATION"]


# --------------------------------------------------- degeneration chain

def test_grazing_sliding_joins_one_one_and_sliding(ladder, fam_main):
    bp = critical(ladder, "one_past_pd", "GrazingSlidingSigma")
    sol = bp.solution
    t_sig = bp.witness
    up = sol.dts[0]
    x_s = np.array([sol.Zdot_init, sol.phi, t_sig, 0.0, up - t_sig])
    p = fam_main(bp.d_star)
    assert np.linalg.norm(residual_1_1_s(x_s, p)) <= 1e-6
    root = solve_orbit(Itinerary.from_label("1:1s"), x_s, p, check=False)
    assert abs(root.dts[1]) <= 1e-6
    assert abs(root.Zdot_init - sol.Zdot_init) <= 1e-6
    assert abs(math.remainder(root.phi - sol.phi, 2 * math.pi)) <= 1e-6


def test_switching_sliding_joins_sliding_and_cross_slide(ladder, fam_main):
    bp = critical(ladder, "s", "SwitchingSliding")
    sol = bp.solution
    Zd, phi, dt0, dt1, dt2 = sol.x
    x_cs = np.array([Zd, phi, dt0, 0.0, dt1, dt2])
    p = fam_main(bp.d_star)
    assert np.linalg.norm(residual_1_1_cs(x_cs, p)) <= 1e-6
    root = solve_orbit(Itinerary.from_label("1:1cs"), x_cs, p, check=False)
    assert abs(root.dts[1]) <= 1e-6
    assert abs(root.Zdot_init - Zd) <= 1e-6


def test_crossing_sliding_joins_cross_slide_and_crossing(ladder, fam_main):
    bp = critical(ladder, "cs", "CrossingSliding")
    sol = bp.solution
    Zd, phi, dt0, dt1, dt2, dt3 = sol.x
    assert abs(dt2) <= 1e-6
    x_c = np.array([Zd, phi, dt0, dt1, dt3])
    p = fam_main(bp.d_star)
    assert np.linalg.norm(residual_1_1_c(x_c, p)) <= 1e-6
    root = solve_orbit(Itinerary.from_label("1:1c"), x_c, p, check=False)
    assert np.max(np.abs(root.x - x_c)) <= 1e-6


def test_period_one_orbit_embedded_twice(reference_orbits):
    sol = reference_orbits["1:1"]
    p = sol.params
    itin2 = Itinerary.from_label("1:1/2T")
    x2 = np.array([sol.Zdot_init, sol.phi, sol.dts[0], sol.dts[1], sol.dts[0]])
    r2 = residual_2T(x2, p, itin2)
    r1 = residual_generic(sol.x, sol.itinerary, p)
    assert np.allclose(r2, np.concatenate((r1[:2], r1[:2], r1[2:])), atol=1e-12)
    assert np.linalg.norm(r2) <= 1e-9
    with pytest.raises(UnknownItinerary):
        residual_2T(sol.x, p, sol.itinerary)


# ------------------------------------------------------- physicality

def test_stable_orbit_physical(reference_orbits):
    sol = reference_orbits["1:1"]
    assert check_physicality(sol) == (True, True, [])


@pytest.mark.parametrize("label", sorted({"1:1", "1:1s", "1:1c", "1:1cs", "1:1/2T", "1:1-1:1s/2T",
                                          "1:1-1:1cs/2T", "1:1c/2T"}))
def test_reference_orbits_replay_exactly(reference_orbits, label):
    sol = reference_orbits[label]
    assert sol.physical, [str(v) for v in sol.violations]
    rep = replay(sol)
    assert rep.matches
    assert rep.max_time_error <= 1e-8 and rep.max_velocity_error <= 1e-8


def test_one_one_below_grazing_touches_switching_surface(ladder, fam_main):
    bp = critical(ladder, "one_past_pd", "GrazingSlidingSigma")
    p = fam_main(bp.d_star - 0.002)
    sol = solve_orbit(Itinerary.from_label("1:1"), bp.solution.x, p)
    assert sol.feasible and not sol.physical
    codes = {v.code for v in sol.violations}
    assert "SIGMA_REACHED" in codes
    assert "REPLAY_MISMATCH" in codes


def test_sliding_orbit_below_switching_point_unphysical(ladder, fam_main):
    bp = critical(ladder, "s", "SwitchingSliding")
    p = fam_main(bp.d_star - 0.001)
    sol = solve_orbit(Itinerary.from_label("1:1s"), bp.solution.x, p)
    assert sol.feasible and not sol.physical
    onset = [v for v in sol.violations if v.code == "ONSET_OUTSIDE_SLIDING_BAND"]
    assert onset and onset[0].value > p.L_plus


def test_unphysical_sliding_root_beside_physical_cross_slide(fam_main):
    p = fam_main(0.2413)
    s_roots = find_orbits(Itinerary.from_label("1:1s"), p, seed_from="grid")
    assert s_roots and not any(r.physical for r in s_roots)
    codes = {v.code for r in s_roots for v in r.violations}
    assert {"ONSET_OUTSIDE_SLIDING_BAND", "REPLAY_MISMATCH"} <= codes
    cs_roots = find_orbits(Itinerary.from_label("1:1cs"), p)
    assert any(r.physical for r in cs_roots)


def test_replay_flags_timing_drift(fam_main):
    # a cross-then-slide root whose onset lies outside the band logs the
    # right event kinds but at the wrong times
    p = fam_main(0.24133)
    bad = [r for r in find_orbits(Itinerary.from_label("1:1cs"), p, seed_from="grid") if not r.physical]
    assert bad
    for r in bad:
        rep = replay(r)
        assert not rep.matches and rep.witness is not None
        assert "REPLAY_MISMATCH" in {v.code for v in r.violations}


def test_doubled_crossing_root_passing_bottom_wall(fam_main):
    p = fam_main(0.1961)
    roots = find_orbits(Itinerary.from_label("1:1c/2T"), p, seed_from="grid")
    bad = [r for r in roots if not r.physical]
    good = [r for r in roots if r.physical]
    assert len(roots) >= 2
    assert any({"GAMMA_PLUS_EXCEEDED", "REPLAY_MISMATCH"} <= {v.code for v in r.violations}
               for r in bad)
    assert good
    for r in roots:
        assert r.residual_norm <= 1e-10


def test_solver_failure_reports_residual(fam_main):
    with pytest.raises(NoConvergence) as exc:
        solve_orbit(Itinerary.from_label("1:1"), [np.nan, 0.0, 1.0], fam_main(0.3))
    assert "non-finite" in str(exc.value)
    with pytest.raises(NoConvergence) as exc:
        solve_orbit(Itinerary.from_label("1:1s"), [5.0, 0.0, 1e-3, 1e-3, 1e-3], fam_main(0.3))
    assert exc.value.residual > 1e-10


def test_find_orbits_rejects_unknown_seeding(fam_main):
    with pytest.raises(ValueError):
        find_orbits(Itinerary.from_label("1:1"), fam_main(0.3), seed_from="random")


def test_orbit_csv_round_trip(tmp_path, reference_orbits):
    sols = list(reference_orbits.values())
    path = tmp_path / "orbits.csv"
    write_orbits_csv(path, sols)
    rows = read_orbits_csv(path)
    assert len(rows) == len(sols)
    for row, sol in zip(rows, sols):
        assert row["label"] == sol.label
        assert row["d"] == sol.d and row["Zdot_init"] == sol.Zdot_init and row["phi"] == sol.phi
        assert row["dts"] == [float(v) for v in sol.dts]
        assert row["physical"] == sol.physical
        assert row["violations"] == [v.code for v in sol.violations]
