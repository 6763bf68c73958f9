import math

import numpy as np
import pytest

from vibroharvest.orbits import LEG_INFO, Itinerary, LegKind, seed_from_simulation, solve_orbit
from vibroharvest.flow import Region
from vibroharvest.stability import (Classification, SingularDenominator, classify, compose,
                                    explicit_upward_1_1c, jacobian_leg, leg_partials, monodromy,
                                    qform_jacobian_1_1, read_stability_csv, stability,
                                    write_stability_csv)

from helpers import fd_leg_jacobian, fd_return_map_jacobian, rel_err


@pytest.mark.parametrize("eigs, expected", [
    ((0.3, -0.7), Classification.STABLE),
    ((0.2, -1.05), Classification.UNSTABLE_PD),
    ((1.02, 0.4), Classification.UNSTABLE_FOLD),
    ((1.1 + 0.2j, 1.1 - 0.2j), Classification.UNSTABLE_COMPLEX),
    ((1.0 - 1e-10, 0.5), Classification.MARGINAL),
    ((-1.0 + 5e-9, 0.1), Classification.MARGINAL),
])
def test_classification_examples(eigs, expected):
    rep = classify(eigs)
    assert rep.classification is expected
    assert rep.margin == pytest.approx(max(abs(complex(e)) for e in eigs) - 1.0)


def test_classify_accepts_matrix():
    rep = classify(np.diag([0.5, -0.25]))
    assert rep.stable and sorted(rep.eigenvalues.real) == [-0.25, 0.5]


def test_sliding_leg_forgets_incoming_time(reference_orbits):
    sol = reference_orbits["1:1s"]
    J = jacobian_leg(1, sol)
    assert sol.itinerary.legs[1] is LegKind.SS_SLIDE
    assert np.array_equal(J, np.array([[0.0, 0.0], [0.0, 1.0]]))
    # the exit time does not depend on anything upstream, so the full
    # monodromy has rank one
    assert abs(np.linalg.det(monodromy(sol).entries)) <= 1e-14


def _leg_inputs(sol, j):
    src = LEG_INFO[sol.itinerary.legs[j]][0]
    t0 = float(sol.times[j])
    u = float(sol.Z[j]) if src == "S" else float(sol.Zdot[j])
    if j == 0:
        u = sol.Zdot_init
    return t0, u


@pytest.mark.parametrize("label", ["1:1", "1:1s", "1:1c", "1:1cs", "1:1/2T", "1:1-1:1s/2T",
                                   "1:1-1:1cs/2T", "1:1c/2T"])
def test_leg_jacobians_match_finite_differences(reference_orbits, label):
    sol = reference_orbits[label]
    p = sol.params.with_phi(sol.phi)
    for j, leg in enumerate(sol.itinerary.legs):
        if LEG_INFO[leg][2] is Region.SLIDING:
            continue
        J = jacobian_leg(j, sol)
        ref = fd_leg_jacobian(leg, *_leg_inputs(sol, j), p)
        assert rel_err(J, ref) <= 1e-5, (label, j, leg.value, J, ref)


@pytest.mark.parametrize("label", ["1:1", "1:1s", "1:1c", "1:1cs", "1:1/2T", "1:1c/2T"])
def test_monodromy_matches_return_map(reference_orbits, label):
    sol = reference_orbits[label]
    M = monodromy(sol).entries
    assert rel_err(M, fd_return_map_jacobian(sol)) <= 1e-5


def test_monodromy_is_ordered_product(reference_orbits):
    for sol in reference_orbits.values():
        mono = monodromy(sol)
        prod = np.eye(2)
        for J in mono.legs:
            prod = J @ prod
        assert np.max(np.abs(prod - mono.entries)) <= 1e-12 * max(1.0, np.max(np.abs(prod)))


def test_qform_jacobian_equivalent_without_friction(fam_frictionless):
    itin = Itinerary.from_label("1:1")
    for d in (0.30, 0.35, 0.42):
        p = fam_frictionless(d)
        sol = solve_orbit(itin, seed_from_simulation(itin, p), p)
        M = monodromy(sol).entries
        assert np.max(np.abs(qform_jacobian_1_1(sol) - M)) <= 1e-12


def test_qform_jacobian_with_friction(reference_orbits):
    sol = reference_orbits["1:1"]
    assert np.max(np.abs(qform_jacobian_1_1(sol) - monodromy(sol).entries)) <= 1e-12
    with pytest.raises(ValueError):
        qform_jacobian_1_1(reference_orbits["1:1s"])


def test_crossing_chain_association_orders(reference_orbits):
    sol = reference_orbits["1:1c"]
    J0, J1, J2 = (jacobian_leg(j, sol) for j in range(3))
    left = (J2 @ J1) @ J0
    right = J2 @ (J1 @ J0)
    explicit = explicit_upward_1_1c(sol)
    assert np.max(np.abs(left - right)) <= 1e-12
    assert np.max(np.abs(explicit - compose([J0, J1, J2]))) <= 1e-12
    with pytest.raises(ValueError):
        explicit_upward_1_1c(reference_orbits["1:1"])


def test_reference_stability(reference_orbits):
    for label, sol in reference_orbits.items():
        rep = stability(sol)
        assert rep.stable, (label, rep.eigenvalues)
        assert rep.label == label and rep.d == sol.d


def test_period_doubling_crossing(reference_orbits, fam_main):
    sol = reference_orbits["1:1"]
    itin = sol.itinerary
    x = sol.x
    mins = {}
    for d in (0.2963, 0.2923):
        s = solve_orbit(itin, x, fam_main(d), check=False)
        mins[d] = float(np.min(stability(s).eigenvalues.real))
        x = s.x
    assert mins[0.2963] > -1.0 > mins[0.2923]
    assert stability(solve_orbit(itin, x, fam_main(0.2923), check=False)).classification \
        is Classification.UNSTABLE_PD


def test_grazing_arrival_is_singular(fam_main):
    p = fam_main(0.3)
    with pytest.raises(SingularDenominator):
        leg_partials(LegKind.GP_GM, 0.0, 0.8, -0.2, 0.0, p, 0.3)
    # arrival on the switching surface where the forcing equals the load
    t1 = (math.acos(p.L_minus) - 0.3) / math.pi
    with pytest.raises(SingularDenominator):
        leg_partials(LegKind.GP_S, 0.0, t1, -0.2, 0.0, p, 0.3)


def test_stability_csv_round_trip(tmp_path, reference_orbits):
    reps = [stability(s) for s in reference_orbits.values()]
    path = tmp_path / "stab.csv"
    write_stability_csv(path, reps)
    back = read_stability_csv(path)
    for a, b in zip(reps, back):
        assert np.array_equal(a.eigenvalues, b.eigenvalues)
        assert (a.classification, a.margin, a.label, a.d) == (b.classification, b.margin, b.label, b.d)
