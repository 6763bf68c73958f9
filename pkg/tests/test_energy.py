import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from vibroharvest.energy import (EnergyParams, NoImpacts, average_metrics, cos_alpha, cos_alpha_tangent,
                                 deflection_mm, impact_voltage, membrane_area, metrics_from_records,
                                 orbit_metrics, read_energy_csv, require_impacts, velocity_scale,
                                 write_energy_csv, write_impact_detail_csv)
from vibroharvest.flow import ImpactRecord
from vibroharvest.model import PhysicalParams

TABLE = EnergyParams()
TANGENT = EnergyParams(angle_model="tangent")


def test_velocity_and_deflection_golden():
    ph = PhysicalParams(A=10.0)
    V = velocity_scale(ph) * 0.8
    assert V == pytest.approx(10 * math.pi * 0.8 / (0.1245 * 5 * math.pi), rel=1e-15)
    # (nu + 1) m V^2 / (2 K) in metres, reported in millimetres
    assert deflection_mm(V, TABLE) == pytest.approx(2.5473090968e-3, rel=1e-10)


def test_net_voltage_is_impact_minus_input():
    ph = PhysicalParams(A=10.0)
    for ep in (TABLE, TANGENT, EnergyParams(U_in=1500.0, angle_model="tangent")):
        for z in (0.0, 0.3, 0.8, 2.5):
            delta = deflection_mm(velocity_scale(ph) * z, ep)
            c = cos_alpha(delta, ep) if ep.angle_model == "table" else cos_alpha_tangent(delta, ep)
            U_imp = (membrane_area(c, ep) / (math.pi * ep.R_c**2)) ** 2 * ep.U_in
            assert impact_voltage(z, ph, ep) == pytest.approx(U_imp - ep.U_in, abs=1e-12)


def test_golden_voltages():
    ph = PhysicalParams(A=10.0)
    # the published angle expression clamps to an undeformed membrane at micrometre deflections
    assert impact_voltage(0.8, ph, TABLE) == 0.0
    assert impact_voltage(0.8, ph, TANGENT) == pytest.approx(5.0704e-11, rel=1e-4)


def test_undeformed_membrane_area():
    assert membrane_area(1.0, TABLE) == pytest.approx(math.pi * TABLE.R_c**2, rel=1e-15)
    assert cos_alpha_tangent(0.0, TABLE) == pytest.approx(1.0, abs=1e-15)


def test_published_angle_clamped():
    for delta in np.linspace(0.0, 0.75, 20):
        assert cos_alpha(float(delta), TABLE) == 1.0
    for delta in (0.76, 1.5):
        assert cos_alpha(delta, TABLE) == -1.0
    assert -1.0 < cos_alpha(4.0, TABLE) < 1.0


def _tangent_oracle(delta, ep):
    # rim at (R_c, 0), bullet centre at (0, delta - R_b) measured downwards;
    # the straight membrane leaves the rim at angle a and must touch the bullet
    h = delta - ep.R_b
    a = brentq(lambda a: ep.R_c * math.sin(a) - h * math.cos(a) - ep.R_b, -1e-12, 1.5, xtol=1e-15)
    return math.cos(a)


@pytest.mark.parametrize("delta", [0.0, 0.01, 0.3, 1.0, 2.5, 4.0])
def test_tangent_angle_matches_construction(delta):
    assert cos_alpha_tangent(delta, TABLE) == pytest.approx(_tangent_oracle(delta, TABLE), abs=1e-12)


def test_voltage_monotone_in_speed():
    ph = PhysicalParams(A=10.0)
    zs = np.linspace(0.0, 3.0, 601)
    # U_imp - U_in cancels to within a few ulps of the 2000 mV input
    resolution = 8 * np.spacing(TABLE.U_in)
    for ep in (TABLE, TANGENT):
        U = np.array([impact_voltage(z, ph, ep) for z in zs])
        assert np.all(np.diff(U) >= -resolution)
    U = np.array([impact_voltage(z, ph, TANGENT) for z in zs])
    big = U > 1e-9
    assert big.sum() > 300 and np.all(np.diff(U[big]) > 0)


@settings(max_examples=50)
@given(st.floats(0.0, 3.0), st.floats(2.0, 15.0))
def test_voltage_symmetric_in_direction(z, A):
    ph = PhysicalParams(A=A)
    assert impact_voltage(z, ph, TANGENT) == impact_voltage(-z, ph, TANGENT)


def test_single_impact_average():
    ph = PhysicalParams(A=10.0)
    U = impact_voltage(1.7, ph, TANGENT)
    m = average_metrics([(5.0, 1.7), (70.0, 2.0)], (0.0, 60.0), ph, TANGENT)
    assert m.N == 1 and m.U_bar_I == pytest.approx(U) and m.U_bar_T == pytest.approx(U / 60.0)


def test_equal_impacts_average():
    ph = PhysicalParams(A=10.0)
    m = average_metrics([(t, 1.2) for t in range(10)], (0.0, 10.0), ph, TANGENT)
    assert m.U_bar_I == pytest.approx(impact_voltage(1.2, ph, TANGENT), rel=1e-14)


def test_empty_window():
    ph = PhysicalParams(A=10.0)
    m = average_metrics([], (0.0, 60.0), ph)
    assert m.U_bar_I is None and m.U_bar_T == 0.0 and m.N == 0
    with pytest.raises(NoImpacts):
        require_impacts(m)
    with pytest.raises(ValueError):
        average_metrics([], (1.0, 1.0), ph)


def test_records_interface():
    ph = PhysicalParams(A=10.0)
    recs = [ImpactRecord(1.0, 1.0, 0.9, "bottom"), ImpactRecord(2.0, 0.0, -0.7, "top")]
    m = metrics_from_records(recs, (0.0, 4.0), ph, TANGENT)
    assert [t for t, _ in m.per_impact] == [1.0, 2.0]
    assert require_impacts(m) == pytest.approx(0.5 * sum(u for _, u in m.per_impact))


@pytest.mark.parametrize("ep", [TABLE, TANGENT])
def test_period_one_averages_coincide(reference_orbits, ep):
    sol = reference_orbits["1:1"]
    m = orbit_metrics(sol, PhysicalParams(A=3.0).with_d(sol.d), ep)
    assert m.N == 2
    if m.U_bar_I == 0.0:
        assert m.U_bar_T == 0.0
    else:
        assert abs(m.U_bar_I - m.U_bar_T) <= 1e-10 * abs(m.U_bar_I)


@pytest.mark.parametrize("kwargs", [dict(K=0.0), dict(U_in=-1.0), dict(R_b=0.0), dict(angle_model="cone")])
def test_energy_params_validated(kwargs):
    with pytest.raises(ValueError):
        EnergyParams(**kwargs)


def test_energy_csv_round_trip(tmp_path):
    ph = PhysicalParams(A=10.0)
    rows = [(0.3, 0.5, average_metrics([(1.0, 0.8), (2.0, 1.1)], (0.0, 4.0), ph, TANGENT)),
            (0.31, 0.0, average_metrics([], (0.0, 4.0), ph, TANGENT))]
    path = tmp_path / "energy.csv"
    write_energy_csv(path, rows)
    back = read_energy_csv(path)
    assert back[0] == {"d": 0.3, "mu_k": 0.5, "N": 2, "U_bar_I": rows[0][2].U_bar_I, "U_bar_T": rows[0][2].U_bar_T}
    assert back[1]["N"] == 0 and math.isnan(back[1]["U_bar_I"]) and back[1]["U_bar_T"] == 0.0
    detail = tmp_path / "detail.csv"
    write_impact_detail_csv(detail, [(1.0, 0.8)], ph, TANGENT)
    lines = detail.read_text().splitlines()
    assert lines[0] == "t,Zdot,U"
    assert float(lines[1].split(",")[2]) == impact_voltage(0.8, ph, TANGENT)
