import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phasetopo.assembly import Model
from phasetopo.material import MaterialParams, PhaseParams, VolumeControl, stiffness_scale
from phasetopo.mesh import DIRICHLET, NEUMANN, build_box_grid, plane, select_region
from phasetopo.params import (
    GuidelineInputs,
    estimate_ebar,
    kappa_v_from_target,
    suggest,
    suggest_gamma,
    suggest_kappa_b,
    suggest_kappa_phi,
    target_volume_fraction,
    tau_phi,
)

MPa = 1e6


def _uniaxial_block(t):
    m = build_box_grid((1.0, 1.0), (3, 3))
    regions = [
        select_region(m, plane(2, 0, 0.0), DIRICHLET, 0.0, "roll_x", components=(0,)),
        select_region(m, plane(2, 1, 0.0), DIRICHLET, 0.0, "roll_y", components=(1,)),
    ]
    if t:
        regions.append(select_region(m, plane(2, 0, 1.0), NEUMANN, (t, 0.0), "pull"))
    mat = MaterialParams(E=10e9, nu=0.25)
    return Model(m, regions, mat, PhaseParams(), VolumeControl.minimization(1.0)), mat


def test_ebar_uniaxial_plane_strain_oracle():
    t = 50 * MPa
    model, mat = _uniaxial_block(t)
    _, df1, _ = stiffness_scale(1.0, mat.delta, mat.p)
    # uniform stress t: sigma:eps = (1 - nu^2) t^2 / E in plane strain
    expected = 0.5 * df1 * (1 - mat.nu**2) * t**2 / mat.E
    assert estimate_ebar(model) == pytest.approx(expected, rel=1e-10)


def test_ebar_zero_load():
    model, _ = _uniaxial_block(0.0)
    assert estimate_ebar(model) == 0.0


def test_gamma_rule():
    assert suggest_gamma(0.016) == 0.016
    with pytest.raises(ValueError):
        suggest_gamma(0.0)


def test_kappa_phi_rules():
    assert suggest_kappa_phi("vm", 0.01, kappa_v=100 * MPa) == pytest.approx(1e6)
    assert suggest_kappa_phi("vc", 0.01, ebar=80 * MPa) == pytest.approx(0.8e6)
    assert suggest_kappa_phi("vm", 0.2, kappa_v=1000 * MPa) == pytest.approx(200e6)
    with pytest.raises(ValueError):
        suggest_kappa_phi("vc", 0.01)


def test_kappa_b_rule():
    # 10^3 kappa_phi per metre
    assert suggest_kappa_b(1e6) == pytest.approx(1e9)
    assert suggest_kappa_b(0.5e6) == pytest.approx(0.5e9)
    with pytest.raises(ValueError):
        suggest_kappa_b(0.0)


def test_tau():
    assert tau_phi(1e6, 1.0, 0.01) == pytest.approx(100 * MPa)
    assert tau_phi(1e6, 1.0, 0.02) == pytest.approx(tau_phi(1e6, 1.0, 0.01) / 2)
    with pytest.raises(ValueError):
        tau_phi(1e6, 0.0, 0.01)


def test_target_examples():
    assert target_volume_fraction(0.0, 80 * MPa) == 1.0
    assert target_volume_fraction(100 * MPa, 80 * MPa) == pytest.approx(0.4444, abs=1e-4)
    with pytest.raises(ValueError):
        target_volume_fraction(0.0, 0.0)
    assert kappa_v_from_target(1.0, 80 * MPa) == 0.0
    assert kappa_v_from_target(0.5, 80 * MPa) == pytest.approx(80 * MPa)
    with pytest.raises(ValueError):
        kappa_v_from_target(0.0, 80 * MPa)


def test_three_target_conditions():
    ebar = 80 * MPa
    k = np.concatenate([[0.0], np.logspace(3, 14, 999)])
    v = np.array([target_volume_fraction(x, ebar) for x in k])
    assert v[0] == 1.0
    assert np.all(np.diff(v) < 0)
    assert target_volume_fraction(1e30, ebar) < 1e-20
    h = 1e-3 * ebar
    slope = (target_volume_fraction(h, ebar) - target_volume_fraction(0.0, ebar)) / h
    assert slope == pytest.approx(-1 / ebar, rel=2e-3)


@given(st.floats(1e-3, 1.0), st.floats(1e3, 1e10))
@settings(max_examples=100, deadline=None)
def test_target_round_trip(v, ebar):
    assert target_volume_fraction(kappa_v_from_target(v, ebar), ebar) == pytest.approx(v, rel=1e-12)


def test_suggest_reproduces_table_values_with_overrides():
    s = suggest("vm", h_e=0.016, ebar=80 * MPa, kappa_v=100 * MPa, gamma=0.01)
    assert s["gamma"] == 0.01
    assert s["kappa_phi"] == pytest.approx(1e6)
    assert s["tau"] == pytest.approx(1e8)
    assert s["v_target"] == pytest.approx(80 / 180)


def test_suggest_from_target_fraction():
    s = suggest("vm", h_e=0.02, ebar=80 * MPa, v_target=0.4)
    assert s["v_target"] == pytest.approx(0.4)
    with pytest.raises(ValueError):
        suggest("vm", h_e=0.02, ebar=80 * MPa)


def test_guideline_inputs_validation():
    with pytest.raises(ValueError):
        GuidelineInputs(h_e=0.01, ebar=-1.0)
    with pytest.raises(ValueError):
        GuidelineInputs(h_e=0.01, ebar=1.0, v_target=1.5)
