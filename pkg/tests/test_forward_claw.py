import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from filterlab.errors import ConfigurationError
from filterlab.forward_claw import (CellField, CellGrid, ClawForward, FVConfig, burgers_flux,
                                    discrete_entropy, flux_consistency_check, godunov, rusanov,
                                    shock_front, verify_l2_bound)


@settings(max_examples=60, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_fluxes_consistent_and_e_flux(a, b):
    us = np.linspace(min(a, b), max(a, b), 17)
    for F in (rusanov, godunov):
        assert F(np.array(a), np.array(a)) == pytest.approx(burgers_flux(a))
        # E-flux: (F(a, b) - f(u)) (b - a) <= 0 for u between a and b
        assert np.all((F(np.array(a), np.array(b)) - burgers_flux(us)) * (b - a) <= 1e-12)


def test_flux_lipschitz_fit():
    fc = flux_consistency_check("rusanov")
    assert fc.passed and fc.fitted_constant <= 2 * fc.max_speed + 1e-12


def test_riemann_shock_speed():
    g = CellGrid(256)
    u0 = CellField.from_function(g, lambda x: ((x >= 1) & (x < 3)).astype(float))
    dt = 1.0 / 128
    fw = ClawForward(FVConfig(256, dt, 1.0))
    traj = fw.solve(u0, [0.0, 1.0])
    assert abs(shock_front(traj.final, 3.5) - 3.5) <= 2 * g.delta


@pytest.mark.parametrize("flux", ["rusanov", "godunov"])
def test_conservation_and_entropy(flux):
    g = CellGrid(128)
    u0 = CellField.from_function(g, lambda x: np.sin(x) + 0.5)
    fw = ClawForward(FVConfig(128, 1 / 64, 1.5, flux))
    traj = fw.solve(u0, np.arange(97) / 64)
    mass = [s.values.sum() for s in traj.states]
    assert np.ptp(mass) < 1e-12 * 128
    ent = np.array([discrete_entropy(s) for s in traj.states])
    assert np.all(np.diff(ent) <= 1e-12 * ent[0])
    assert verify_l2_bound(traj).passed


def test_constant_state_is_fixed():
    g = CellGrid(32)
    u0 = CellField(g, np.full(32, 0.7))
    out = ClawForward(FVConfig(32, 0.05, 1.0)).solve(u0, [0, 1.0]).final
    assert np.allclose(out.values, 0.7, rtol=0, atol=1e-15)


def test_resize_exact_for_bandlimited():
    a, b = CellGrid(32), CellGrid(96)
    f = lambda x: np.sin(2 * x) + 0.3 * np.cos(5 * x)
    u = CellField.from_function(a, f)
    assert np.allclose(u.resized(b).values, f(b.centers()), atol=1e-13)


def test_cfl_violation_raises():
    g = CellGrid(64)
    u0 = CellField(g, np.full(64, 5.0))
    with pytest.raises(ConfigurationError):
        ClawForward(FVConfig(64, 0.1, 1.0)).solve(u0, [0, 1.0])
