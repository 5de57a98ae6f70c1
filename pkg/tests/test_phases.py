import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import (
    AMBIENT_ACCELERATION, AMBIENT_PHASE_RAD, GEDANKEN_1MS_G98, GEDANKEN_1213US_G991, HBAR, M_RB87,
    MEASURED_PHASE_SCALE, REFERENCE_ARM_PHASE_RAD,
)
from qgi.core import MassPair, Timings
from qgi.errors import ConfigError
from qgi.dynamics import BALLISTIC, REFERENCE, analytic_arms
from qgi.phases import (
    EINSTEINIAN, NEWTONIAN, ActionContext, PhaseBreakdown, action_phase, action_route_phase, ambient_t3_phase,
    analytic_qgi_phase, analytic_qgi_phase_derivative, ballistic_arm_phase_closed_form, fit_ambient_gradient,
    frame_ledger, galilean_gedanken_phase, galilean_route_phase, galilean_transform_phase, gauge_phase,
    gauge_route_phase, gedanken_phase, ledger_difference, mismatch_phase, mismatch_quadratic_deviation,
    phase_difference, phase_table, reference_arm_phase,
)

US = 1e-6
K = M_RB87 / HBAR


def test_gauge_phase_zero_time():
    for z in (-1e-3, 0.0, 2e-4):
        assert gauge_phase(z, 0.0, -9.8) == 0.0


def test_gauge_phase_endpoint():
    T, g = 1e-3, 9.8
    phi = gauge_phase(0.0, T, -g)
    assert phi == pytest.approx(-K * g**2 * T**3 / 6, rel=1e-14)
    assert abs(2 * phi) * 2 == pytest.approx(4 * K * g**2 * T**3 / 6, rel=1e-14)


def test_gedanken_oracle():
    assert gedanken_phase(1e-3, 9.8) == pytest.approx(GEDANKEN_1MS_G98, rel=1e-12)


def test_analytic_limits():
    T = 1.1e-3
    assert analytic_qgi_phase(Timings(T, 0.0, 0.0, 0.0, 0.0), 9.8) == pytest.approx(K * 9.8**2 * T**3 / 3, rel=1e-14)
    Td = 60 * US
    val = analytic_qgi_phase(Timings(T, 0.0, Td, 0.0, 0.0), 9.8)
    assert val == pytest.approx(K * 9.8**2 * (T**3 - Td**3) / 3, rel=1e-13)


def test_measured_phase_scale():
    phi = analytic_qgi_phase(Timings(1.213e-3, 80 * US, 77 * US), 9.91)
    assert abs(phi / MEASURED_PHASE_SCALE - 1) < 0.10
    assert 80 <= phi <= 86
    assert GEDANKEN_1213US_G991 < phi


def test_phase_derivative_matches_finite_difference():
    t = Timings(T_half=1.0e-3)
    h = 1e-9  # step in 2T
    fd = (analytic_qgi_phase(t.scaled(T_half=t.T_half + h / 4), 9.91)
          - analytic_qgi_phase(t.scaled(T_half=t.T_half - h / 4), 9.91)) / (h / 2) / 2
    assert analytic_qgi_phase_derivative(t, 9.91) == pytest.approx(fd, rel=1e-6)


def test_mismatch_examples():
    T, g = 1e-3, 9.81
    assert mismatch_phase(g, g, T) == pytest.approx(-K * g**2 * T**3 / 3, rel=1e-14)
    assert mismatch_phase(0.0, g, T) == 0.0


def test_mismatch_stationary_and_quadratic():
    T, g = 1.2e-3, 9.81
    h = 1e-4
    curvature = (mismatch_phase(g + h, g, T) - 2 * mismatch_phase(g, g, T) + mismatch_phase(g - h, g, T)) / h**2
    slope = (mismatch_phase(g + h, g, T) - mismatch_phase(g - h, g, T)) / (2 * h)
    assert abs(slope) < 1e-9 * abs(curvature)
    for a in (0.0, 5.0, 9.0, 9.9, 12.0):
        dev = mismatch_phase(a, g, T) - mismatch_phase(g, g, T)
        assert dev == pytest.approx(K * (a - g) ** 2 * T**3 / 3, rel=1e-9)
        assert mismatch_quadratic_deviation(a, g, T) == pytest.approx(dev, rel=1e-9)


@settings(max_examples=50)
@given(st.floats(0.1e-3, 3e-3), st.floats(1.0, 20.0))
def test_mismatch_extremum_at_g(T, g):
    vals = [abs(mismatch_phase(a, g, T)) for a in (0.9 * g, g, 1.1 * g)]
    assert vals[1] >= max(vals[0], vals[2])


def test_ambient_phase():
    assert ambient_t3_phase(1e-3, 0.0, 9.81) == 0.0
    assert ambient_t3_phase(1e-3, AMBIENT_ACCELERATION, 9.81) == pytest.approx(AMBIENT_PHASE_RAD, rel=1e-12)


def test_reference_arm_phase():
    assert reference_arm_phase(0.0, 0.0, 9.91) == 0.0
    assert reference_arm_phase(80 * US, 77 * US, 9.91) == pytest.approx(REFERENCE_ARM_PHASE_RAD, rel=1e-12)


def test_reference_arm_phase_independent_of_hold():
    # total (reference minus ballistic) plus ballistic leaves the reference arm alone
    expected = reference_arm_phase(80 * US, 77 * US, 9.91)
    for T in (0.5e-3, 1.0e-3, 1.4e-3):
        t = Timings(T)
        ref = analytic_qgi_phase(t, 9.91) + ballistic_arm_phase_closed_form(t, 9.91)
        assert ref == pytest.approx(expected, rel=1e-9)


def test_galilean_transform():
    mp = MassPair(M_RB87, M_RB87)
    gp = galilean_transform_phase(0.0, 0.0, 0.013, mp, 9.81)
    assert gp.chi0 == 0.0
    assert gp.chi1 == pytest.approx(M_RB87 * 0.013 / HBAR)
    # v0 = 0: chi0 + chi1 z is the free-fall gauge phase
    t, z, g = 0.8e-3, 3e-6, 9.81
    gp = galilean_transform_phase(t, z, 0.0, mp, g)
    assert gp.chi0 + gp.chi1 * z == pytest.approx(gauge_phase(z, t, -g), rel=1e-12)


@pytest.mark.parametrize("eta", [1.0, 1.01, 0.97])
def test_galilean_gedanken_closed_form(eta):
    mp = MassPair(M_RB87, eta * M_RB87)
    T, g = 1e-3, 9.81
    expected = -(mp.m_g**2) / (3 * HBAR * mp.m_i) * g**2 * T**3
    assert galilean_gedanken_phase(T, mp, g) == pytest.approx(expected, rel=1e-12)


def _printed_cells(T, v0, g, a):
    m = M_RB87
    ref_E_kin = m * v0**2 * T - 2 * m * v0 * a * T**2 + 4 / 3 * m * a**2 * T**3
    ref_E_pot = -2 * m * v0 * a * T**2 + 4 / 3 * m * a**2 * T**3
    bal_N_kin = m * v0**2 * T - 2 * m * v0 * g * T**2 + 4 / 3 * m * g**2 * T**3
    bal_N_pot = -2 * m * v0 * g * T**2 + 4 / 3 * m * g**2 * T**3
    return {
        (REFERENCE, NEWTONIAN): (0.0, 0.0, 0.0),
        (REFERENCE, EINSTEINIAN): (ref_E_kin / HBAR, ref_E_pot / HBAR, 0.0),
        (BALLISTIC, NEWTONIAN): (bal_N_kin / HBAR, bal_N_pot / HBAR, 0.0),
        (BALLISTIC, EINSTEINIAN): (0.0, 0.0, 0.0),
    }


def test_ledger_cells_match_printed_forms():
    T, v0, g, a = 1.1e-3, 0.0123, 9.81, -9.81
    ledger = frame_ledger(T, v0, g, a)
    for key, (kin, pot, _) in _printed_cells(T, v0, g, a).items():
        row = ledger[key]
        scale = abs(kin) + abs(pot) + 1e-30
        assert row.kinetic == pytest.approx(kin, rel=1e-12, abs=1e-12 * scale)
        assert row.potential == pytest.approx(pot, rel=1e-12, abs=1e-12 * scale)


def test_ledger_cells_under_closing():
    T, g = 1.1e-3, 9.81
    a = -g
    ledger = frame_ledger(T, 0.0, g, a, closing=True)
    cells = _printed_cells(T, g * T, g, a)
    cells[(REFERENCE, EINSTEINIAN)] = _printed_cells(T, a * T, g, a)[(REFERENCE, EINSTEINIAN)]
    for key, (kin, pot, pul) in cells.items():
        row = ledger[key]
        scale = abs(kin) + abs(pot) + 1e-30
        assert row.kinetic == pytest.approx(kin, rel=1e-12, abs=1e-12 * scale)
        assert row.potential == pytest.approx(pot, rel=1e-12, abs=1e-12 * scale)
        assert row.pulses == pytest.approx(pul, abs=1e-12 * scale)


def test_ledger_totals_and_differences():
    T, g = 1.1e-3, 9.81
    third = K * g**2 * T**3 / 3
    closed = frame_ledger(T, 0.0, g, -g, closing=True, levitation=True)
    assert closed[(BALLISTIC, NEWTONIAN)].total == pytest.approx(-third, rel=1e-12)
    assert closed[(REFERENCE, EINSTEINIAN)].total == pytest.approx(-third, rel=1e-12)
    assert ledger_difference(closed, NEWTONIAN) == pytest.approx(-third, rel=1e-12)
    assert ledger_difference(closed, EINSTEINIAN) == pytest.approx(third, rel=1e-12)
    assert abs(ledger_difference(closed, NEWTONIAN)) == pytest.approx(abs(ledger_difference(closed, EINSTEINIAN)))


def test_breakdown_total():
    b = PhaseBreakdown(1.5, -0.25, 0.125, BALLISTIC)
    assert b.total == 1.375


def test_action_reference_newtonian_zero():
    t = Timings(T_half=1e-3, T_kick=0.0, T_d=0.0, tau_kick=0.0, tau_hold=0.0)
    ctx = ActionContext(0.0, NEWTONIAN, MassPair(M_RB87, M_RB87))
    arms = analytic_arms(t, 9.81, z0=0.0, v0=0.0)
    b = action_phase(arms[REFERENCE], ctx)
    assert b.kinetic == 0.0 and b.potential == 0.0 and b.pulses == 0.0


def _random_timings(rng):
    T = rng.uniform(0.3e-3, 2e-3)
    Tk = rng.uniform(10e-6, 100e-6)
    Td = rng.uniform(0.0, min(90e-6, T - 20e-6))
    return Timings(T_half=T, T_kick=Tk, T_d=Td)


def test_four_routes_agree():
    rng = np.random.default_rng(7)
    for _ in range(25):
        t = _random_timings(rng)
        ref = analytic_qgi_phase(t, 9.81)
        assert abs(action_route_phase(t, 9.81) - ref) < 1e-6
        assert abs(gauge_route_phase(t, 9.81) - ref) < 1e-6
        assert abs(galilean_route_phase(t, 9.81) - ref) < 1e-6


def test_galilean_gedanken_limit():
    rng = np.random.default_rng(8)
    mp = MassPair(M_RB87, M_RB87)
    for T in rng.uniform(0.1e-3, 2e-3, 100):
        ged = gedanken_phase(T, 9.81)
        assert abs(abs(galilean_gedanken_phase(T, mp, 9.81)) - ged) < 1e-12 * ged


def test_galilean_route_needs_finite_kick():
    with pytest.raises(ConfigError):
        galilean_route_phase(Timings(1e-3, 0.0, 0.0, 0.0, 0.0), 9.81)


def test_action_phase_independent_of_reference_height():
    t = Timings(T_half=1.0e-3)
    base = action_route_phase(t, 9.81, z0=0.0)
    for z0 in (-1e-3, 1e-3):
        assert abs(action_route_phase(t, 9.81, z0=z0) - base) < 1e-9


def test_phase_scaling_law():
    for lam in (0.5, 1.7, 3.0):
        T = 0.6e-3
        assert gedanken_phase(lam * T, 9.81) == pytest.approx(lam**3 * gedanken_phase(T, 9.81), rel=1e-13)


def test_phase_difference_orientation():
    t = Timings(T_half=1e-3)
    arms = analytic_arms(t, 9.81)
    parts = {arm: action_phase(tr) for arm, tr in arms.items()}
    assert phase_difference(parts) == pytest.approx(analytic_qgi_phase(t, 9.81), abs=1e-6)


def test_phase_table_routes():
    rows = phase_table([0.4e-3, 1.2e-3, 2.4e-3], Timings(T_half=1e-3), 9.91)
    for r in rows:
        assert abs(r.phi_action - r.phi_analytic) < 1e-6
        assert abs(r.phi_gauge - r.phi_analytic) < 1e-6


def test_ambient_fit_recovers_acceleration():
    tau = np.linspace(0.2e-3, 2.0e-3, 120)
    rng = np.random.default_rng(3)
    p = 0.5 + 0.35 * np.cos(ambient_t3_phase(tau, AMBIENT_ACCELERATION, 9.81)) + rng.normal(0, 0.02, tau.size)
    fit = fit_ambient_gradient(tau, p, 9.81)
    assert abs(fit.a_ambient - AMBIENT_ACCELERATION) < 0.005


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3e-3, 2e-3), st.floats(1e-6, 100e-6), st.floats(0.0, 90e-6), st.floats(5.0, 12.0))
def test_gauge_equals_closed_form_property(T, Tk, Td, g):
    t = Timings(T_half=max(T, Td + 1e-6), T_kick=Tk, T_d=Td)
    assert abs(gauge_route_phase(t, g) - analytic_qgi_phase(t, g)) < 1e-6
