from dataclasses import dataclass, replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import HBAR, M_RB87
from qgi.core import CONSTANTS, RB87, Timings
from qgi.errors import ConfigError, NumericalError
from qgi.fieldmap import ChipFieldModel, QuadraticExpansion
from qgi.pulses import build_schedule
from qgi.wavepacket import (
    SYMPLECTIC_FORM, GaussianState, WidthHistory, apply_lens, collimated_state, free_flight, lens_for_rate,
    lensed_state, overlap, prepared_state, propagate_gaussian, run_interferometer, symplectic_step_matrix,
)

UM = 1e-6


@dataclass(frozen=True)
class Harmonic:
    """Isotropic synthetic potential ``k |r|^2 / 2``."""

    k: float
    species: object = RB87
    constants: object = CONSTANTS

    def expansion(self, state, r, I):
        r = np.asarray(r, float)
        return QuadraticExpansion(r, 0.5 * self.k * float(r @ r), self.k * r, self.k * np.eye(3))


def _free_width(s0, t):
    return s0 * np.sqrt(1 + (HBAR * t / (2 * M_RB87 * s0**2)) ** 2)


def test_free_width_law_exact():
    s0 = 1.31 * UM
    g0 = GaussianState.minimal((s0, s0, s0))
    for t in (1e-4, 1e-3, 5e-3, 2e-2):
        assert free_flight(g0, t).widths[2] == pytest.approx(_free_width(s0, t), rel=1e-9)


def test_propagation_matches_free_width_law():
    s0 = 1.0 * UM
    g0 = GaussianState.minimal((s0, s0, s0))
    out = propagate_gaussian(g0, None, Harmonic(0.0), 0.0, 2e-3, g=0.0, dt=5e-6)
    assert out.widths[2] == pytest.approx(_free_width(s0, 2e-3), rel=1e-9)


def test_harmonic_width_period():
    omega = 2 * np.pi * 500.0
    k = M_RB87 * omega**2
    g0 = GaussianState.minimal((2 * UM, 0.7 * UM, 1.5 * UM))
    hist = WidthHistory()
    out = propagate_gaussian(g0, None, Harmonic(k), 0.0, np.pi / omega, g=0.0, dt=1e-6, history=hist)
    assert np.allclose(out.sigma, g0.sigma, rtol=1e-7, atol=1e-9 * np.abs(g0.sigma).max())
    t, w, _ = hist.as_arrays()
    # wider than the 0.34 um ground state, so the packet breathes inward
    assert w[:, 1].min() < 0.5 * 0.7 * UM
    assert np.interp(0.5 * np.pi / omega, t, w[:, 1]) < 0.5 * 0.7 * UM


@pytest.mark.parametrize("k", [0.0, 1e-19, -3e-19, 4e-18])
def test_step_matrix_is_symplectic(k):
    K = np.diag([k, 0.5 * k, 2 * k])
    K[1, 2] = K[2, 1] = 0.1 * k
    S = symplectic_step_matrix(K, M_RB87, 0.5e-6)
    # scale to dimensionless blocks before comparing
    D = np.diag([1 / UM] * 3 + [UM / HBAR] * 3)
    Sd = D @ S @ np.linalg.inv(D)
    J = SYMPLECTIC_FORM
    assert np.max(np.abs(Sd @ J @ Sd.T - J)) < 1e-9


def test_uncertainty_product_preserved():
    g0 = GaussianState.minimal((2 * UM, 0.7 * UM, 1.5 * UM))
    out = propagate_gaussian(g0, None, Harmonic(M_RB87 * (2 * np.pi * 300) ** 2), 0.0, 1e-3, g=0.0, dt=1e-6)
    assert out.uncertainty_product() == pytest.approx(g0.uncertainty_product(), rel=1e-6)
    assert out.uncertainty_product() >= (HBAR / 2) ** 6 * (1 - 1e-6)


def test_loss_of_positive_definiteness_reported():
    bad = GaussianState.minimal((1 * UM, 1 * UM, 1 * UM))
    sigma = bad.sigma.copy()
    sigma[2, 2] = -sigma[2, 2]
    with pytest.raises(NumericalError):
        propagate_gaussian(replace(bad, sigma=sigma), None, Harmonic(0.0), 0.0, 1e-5, g=0.0, dt=1e-6)


def test_zero_lens_is_identity():
    g0 = GaussianState.minimal((1 * UM, 2 * UM, 3 * UM), mean_r=(1e-6, 0.0, -1e-4))
    out = apply_lens(g0, 0.0, axis=(0, 1, 2), center=(0.0, 0.0, 0.0))
    assert np.array_equal(out.sigma, g0.sigma)
    assert np.array_equal(out.mean_p, g0.mean_p)
    assert out.phase == g0.phase


def test_collimation_lens_reduces_expansion():
    g0 = free_flight(GaussianState.minimal((0.3 * UM, 0.3 * UM, 0.3 * UM)), 2e-3)
    s = g0.sigma
    rate = s[2, 5] / (M_RB87 * np.sqrt(s[2, 2]))
    k = rate / np.sqrt(s[2, 2])
    before = g0.velocity_widths[2]
    after = apply_lens(g0, k, axis=2).velocity_widths[2]
    assert before / after >= 5


def test_lens_for_rate_hits_target():
    g0 = free_flight(GaussianState.minimal((1.31 * UM,) * 3), 1e-3)
    k = lens_for_rate(g0, 0.4e-3, axis=2)
    assert apply_lens(g0, k, axis=2).velocity_widths[2] == pytest.approx(0.4e-3, rel=1e-9)
    with pytest.raises(ConfigError):
        lens_for_rate(GaussianState.minimal((1.31 * UM,) * 3), 1e-6)


def test_dkc_expansion_rates():
    with_lens = lensed_state(flight=1e-3)
    assert with_lens.velocity_widths[2] == pytest.approx(0.4e-3, rel=0.5)
    no_lens = free_flight(apply_lens(GaussianState.minimal((3.13 * UM, 1.31 * UM, 1.31 * UM)), 0.0), 1e-3)
    assert no_lens.velocity_widths[2] < with_lens.velocity_widths[2]


def test_collimated_state_rate():
    g0 = collimated_state()
    assert g0.velocity_widths[1] == pytest.approx(0.4e-3, rel=1e-9)
    assert g0.velocity_widths[2] == pytest.approx(0.4e-3, rel=1e-9)


def test_identical_overlap():
    g0 = GaussianState.minimal((1 * UM, 2 * UM, 1.3 * UM), mean_p=(0.0, 0.0, 1e-30))
    o = overlap(g0, g0)
    assert o.visibility == pytest.approx(1.0, abs=1e-12)
    assert o.phase == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("dz", [0.1 * UM, 1 * UM, 3 * UM])
def test_separation_visibility_oracle(dz):
    s = 1.31 * UM
    a = GaussianState.minimal((s, s, s))
    b = GaussianState.minimal((s, s, s), mean_r=(0.0, 0.0, dz))
    assert overlap(a, b).visibility == pytest.approx(np.exp(-dz**2 / (8 * s**2)), rel=1e-9)


def test_visibility_monotonic_in_separation():
    s = 1.31 * UM
    a = GaussianState.minimal((s, s, s))
    vis = [overlap(a, GaussianState.minimal((s, s, s), mean_r=(0.0, 0.0, d))).visibility
           for d in np.linspace(0.0, 5 * UM, 30)]
    assert np.all(np.diff(vis) < 0)


def test_visibility_gradient_matches_fd():
    s = 1.31 * UM
    a = GaussianState.minimal((s, s, s))

    def vis(d):
        return overlap(a, GaussianState.minimal((s, s, s), mean_r=(0.0, 0.0, d))).visibility

    d, h = 1.7 * UM, 1e-10
    fd = (vis(d + h) - vis(d - h)) / (2 * h)
    closed = -d / (4 * s**2) * np.exp(-d**2 / (8 * s**2))
    assert fd == pytest.approx(closed, rel=1e-6)


def test_phase_consistency_for_identical_evolution():
    g0 = GaussianState.minimal((1.5 * UM, 1 * UM, 1.2 * UM), mean_p=(0.0, 0.0, M_RB87 * 1e-3))
    a = propagate_gaussian(replace(g0, phase=0.3, path_phase=0.3), None, Harmonic(1e-19), 0.0, 2e-4, g=0.0, dt=2e-6)
    b = propagate_gaussian(replace(g0, phase=1.1, path_phase=1.1), None, Harmonic(1e-19), 0.0, 2e-4, g=0.0, dt=2e-6)
    o = overlap(a, b)
    assert o.phase == pytest.approx(0.8, abs=1e-9)
    assert o.shape_phase == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 4.0), st.floats(-3.0, 3.0), st.floats(-1.0, 1.0))
def test_overlap_bounded_and_decomposed(w, dz, dp):
    a = GaussianState.minimal((1 * UM, w * UM, 1.3 * UM))
    b = GaussianState.minimal((1 * UM, 1.3 * UM, w * UM), mean_r=(0.0, 0.0, dz * UM),
                              mean_p=(0.0, 0.0, dp * HBAR / UM))
    o = overlap(a, b)
    assert 0.0 <= o.visibility <= 1.0
    assert np.isclose(o.phase, o.path_phase + o.shape_phase)


def test_unknown_preparation_model():
    with pytest.raises(ConfigError):
        prepared_state(Timings(1e-3), model="sphere")


def test_default_run_mid_widths(i_hold):
    t = Timings.from_two_T(2.4e-3)
    run = run_interferometer(build_schedule(t, i_hold, 0.47e-3), ChipFieldModel(), prepared_state(t), dt=2e-6)
    for w in run.mid_widths(2).values():
        assert 1.0e-6 <= w <= 1.3e-6
    o = run.overlap
    assert abs(o.shape_phase) <= 2.0
    assert -1.1 <= o.shape_phase <= 0.4
    assert abs(o.shape_phase / o.phase) < 0.02
    assert 0 < o.visibility <= 1
