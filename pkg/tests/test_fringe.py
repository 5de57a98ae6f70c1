import warnings

import numpy as np
import pytest

from oracles import HBAR, M_RB87
from qgi.core import Timings
from qgi.errors import ConfigError, ExtractionError, IllConditionedFitError, NumericalError
from qgi.fringe import (
    ClippingWarning,
    DeviationModel,
    FringeScan,
    analytic_signal_phase,
    count_upcrossings,
    deviation_phase,
    extract_phase,
    fit_deviation,
    fit_std_polynomial,
    monte_carlo_signal_sigma,
    typical_chirped_scan,
    phase_sigma_from_signal,
    propagate_uncertainty,
    read_scan_csv,
    synthesize_scan,
    write_scan_csv,
)
from qgi.phases import analytic_qgi_phase

G = 9.91
TRUE_CUBIC = M_RB87 / HBAR * G**2 / 3 / 8  # (2T)^3 coefficient of the gedanken law


def true_phase(x, shift=0.0):
    return np.array([analytic_qgi_phase(Timings.from_two_T(v), G) for v in np.atleast_1d(x)]) + shift


def vis_model(x):
    return 0.8 * np.exp(-np.log(4.0) * (x - 0.2e-3) / 1.8e-3)


def flat_mean(x):
    return 0.5 + 0 * x


@pytest.fixture(scope="module")
def clean():
    scan = typical_chirped_scan(noisy=False)
    return scan, extract_phase(scan)


# synthesis

def test_zero_visibility_gives_constant_population():
    x = np.linspace(0, 1e-3, 50)
    s = synthesize_scan(lambda x: 5e3 * x, lambda x: 0 * x, lambda x: 0.3 + 0 * x, x)
    assert np.all(s.population == 0.3)


def test_typical_chirped_scan_has_thirteen_oscillations():
    assert abs(count_upcrossings(typical_chirped_scan(noisy=False), 0.5) - 13) <= 1


def test_synthesis_is_seed_deterministic():
    a, b = typical_chirped_scan(seed=7), typical_chirped_scan(seed=7)
    assert np.array_equal(a.population, b.population)
    assert not np.array_equal(a.population, typical_chirped_scan(seed=8).population)
    assert a.meta["seed"] == 7


def test_clipping_warns_with_count():
    x = np.linspace(0, 1e-3, 200)
    with pytest.warns(ClippingWarning, match="clipped"):
        s = synthesize_scan(lambda x: 2e4 * x, lambda x: 1 + 0 * x, flat_mean, x, amp_sigma=0.05, seed=1)
    assert s.meta["clipped"] > 0
    assert s.population.min() >= 0 and s.population.max() <= 1


def test_model_outside_unit_interval_rejected():
    x = np.linspace(0, 1e-3, 20)
    with pytest.raises(ConfigError):
        synthesize_scan(lambda x: x, lambda x: 0.8 + 0 * x, lambda x: 0.8 + 0 * x, x)


def test_scan_invariants():
    with pytest.raises(ConfigError):
        FringeScan(np.array([0.0, 1.0, 1.0]), np.array([0.1, 0.2, 0.3]), 0.0)
    with pytest.raises(ConfigError):
        FringeScan(np.array([0.0, 1.0]), np.array([0.1, 1.2]), 0.0)


# extraction

def test_noiseless_cubic_roundtrip(clean):
    _, fit = clean
    assert abs(fit.cubic_coefficient / TRUE_CUBIC - 1) < 5e-3


def test_roundtrip_identity_interior(clean):
    scan, fit = clean
    m = fit.fit_mask
    err = fit.phase(scan.two_T)[m] - true_phase(scan.two_T)[m]
    assert np.max(np.abs(err)) < 1e-3


def test_envelopes_bracket_noiseless_data(clean):
    scan, fit = clean
    m, v = fit.mean(scan.two_T), fit.visibility(scan.two_T)
    inside = (scan.population <= m + v / 2 + 1e-9) & (scan.population >= m - v / 2 - 1e-9)
    assert inside.mean() >= 0.95


def test_fitted_visibility_in_unit_interval(clean):
    scan, fit = clean
    v = fit.visibility(scan.two_T[fit.fit_mask])
    assert np.all((v > 0) & (v <= 1))
    assert fit.phase_poly.size == 4


@pytest.mark.parametrize("shift", [0.3, 1.0, 2.5, -2.0])
def test_phase_shift_equivariance(clean, shift):
    scan, fit = clean
    shifted = extract_phase(synthesize_scan(lambda x: true_phase(x, shift), vis_model, flat_mean, scan.two_T))
    m = fit.fit_mask
    d = shifted.phase(scan.two_T)[m] - fit.phase(scan.two_T)[m] - shift
    assert np.max(np.abs((d + np.pi) % (2 * np.pi) - np.pi)) < 1e-6


def test_edge_oscillations_do_not_affect_cubic():
    # with jointly refitted envelopes the final fit sees only the window
    scan = typical_chirped_scan(noisy=False)
    fit = extract_phase(scan)
    assert fit.meta["envelopes_refined"]
    (a0, a1), (b0, b1) = fit.exclusion_windows
    pop = scan.population.copy()
    rng = np.random.default_rng(11)
    edge = ((scan.two_T >= a0) & (scan.two_T < a1) & ~fit.fit_mask) | \
           ((scan.two_T > b0) & (scan.two_T <= b1) & ~fit.fit_mask)
    assert edge.any()
    # perturb only inside the excluded windows, keeping every extremum in place
    pop[edge] = np.clip(pop[edge] + 0.002 * rng.standard_normal(edge.sum()), 0, 1)
    fit2 = extract_phase(scan.replace_population(pop))
    assert fit2.meta["envelopes_refined"]
    assert np.array_equal(fit2.fit_mask, fit.fit_mask)
    # same window data; only the solver's starting point moved
    x = scan.two_T[fit.fit_mask]
    assert np.max(np.abs(fit2.phase(x) - fit.phase(x))) < 1e-6
    assert fit2.cubic_coefficient == pytest.approx(fit.cubic_coefficient, rel=1e-6)


def test_derivative_is_derivative_of_cubic(clean):
    _, fit = clean
    x = np.linspace(0.5e-3, 2e-3, 7)
    c = fit.phase_poly
    expected = (c[1] + 2 * c[2] * (x / 1e-3) + 3 * c[3] * (x / 1e-3) ** 2) / 1e-3
    assert np.allclose(fit.phase_derivative(x), expected, rtol=1e-14, atol=0)


@pytest.mark.parametrize("f", [4.1e3, 5e3, 5.3e3])
def test_pure_cosine_instantaneous_frequency(f):
    t = np.arange(0.2e-3, 2.4e-3, 10e-6)
    fit = extract_phase(synthesize_scan(lambda x: 2 * np.pi * f * x + 0.4, lambda x: 0.8 + 0 * x, flat_mean, t))
    inst = fit.phase_derivative(t[fit.fit_mask]) / (2 * np.pi)
    assert np.max(np.abs(inst / f - 1)) < 0.01


def test_hilbert_phase_slope_near_centre():
    f = 5e3
    t = np.arange(0, 2e-3, 5e-6)
    phi = analytic_signal_phase(np.cos(2 * np.pi * f * t))
    mid = slice(t.size // 4, 3 * t.size // 4)
    slope = np.polyfit(t[mid], phi[mid], 1)[0]
    assert slope / (2 * np.pi * f) == pytest.approx(1, rel=0.01)


def test_too_few_oscillations_rejected():
    x = np.arange(0, 1e-3, 5e-6)
    s = synthesize_scan(lambda x: 2 * np.pi * 3e3 * x, lambda x: 0.5 + 0 * x, flat_mean, x)
    with pytest.raises(ExtractionError, match="oscillations"):
        extract_phase(s)


def test_sparse_sampling_rejected():
    x = np.arange(0, 4e-3, 40e-6)
    s = synthesize_scan(lambda x: 2 * np.pi * 5e3 * x, lambda x: 0.5 + 0 * x, flat_mean, x)
    with pytest.raises(ExtractionError, match="samples per oscillation"):
        extract_phase(s)


def test_noisy_fit_keeps_frozen_envelopes():
    fit = extract_phase(typical_chirped_scan(seed=0))
    assert fit.meta["envelopes_refined"] is False
    assert np.all(np.isfinite(fit.phase_sigma))


def test_phasefit_json_has_coefficients(clean):
    import json

    _, fit = clean
    d = json.loads(fit.to_json())
    assert len(d["phase_poly"]) == 4 and len(d["exclusion_windows"]) == 2
    assert d["cubic_coefficient_rad_per_s3"] == pytest.approx(fit.cubic_coefficient)


# uncertainty

def test_zero_uncertainty_gives_zero_spread():
    assert propagate_uncertainty(0.4, 0.3, 0.0, 0.0) == 0.0


def test_small_phase_noise_limit():
    a = 0.4
    assert propagate_uncertainty(a, np.pi / 2, 1e-3, 0.0) / (a * 1e-3) == pytest.approx(1, rel=1e-4)


@pytest.mark.parametrize("phi", [0.0, 0.7, np.pi / 2, 2.0])
@pytest.mark.parametrize("dphi", [1e-2, 3e-3])
def test_reduces_to_linear_propagation(phi, dphi):
    a, da = 0.4, 0.01
    lin2 = da**2 * np.cos(phi) ** 2 + a**2 * np.sin(phi) ** 2 * dphi**2
    # second-order correction to the linear law from expanding exp(-2 dphi^2)
    second = -np.cos(2 * phi) * dphi**2 * (da**2 - a**2 * dphi**2)
    exact = propagate_uncertainty(a, phi, dphi, da) ** 2
    assert abs(exact - lin2) <= 2 * dphi**2 * (da**2 + a**2 * dphi**2)
    assert abs(exact - lin2 - second) <= 4 * dphi**2 * abs(second) + 1e-30


@pytest.mark.parametrize("dphi", [0.05, 0.2, 0.5])
@pytest.mark.parametrize("phi", [0.0, np.pi / 4, np.pi / 2])
def test_monte_carlo_matches_closed_form(phi, dphi):
    mc = monte_carlo_signal_sigma(0.4, phi, dphi, 0.01, n=200_000, seed=3)
    assert mc == pytest.approx(propagate_uncertainty(0.4, phi, dphi, 0.01), rel=5e-3)


def test_inverse_recovers_phase_sigma():
    a, phi, dphi, da = 0.35, 1.1, 0.08, 0.004
    ds = propagate_uncertainty(a, phi, dphi, da)
    assert phase_sigma_from_signal(a, phi, ds, da) == pytest.approx(dphi, rel=1e-9)


def test_inverse_below_floor_raises():
    with pytest.raises(NumericalError):
        phase_sigma_from_signal(0.4, 0.0, 0.001, 0.01)


def test_negative_uncertainty_rejected():
    with pytest.raises(ConfigError):
        propagate_uncertainty(0.4, 0.0, -0.1, 0.0)


def test_std_polynomial_constant():
    x = np.linspace(0.2e-3, 2.4e-3, 30)
    c = fit_std_polynomial(x, np.full(x.size, 0.05))
    assert c[0] == pytest.approx(0.05) and np.all(np.abs(c[1:]) < 1e-10)


def test_std_polynomial_tracks_phase_cubic():
    x = np.linspace(0.2e-3, 2.4e-3, 30)
    phi = true_phase(x)
    c = fit_std_polynomial(x, 0.013 * phi)
    assert np.allclose(np.polynomial.polynomial.polyval(x / 1e-3, c), 0.013 * phi, rtol=0, atol=2e-3)


def test_std_polynomial_needs_points():
    with pytest.raises(ConfigError):
        fit_std_polynomial([1e-3] * 5, [0.1] * 5)


# deviation exponent

DEV_X = np.linspace(0.3e-3, 2.4e-3, 40)


@pytest.mark.parametrize("alpha", [0.0, 0.15, -0.1])
def test_deviation_exponent_recovered(alpha):
    y = deviation_phase(DEV_X, alpha, 1.0, T_kick=80e-6, T_d=77e-6, g=G)
    fit = fit_deviation(DEV_X, y, T_kick=80e-6, T_d=77e-6, g=G)
    if alpha == 0:
        assert abs(fit.alpha) < 0.01
    else:
        assert fit.alpha == pytest.approx(alpha, rel=0.1)
    assert fit.prefactor_scale == pytest.approx(1.0, rel=1e-3)


def test_deviation_with_phase_noise_bounds_prefactor():
    y = deviation_phase(DEV_X, 0.0, 1.0, g=G)
    noisy = y * (1 + 0.013 * np.random.default_rng(2).standard_normal(y.size))
    fit = fit_deviation(DEV_X, noisy, sigma=0.013 * y, g=G)
    assert fit.scale_sigma < 0.05
    assert abs(fit.prefactor_scale - 1) < 3 * fit.scale_sigma + 1e-3


def test_deviation_narrow_span_ill_conditioned():
    x = np.linspace(2.0e-3, 2.4e-3, 10)
    with pytest.raises(IllConditionedFitError):
        fit_deviation(x, deviation_phase(x, 0.0, 1.0, g=G), g=G)


def test_deviation_model_bounds():
    with pytest.raises(ConfigError):
        DeviationModel(alpha=1.5)


# io

def test_scan_csv_roundtrip(tmp_path):
    s = typical_chirped_scan(seed=5)
    p = tmp_path / "scan.csv"
    write_scan_csv(s, p, ["made by test"])
    r = read_scan_csv(p)
    assert np.allclose(r.two_T, s.two_T, rtol=0, atol=1e-12)
    assert np.allclose(r.population, s.population, atol=1e-10)
    assert p.read_text().startswith("# made by test")


def test_scan_csv_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ConfigError):
        read_scan_csv(p)


def test_plots_written(tmp_path, clean):
    from qgi.fringe import plot_fringes

    scan, fit = clean
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        plot_fringes(scan, fit, tmp_path / "f.png")
    assert (tmp_path / "f.png").stat().st_size > 1000
