import math

import numpy as np
import pandas as pd
import pytest
from scipy.integrate import quad

from diagnostics import (
    CSV_COLUMNS,
    FitError,
    TrajectoryRecord,
    averaged_mode_bound,
    blowup_energy,
    blowup_energy_terms,
    blowup_threshold_amplitude,
    bootstrap_monitor,
    decay_fit,
    energy_identity_residual,
    fit_gagliardo_nirenberg_constant,
    fit_h1_envelope,
    fit_h2_envelope,
    h1_h2_terms,
    sample_row,
    shear_decompose,
    smallness_threshold,
)
from initial_data import random_band, sheared_pair, single_mode
from spectral_core import LAMBDA_1, TWO_PI, Grid, SpectralField, forward_transform, heat_semigroup, l2_norm


def sine_power_integral(p):
    return quad(lambda x: abs(math.sin(TWO_PI * x)) ** p, 0.0, 1.0, limit=200)[0]


# --- Shear decomposition ---

def test_shear_decompose_cases():
    grid = Grid(2, 16)
    x1, x2 = grid.coordinates
    mean_only = forward_transform(np.sin(TWO_PI * x2), grid)
    mean_part, perp = shear_decompose(mean_only)
    assert l2_norm(perp) == 0.0
    assert l2_norm(mean_part) == pytest.approx(1 / math.sqrt(2))

    perp_only = forward_transform(np.sin(TWO_PI * x1), grid)
    mean_part, perp = shear_decompose(perp_only)
    assert l2_norm(mean_part) < 1e-15
    assert l2_norm(perp) == pytest.approx(1 / math.sqrt(2))


def test_shear_decompose_is_orthogonal():
    grid = Grid(2, 16)
    u = random_band(grid, k_max=5, amplitude=1.0, seed=8)
    mean_part, perp = shear_decompose(u)
    assert l2_norm(mean_part) ** 2 + l2_norm(perp) ** 2 == pytest.approx(l2_norm(u) ** 2, rel=1e-12)


def test_shear_decompose_needs_two_dimensions():
    with pytest.raises(ValueError):
        shear_decompose(SpectralField.zeros(Grid(1, 16)))


# --- Energies ---

def test_blowup_energy_of_sine():
    grid = Grid(2, 128)
    shape = single_mode(grid)
    p = 1.5
    integral = sine_power_integral(p + 1)
    assert blowup_energy(SpectralField.zeros(grid), p) == 0.0
    for amplitude in (0.5, 10.0, 10000.0):
        expected = math.pi ** 2 * amplitude ** 2 - amplitude ** (p + 1) / (p + 1) * integral
        assert blowup_energy(shape * amplitude, p) == pytest.approx(expected, rel=1e-5, abs=1e-9)


def test_threshold_amplitude_of_sine():
    grid = Grid(2, 128)
    p = 1.5
    expected = ((p + 1) * math.pi ** 2 / sine_power_integral(p + 1)) ** (1 / (p - 1))
    assert blowup_threshold_amplitude(single_mode(grid), p) == pytest.approx(expected, rel=1e-4)
    with pytest.raises(ValueError):
        blowup_threshold_amplitude(single_mode(grid), 1.0)
    with pytest.raises(ValueError):
        blowup_threshold_amplitude(SpectralField.zeros(grid), 1.5)


def test_energy_terms_are_homogeneous():
    grid = Grid(2, 16)
    u = random_band(grid, seed=3, amplitude=0.7)
    p = 1.4
    g1, q1 = blowup_energy_terms(u, p)
    g2, q2 = blowup_energy_terms(u * 2.0, p)
    assert g2 == pytest.approx(4 * g1, rel=1e-12)
    assert q2 == pytest.approx(2 ** (p + 1) * q1, rel=1e-12)


def test_energy_identity_residual_of_heat_flow():
    grid = Grid(2, 16)
    u = single_mode(grid, amplitude=1e-3)
    snapshots = [(t, heat_semigroup(u, t)) for t in np.linspace(0.0, 0.1, 201)]
    assert energy_identity_residual(snapshots, 1.5) < 1e-8
    zero = SpectralField.zeros(grid)
    assert energy_identity_residual([(0.0, zero), (0.1, zero), (0.2, zero)], 1.5) == 0.0
    with pytest.raises(ValueError):
        energy_identity_residual(snapshots[:2], 1.5)


# --- Functional inequalities ---

def test_h1_h2_terms_of_trivial_fields():
    grid = Grid(2, 16)
    zero = h1_h2_terms(SpectralField.zeros(grid), 1.5)
    assert (zero.pairing, zero.grad_sq, zero.nonlinearity_l2, zero.l2) == (0.0, 0.0, 0.0, 0.0)
    constant = h1_h2_terms(forward_transform(np.full(grid.shape, 0.5), grid), 1.5)
    assert abs(constant.pairing) < 1e-14
    assert constant.nonlinearity_l2 < 1e-14


def test_envelopes_fit_random_fields():
    grid = Grid(2, 16)
    p, dim = 1.5, 2
    terms = [h1_h2_terms(random_band(grid, k_max=4, amplitude=0.05 + 0.95 * i / 199, seed=i), p)
             for i in range(200)]
    h1 = fit_h1_envelope(terms, p, dim)
    assert h1.coefficient > 0
    assert h1.constant >= 0
    for s in terms:
        assert abs(s.pairing) <= (1 - h1.coefficient) * s.grad_sq + h1.constant * s.l2 ** h1.exponents[0] + 1e-12

    h2 = fit_h2_envelope(terms, p, dim)
    assert h2.constant >= 0
    e1, e2 = h2.exponents
    for s in terms:
        assert s.nonlinearity_l2 <= s.grad_sq + h2.constant * (s.l2 ** e1 + s.l2 ** e2) + 1e-12

    with pytest.raises(FitError):
        fit_h1_envelope([h1_h2_terms(SpectralField.zeros(grid), p)], p, dim)


def test_smallness_threshold():
    for p in (1.2, 1.5, 1.9):
        assert smallness_threshold(p, LAMBDA_1 / 4) == pytest.approx(0.25)
    assert smallness_threshold(1.5, 1.0) == pytest.approx(0.25 * (math.pi ** 2) ** 1.75)
    values = [smallness_threshold(p, 1.0) for p in np.linspace(1.1, 1.95, 10)]
    assert all(b < a for a, b in zip(values, values[1:]))
    with pytest.raises(ValueError):
        smallness_threshold(1.0, 1.0)
    with pytest.raises(ValueError):
        smallness_threshold(1.5, 0.0)


def test_gagliardo_nirenberg_constant_is_seeded():
    first = fit_gagliardo_nirenberg_constant(1.5, samples=20)
    assert first > 0
    assert fit_gagliardo_nirenberg_constant(1.5, samples=20) == first


def test_averaged_mode_bound_without_perp():
    assert averaged_mode_bound(0.3, 0.0, 1.5, 0.01, 0.2, 1.0) == pytest.approx(0.3)
    assert averaged_mode_bound(0.3, 0.1, 1.5, 0.01, 0.2, 1.0) > 0.3


# --- Bootstrap monitor ---

def heat_record(u, times, p=1.5):
    rows = [sample_row(heat_semigroup(u, t), t, p, 0.0) for t in times]
    return TrajectoryRecord.from_rows(rows)


def test_bootstrap_on_heat_decay():
    grid = Grid(2, 16)
    record = heat_record(single_mode(grid), np.linspace(0.0, 0.5, 51))
    report = bootstrap_monitor(record, lambda_nu=LAMBDA_1)
    assert report.coeff_decay == pytest.approx(1.0)
    assert report.coeff_gradient > 0
    assert report.within_assumed and report.within_improved


def test_bootstrap_without_perp_part():
    grid = Grid(2, 16)
    record = heat_record(single_mode(grid, axis=1), np.linspace(0.0, 0.1, 11))
    report = bootstrap_monitor(record, lambda_nu=1.0)
    assert (report.coeff_decay, report.coeff_gradient) == (0.0, 0.0)
    assert report.within_assumed


def test_bootstrap_decay_coefficient_is_at_least_one():
    grid = Grid(2, 16)
    record = heat_record(sheared_pair(grid, 0.1, 0.2), np.linspace(0.0, 0.2, 21))
    assert bootstrap_monitor(record, lambda_nu=0.5).coeff_decay >= 1.0


def test_bootstrap_needs_perp_samples():
    frame = pd.DataFrame({name: [0.0, 1.0] for name in CSV_COLUMNS})
    with pytest.raises(ValueError):
        bootstrap_monitor(TrajectoryRecord(frame), lambda_nu=1.0)


# --- Trajectory record ---

def test_record_csv_columns_and_precision(tmp_path):
    grid = Grid(2, 16)
    record = heat_record(random_band(grid, seed=2), np.linspace(0.0, 0.01, 6))
    record.validate()
    path = tmp_path / "trajectory.csv"
    record.to_csv(path)
    loaded = pd.read_csv(path, float_precision="round_trip")
    assert list(loaded.columns) == CSV_COLUMNS
    np.testing.assert_array_equal(loaded["l2_norm"].to_numpy(), record.column("l2_norm"))


def test_record_rejects_non_increasing_times():
    grid = Grid(2, 16)
    with pytest.raises(ValueError, match="strictly increasing"):
        heat_record(single_mode(grid), [0.0, 0.1, 0.1])
    with pytest.raises(ValueError, match="strictly increasing"):
        heat_record(single_mode(grid), [0.0, 0.2, 0.1])


# --- Decay fit ---

def test_decay_fit_cases():
    t = np.linspace(0.0, 5.0, 50)
    assert decay_fit(t, np.exp(-3 * t)).rate == pytest.approx(3.0, abs=1e-6)
    assert decay_fit(t, np.full(t.shape, 2.0)).rate == pytest.approx(0.0, abs=1e-12)
    perturbed = np.exp(-3 * t) * (1 + 0.01 * np.sin(t))
    assert decay_fit(t, perturbed).rate == pytest.approx(3.0, rel=0.01)
    pairs = list(zip(t, np.exp(-2 * t)))
    assert decay_fit(pairs).rate == pytest.approx(2.0, abs=1e-6)


def test_decay_fit_rejects_bad_samples():
    with pytest.raises(FitError):
        decay_fit([0.0, 1.0, 2.0, 3.0], [1.0, 0.5, 0.25, 0.125])
    with pytest.raises(FitError):
        decay_fit(np.arange(6.0), [1.0, 0.5, 0.0, 0.1, 0.1, 0.1])
