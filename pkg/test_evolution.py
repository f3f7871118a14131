import math
from dataclasses import replace

import numpy as np
import pytest

from diagnostics import blowup_threshold_amplitude, energy_identity_residual, energy_rate
from evolution import (
    BlowUp,
    Completed,
    SolverConfig,
    advection_term,
    continuation_horizon,
    fit_picard_constant,
    fujita_bound,
    integrate,
    nonlocal_nonlinearity,
    phi_functions,
    picard_horizon,
    picard_iterate,
    step,
    validate_exponent,
    xt_norm,
)
from flow_library import Cellular, Zero, sine_shear
from initial_data import random_band, single_mode
from spectral_core import (
    LAMBDA_1,
    TWO_PI,
    Grid,
    SpectralField,
    forward_transform,
    heat_semigroup,
    inverse_transform,
    l2_norm,
    shift,
)


def test_exponent_range():
    assert fujita_bound(2) == 2.0
    validate_exponent(1.0, 2)
    with pytest.raises(ValueError, match=r"1 \+ 2/N = 2"):
        validate_exponent(2.5, 2)
    with pytest.raises(ValueError):
        SolverConfig(Grid(2, 16), p=2.5)
    with pytest.raises(ValueError):
        SolverConfig(Grid(2, 16), dt=0.0)
    with pytest.raises(ValueError):
        SolverConfig(Grid(2, 16), scheme="rk4")


def test_nonlinearity_of_zero_and_constant():
    grid = Grid(2, 16)
    assert l2_norm(nonlocal_nonlinearity(SpectralField.zeros(grid), 1.5)) == 0.0
    constant = forward_transform(np.full(grid.shape, 0.8), grid)
    assert l2_norm(nonlocal_nonlinearity(constant, 1.5)) < 1e-14


def test_nonlinearity_of_sine_squared():
    grid = Grid(2, 32)
    x1, _ = grid.coordinates
    u = forward_transform(np.sin(TWO_PI * x1), grid)
    n = nonlocal_nonlinearity(u, 2.0)
    np.testing.assert_allclose(inverse_transform(n), -0.5 * np.cos(2 * TWO_PI * x1), atol=1e-12)


def test_nonlinearity_rejects_small_exponent():
    with pytest.raises(ValueError):
        nonlocal_nonlinearity(SpectralField.zeros(Grid(1, 8)), 0.5)


def test_advection_of_constant_and_under_shear():
    grid = Grid(2, 32)
    x1, x2 = grid.coordinates
    constant = forward_transform(np.full(grid.shape, 2.0), grid)
    assert l2_norm(advection_term(constant, Cellular(1.0))) == 0.0

    u = forward_transform(np.sin(TWO_PI * x1), grid)
    term = advection_term(u, sine_shear(points=32))
    expected = np.sin(TWO_PI * x2) * TWO_PI * np.cos(TWO_PI * x1)
    np.testing.assert_allclose(inverse_transform(term), expected, atol=1e-10)


def test_advection_is_skew():
    grid = Grid(2, 32)
    for seed in range(3):
        u = random_band(grid, k_max=4, amplitude=1.0, seed=seed)
        term = advection_term(u, Cellular(1.0))
        pairing = float(np.mean(inverse_transform(u) * inverse_transform(term)))
        assert abs(pairing) < 1e-10


def test_phi_functions_are_continuous_at_zero():
    z = np.array([-1e-4 * (1 + 1e-9), -1e-4 * (1 - 1e-9), 0.0])
    phi1, phi2 = phi_functions(z)
    assert phi1[0] == pytest.approx(phi1[1], rel=1e-8)
    assert phi2[0] == pytest.approx(phi2[1], rel=1e-8)
    assert phi1[2] == 1.0 and phi2[2] == 0.5


def test_small_heat_mode_follows_the_semigroup():
    grid = Grid(2, 16)
    config = SolverConfig(grid, dt=1e-3)
    u = single_mode(grid, k=1, amplitude=1e-12)
    stepped = step(u, 0.0, config)
    exact = heat_semigroup(u, 1e-3)
    assert l2_norm(stepped - exact) <= 1e-8 * l2_norm(exact)


def test_constant_state_is_preserved_without_projection():
    grid = Grid(2, 16)
    config = SolverConfig(grid, dt=1e-3, t_end=0.2, flow=Cellular(1.0), enforce_mean_zero=False)
    u0 = forward_transform(np.full(grid.shape, 0.7), grid)
    record, status = integrate(u0, config, sample_every=50)
    assert isinstance(status, Completed)
    np.testing.assert_allclose(inverse_transform(record.final_state), 0.7, atol=1e-8)


def test_mean_is_conserved_without_projection():
    grid = Grid(2, 16)
    x1, _ = grid.coordinates
    config = SolverConfig(grid, dt=1e-3, t_end=1.0, flow=Cellular(1.0), enforce_mean_zero=False)
    u0 = forward_transform(0.3 + 0.5 * np.sin(TWO_PI * x1), grid)
    record, _ = integrate(u0, config, sample_every=100)
    assert abs(record.final_state.mean - u0.mean) < 1e-8


def test_zero_data_stays_zero():
    grid = Grid(2, 16)
    config = SolverConfig(grid, dt=1e-3, t_end=0.1, flow=Cellular(2.0))
    record, status = integrate(SpectralField.zeros(grid), config)
    assert isinstance(status, Completed) and status.t == pytest.approx(0.1)
    assert np.all(record.column("l2_norm") == 0.0)
    assert np.all(record.column("energy_residual") == 0.0)
    record.validate()


def test_integrate_rejects_grid_mismatch():
    config = SolverConfig(Grid(2, 16))
    with pytest.raises(ValueError):
        integrate(SpectralField.zeros(Grid(2, 32)), config)


def test_subcritical_data_decays():
    grid = Grid(2, 16)
    config = SolverConfig(grid, p=1.5, dt=1e-3, t_end=0.5)
    u0 = single_mode(grid, amplitude=0.1)
    record, status = integrate(u0, config, sample_every=50)
    assert isinstance(status, Completed)
    assert l2_norm(record.final_state) < l2_norm(u0)


def test_blowup_above_threshold_amplitude():
    grid = Grid(2, 16)
    shape = single_mode(grid)
    amplitude = 2.0 * blowup_threshold_amplitude(shape, 1.5)
    config = SolverConfig(grid, p=1.5, dt=1e-4, t_end=5.0)
    record, status = integrate(shape * amplitude, config, sample_every=100)
    assert isinstance(status, BlowUp)
    threshold = config.blowup_threshold * (1 + amplitude * l2_norm(shape))
    assert status.norm >= threshold
    assert status.t_detect < 5.0
    assert record.column("blowup_energy")[0] < 0


def test_energy_identity_residual_is_second_order():
    grid = Grid(2, 32)
    u0 = random_band(grid, k_max=3, amplitude=1.0, seed=11)
    residuals = []
    for dt in (4e-3, 2e-3):
        config = SolverConfig(grid, p=1.5, dt=dt, t_end=0.04, scheme="etdrk2", flow=Cellular(1.0))
        record, status = integrate(u0, config)
        assert isinstance(status, Completed)
        residuals.append(abs(record.column("energy_residual")[-1]))
    assert 3.5 <= residuals[0] / residuals[1] <= 4.5


def test_rescaled_form_weights_the_nonlinearity_by_nu():
    grid = Grid(2, 32)
    x1, x2 = grid.coordinates
    # skewed in x1 so that int |u|^p u is far from zero
    u0 = forward_transform(np.sin(TWO_PI * x1) + 0.5 * np.cos(2 * TWO_PI * x1) + 0.3 * np.sin(TWO_PI * x2), grid)
    assert abs(energy_rate(u0, 1.5, nu=0.0)) > 0.05

    nu = 0.2
    config = SolverConfig(grid, nu=nu, p=1.5, dt=1e-3, t_end=0.05, scheme="etdrk2", form="rescaled",
                          flow=Cellular(1.0))
    assert config.nonlinear_weight == nu
    record, status = integrate(u0, config, keep_snapshots=True)
    assert isinstance(status, Completed)

    weighted = energy_identity_residual(record.snapshots, 1.5, nu, weight=nu)
    unweighted = energy_identity_residual(record.snapshots, 1.5, nu, weight=1.0)
    assert weighted < 0.05 * unweighted
    assert abs(record.column("energy_residual")[-1]) == pytest.approx(weighted, rel=1e-6, abs=1e-12)


def test_shift_commutes_with_evolution():
    grid = Grid(2, 16)
    config = SolverConfig(grid, p=1.5, dt=1e-3)
    u = random_band(grid, k_max=4, amplitude=1.0, seed=2)
    offset = (0.25, 0.125)
    a, b = shift(u, offset), u
    for n in range(10):
        a = step(a, n * 1e-3, config)
        b = step(b, n * 1e-3, config)
    assert l2_norm(a - shift(b, offset)) < 1e-10


def test_xt_norm():
    grid = Grid(2, 16)
    with pytest.raises(ValueError):
        xt_norm([], [])
    assert xt_norm([0.0, 0.1], [SpectralField.zeros(grid)] * 2) == 0.0

    u = single_mode(grid)
    peak = 1.0 / (2 * LAMBDA_1)
    times = np.sort(np.concatenate([np.linspace(0.0, 0.1, 41), [peak]]))
    fields = [heat_semigroup(u, t) for t in times]
    assert xt_norm(times, fields) == pytest.approx(1 / math.sqrt(2), rel=1e-12)
    # stretching the time labels by 100 makes the gradient term dominate
    assert xt_norm(100 * times, fields) == pytest.approx(5 * math.exp(-0.5), rel=1e-12)


def test_picard_fixed_point_for_zero_data():
    grid = Grid(2, 16)
    config = SolverConfig(grid, dt=1e-3, t_end=0.01)
    report = picard_iterate(SpectralField.zeros(grid), config, T=0.01)
    assert report.fixed_point
    assert report.converged
    assert report.contraction_ratios == []
    assert len(report.iterate_norms) == 2


def test_picard_rejects_bad_horizon():
    config = SolverConfig(Grid(2, 16))
    with pytest.raises(ValueError):
        picard_iterate(SpectralField.zeros(config.grid), config, T=2.0)


def test_picard_horizon_formula():
    assert picard_horizon(0.0, 1.0, 1.0, 1.5, 2) == 1.0
    small = picard_horizon(1.0, 1.0, 1.0, 1.5, 2)
    assert 0 < small < 1
    assert picard_horizon(1.0, 2.0, 1.0, 1.5, 2) < small


def test_continuation_horizon():
    assert continuation_horizon(0.0, 5.0, 3.0, 1.5, 2) == 1.0
    expected = 1.0 / (5.0 * 2.0 ** 1.5) ** (4.0 / 3.0)
    assert continuation_horizon(1.0, 1.0, 0.0, 1.5, 2) == pytest.approx(expected, rel=1e-12)
    assert continuation_horizon(1.0, 2.0, 0.0, 1.5, 2) < expected
    with pytest.raises(ValueError):
        continuation_horizon(1.0, 1.0, 0.0, 2.0, 2)


def test_fitted_picard_constant_is_seeded():
    grid = Grid(2, 16)
    config = SolverConfig(grid, p=1.5, dt=1e-3, t_end=0.05, flow=Cellular(1.0))
    u0 = random_band(grid, k_max=4, amplitude=0.1, seed=2)
    first = fit_picard_constant(u0, config, n_samples=3, seed=4)
    assert 0 < first < math.inf
    assert fit_picard_constant(u0, config, n_samples=3, seed=4) == first


def test_picard_contracts_on_fitted_horizon_and_matches_integrate():
    grid = Grid(2, 16)
    config = SolverConfig(grid, p=1.5, dt=1e-3, t_end=1.0, flow=Cellular(1.0))
    u0 = random_band(grid, k_max=4, amplitude=0.1, seed=5)
    report = picard_iterate(u0, config)
    assert report.fitted_constant is not None and report.fitted_constant > 0
    assert report.converged
    assert all(r <= 0.5 for r in report.contraction_ratios)

    steps = len(report.times) - 1
    direct = replace(config, t_end=report.T, dt=report.T / steps)
    record, status = integrate(u0, direct)
    assert isinstance(status, Completed)
    assert l2_norm(report.limit - record.final_state) < 10 * direct.dt


def test_zero_flow_has_no_advection():
    grid = Grid(2, 16)
    u = random_band(grid, seed=1)
    assert l2_norm(advection_term(u, Zero())) == 0.0
