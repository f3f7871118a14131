import math

import numpy as np
import pytest

from flow_library import (
    Cellular,
    Custom,
    FlowError,
    RescaledMixing,
    Shear,
    Zero,
    check_incompressible,
    evaluate_flow,
    flow_lebesgue_norm,
    is_time_dependent,
    shear_critical_order,
    sine_shear,
)
from spectral_core import TWO_PI, Grid


def test_zero_flow_samples_zeros():
    grid = Grid(2, 16)
    sample = evaluate_flow(Zero(), grid)
    assert len(sample.components) == 2
    assert sample.is_zero()
    assert len(evaluate_flow(Zero(), Grid(1, 16)).components) == 1


def test_cellular_stagnation_point():
    grid = Grid(2, 16)
    sample = evaluate_flow(Cellular(1.0), grid)
    v1, v2 = sample.components
    assert abs(v1[4, 4]) < 1e-12
    assert abs(v2[4, 4]) < 1e-12


def test_cellular_amplitude_and_divergence():
    grid = Grid(2, 32)
    flow = Cellular(2.0, cell_scale=0.5)
    v1, _ = evaluate_flow(flow, grid).components
    assert np.max(np.abs(v1)) == pytest.approx(4 * math.pi, rel=1e-12)
    assert check_incompressible(flow, grid) < 1e-10


def test_cellular_sup_norm_is_linear_in_amplitude():
    grid = Grid(2, 32)
    base = flow_lebesgue_norm(Cellular(1.0), grid, np.inf)
    for amplitude in (0.5, 3.0, 10.0):
        assert flow_lebesgue_norm(Cellular(amplitude), grid, np.inf) == pytest.approx(amplitude * base, rel=1e-12)


def test_shear_flow_is_incompressible():
    grid = Grid(2, 32)
    flow = sine_shear(amplitude=2.0)
    v1, v2 = evaluate_flow(flow, grid).components
    assert not np.any(v2)
    np.testing.assert_allclose(v1[:, 8], 2.0)
    assert check_incompressible(flow, grid) < 1e-12


def test_compressible_custom_flow_reports_divergence():
    grid = Grid(2, 32)
    x1, _ = grid.coordinates
    flow = Custom((np.sin(TWO_PI * x1), np.zeros(grid.shape)))
    assert check_incompressible(flow, grid) == pytest.approx(TWO_PI, rel=1e-9)


def test_rescaled_mixing_identity():
    grid = Grid(2, 16)
    base = Cellular(1.0)
    flow = RescaledMixing(base, 3.0)
    assert is_time_dependent(flow)
    assert not is_time_dependent(base)
    for t in (0.0, 0.2, 0.7):
        rescaled = evaluate_flow(flow, grid, t).components
        reference = evaluate_flow(base, grid, 3.0 * t).components
        for a, b in zip(rescaled, reference):
            np.testing.assert_allclose(a, 3.0 * b)


@pytest.mark.parametrize("flow", [Cellular(1.0), sine_shear()])
def test_two_dimensional_flows_reject_one_dimensional_grids(flow):
    with pytest.raises(FlowError):
        evaluate_flow(flow, Grid(1, 16))


def test_custom_flow_shape_mismatch():
    with pytest.raises(FlowError):
        evaluate_flow(Custom((np.zeros((8, 8)), np.zeros((8, 8)))), Grid(2, 16))


def test_flow_constructor_validation():
    with pytest.raises(FlowError):
        Cellular(-1.0)
    with pytest.raises(FlowError):
        Cellular(1.0, cell_scale=0.4)
    with pytest.raises(FlowError):
        RescaledMixing(Cellular(1.0), 0.0)
    with pytest.raises(FlowError):
        Shear(np.ones(3))
    with pytest.raises(FlowError):
        Shear(np.ones(16), critical_order=1)


def test_critical_order_of_sine_profiles():
    x = np.arange(64) / 64
    assert shear_critical_order(np.sin(TWO_PI * x)) == 2
    assert shear_critical_order(np.sin(TWO_PI * x) ** 3) == 3
    assert sine_shear(power=3).critical_order == 3
    assert sine_shear().critical_order == 2


def test_constant_profile_has_no_shearing():
    with pytest.raises(FlowError, match="no shearing"):
        shear_critical_order(np.full(32, 0.7))
