"""
Divergence-free velocity fields on the torus: zero, shear, cellular,
amplitude/time rescaled mixing flows and user-sampled fields.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np
from loguru import logger
from scipy.optimize import brentq
from scipy.signal import resample

from spectral_core import TWO_PI, forward_transform, gradient, inverse_transform

INCOMPRESSIBLE_TOL = 1e-10
CRITICAL_ORDER_TOL = 1e-6
MAX_CRITICAL_ORDER = 12
FINE_SAMPLES = 4096


class FlowError(ValueError):
    """Raised for flows that cannot be built or evaluated on a grid."""


@dataclass(frozen=True)
class Zero:
    pass


@dataclass(frozen=True, eq=False)
class Shear:
    """v = (v1(x2), 0) from periodic samples of v1 on [0,1)."""
    profile: np.ndarray
    critical_order: int = 2

    def __post_init__(self):
        profile = np.asarray(self.profile, dtype=float)
        if profile.ndim != 1 or profile.size < 4:
            raise FlowError("Shear profile must be a 1-D array with at least 4 samples")
        object.__setattr__(self, "profile", profile)
        if self.critical_order < 2:
            raise FlowError(f"critical_order must be >= 2, got {self.critical_order}")


@dataclass(frozen=True)
class Cellular:
    amplitude: float
    cell_scale: float = 1.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise FlowError(f"Cellular amplitude must be >= 0, got {self.amplitude}")
        if not 0 < self.cell_scale <= 1:
            raise FlowError(f"cell_scale must be in (0, 1], got {self.cell_scale}")
        cells = 1.0 / self.cell_scale
        if abs(cells - round(cells)) > 1e-9:
            raise FlowError(f"cell_scale must divide 1 (1, 1/2, 1/3, ...), got {self.cell_scale}")


@dataclass(frozen=True)
class RescaledMixing:
    """v_A(x, t) = A * base(x, A t)."""
    base: "FlowSpec"
    amplitude: float

    def __post_init__(self):
        if self.amplitude <= 0:
            raise FlowError(f"RescaledMixing amplitude must be > 0, got {self.amplitude}")


@dataclass(frozen=True, eq=False)
class Custom:
    components: tuple

    def __post_init__(self):
        comps = tuple(np.asarray(c, dtype=float) for c in self.components)
        if len({c.shape for c in comps}) != 1:
            raise FlowError("Custom flow components must share one shape")
        object.__setattr__(self, "components", comps)


FlowSpec = Union[Zero, Shear, Cellular, RescaledMixing, Custom]


@dataclass
class VelocitySample:
    components: tuple
    time: float = 0.0

    def __post_init__(self):
        self.components = tuple(np.asarray(c, dtype=float) for c in self.components)
        if len({c.shape for c in self.components}) != 1:
            raise FlowError("Velocity components must share one shape")

    @property
    def speed(self):
        return np.sqrt(sum(c ** 2 for c in self.components))

    def is_zero(self):
        return all(not np.any(c) for c in self.components)


def sine_shear(amplitude=1.0, power=1, points=64):
    """v1 = A sin^power(2 pi x2); the declared order is the flattest critical point."""
    x = np.arange(points) / points
    profile = amplitude * np.sin(TWO_PI * x) ** power
    return Shear(profile, critical_order=max(2, power))


def is_time_dependent(spec):
    if isinstance(spec, RescaledMixing):
        return True
    return False


def evaluate_flow(spec, grid, t=0.0):
    """
    Sample a flow on the grid at time t.

    Args:
        spec: one of the FlowSpec variants
        grid: spectral_core.Grid
        t: time (only RescaledMixing depends on it)

    Returns:
        VelocitySample with grid.dim components

    Raises:
        FlowError: for Shear/Cellular on a 1-D grid or mis-shaped Custom samples
    """
    shape = grid.shape
    if isinstance(spec, Zero):
        return VelocitySample(tuple(np.zeros(shape) for _ in range(grid.dim)), t)

    if isinstance(spec, Shear):
        if grid.dim != 2:
            raise FlowError("Shear flows need a 2-D grid")
        profile = spec.profile
        if profile.size != grid.points_per_axis:
            profile = resample(profile, grid.points_per_axis)
        v1 = np.broadcast_to(profile[np.newaxis, :], shape).copy()
        return VelocitySample((v1, np.zeros(shape)), t)

    if isinstance(spec, Cellular):
        if grid.dim != 2:
            raise FlowError("Cellular flows need a 2-D grid")
        x, y = grid.coordinates
        c = TWO_PI / spec.cell_scale
        a = TWO_PI * spec.amplitude
        return VelocitySample((-a * np.sin(c * x) * np.cos(c * y),
                               a * np.cos(c * x) * np.sin(c * y)), t)

    if isinstance(spec, RescaledMixing):
        base = evaluate_flow(spec.base, grid, spec.amplitude * t)
        return VelocitySample(tuple(spec.amplitude * c for c in base.components), t)

    if isinstance(spec, Custom):
        if len(spec.components) != grid.dim or spec.components[0].shape != shape:
            raise FlowError(
                f"Custom flow needs {grid.dim} components of shape {shape}, "
                f"got {len(spec.components)} of shape {spec.components[0].shape}"
            )
        return VelocitySample(spec.components, t)

    raise FlowError(f"Unknown flow variant: {type(spec).__name__}")


def divergence(sample, grid):
    div = np.zeros(grid.shape)
    for j, comp in enumerate(sample.components):
        div += inverse_transform(gradient(forward_transform(comp, grid))[j])
    return div


def check_incompressible(spec, grid, t=0.0):
    """Max pointwise spectral divergence of the flow."""
    max_div = float(np.max(np.abs(divergence(evaluate_flow(spec, grid, t), grid))))
    logger.debug(f"{type(spec).__name__} max divergence {max_div:.3e}")
    return max_div


def flow_lebesgue_norm(spec, grid, q, t=0.0):
    """||v||_{L^q} of the speed |v|; q may be np.inf."""
    speed = evaluate_flow(spec, grid, t).speed
    if np.isinf(q):
        return float(np.max(speed))
    if q <= 0:
        raise ValueError(f"Lebesgue exponent must be > 0, got {q}")
    return float(np.mean(speed ** q) ** (1.0 / q))


# --- Shear critical order ---

class _Trig:
    """Band-limited interpolant of periodic samples, differentiable anywhere."""

    def __init__(self, samples):
        n = samples.size
        self.coeffs = np.fft.fft(samples) / n
        self.k = np.fft.fftfreq(n, d=1.0 / n)
        if n % 2 == 0:
            self.coeffs[n // 2] = 0.0

    def derivative(self, x, order):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        symbol = (1j * TWO_PI * self.k) ** order
        phases = np.exp(1j * TWO_PI * np.outer(x, self.k))
        return (phases @ (symbol * self.coeffs)).real

    def seminorm(self, order):
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2 * (TWO_PI * self.k) ** (2 * order))))


def _periodic_distance(a, b):
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def shear_critical_order(profile, tol=CRITICAL_ORDER_TOL):
    """
    Largest order of vanishing of v1' at the critical points of a shear profile.

    Critical points are sign changes of v1' (refined by brentq) plus
    touch points where |v1'| has a small local minimum without a sign change.
    At each, derivatives i = 1, 2, ... count as vanishing while
    |v1^(i)| < tol * ||v1||_{H^i}; the result is (count) + 1.

    Raises:
        FlowError: if the profile is constant ("no shearing")
    """
    profile = np.asarray(profile.profile if isinstance(profile, Shear) else profile, dtype=float)
    trig = _Trig(profile)
    if trig.seminorm(1) <= 1e-12 * max(1.0, float(np.max(np.abs(profile)))):
        raise FlowError("no shearing: v1 is constant")

    n_fine = max(FINE_SAMPLES, 16 * profile.size)
    xs = np.arange(n_fine) / n_fine
    d1 = trig.derivative(xs, 1)
    d1_next = np.roll(d1, -1)
    scale = float(np.max(np.abs(d1)))

    f1 = lambda x: float(trig.derivative(x, 1)[0])
    f2 = lambda x: float(trig.derivative(x, 2)[0])

    candidates = []
    for i in np.nonzero(d1 * d1_next < 0)[0]:
        a = xs[i]
        b = xs[i + 1] if i + 1 < n_fine else 1.0
        candidates.append(brentq(f1, a, b, xtol=1e-15))

    mag = np.abs(d1)
    touch = (mag <= np.roll(mag, 1)) & (mag <= np.roll(mag, -1)) & (mag < 1e-3 * scale)
    h = 1.0 / n_fine
    for i in np.nonzero(touch)[0]:
        x0 = xs[i]
        lo, hi = x0 - h, x0 + h
        if f2(lo) * f2(hi) < 0:
            x0 = brentq(f2, lo, hi, xtol=1e-15) % 1.0
        candidates.append(x0)

    roots = []
    for x in candidates:
        if all(_periodic_distance(x, r) > 1e-6 for r in roots):
            roots.append(x)

    thresholds = [tol * trig.seminorm(i) for i in range(MAX_CRITICAL_ORDER + 1)]
    orders = []
    for x in roots:
        vanishing = 0
        for i in range(1, MAX_CRITICAL_ORDER + 1):
            if abs(float(trig.derivative(x, i)[0])) < thresholds[i]:
                vanishing = i
            else:
                break
        if vanishing >= 1:
            orders.append(vanishing)

    if not orders:
        raise FlowError("no critical point of v1 resolved; refine the profile samples")
    m = max(orders) + 1
    logger.debug(f"shear profile: {len(orders)} critical points, critical order {m}")
    return m
