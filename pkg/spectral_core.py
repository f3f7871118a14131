"""
Fourier representation of real scalar fields on the unit torus [0,1)^N.
Transforms, heat semigroup, Sobolev norms, spectral derivatives and dealiasing.

Coefficients are normalized so that coeffs[0] is the spatial mean, and arrays
are laid out in numpy FFT order (axis j holds frequency k_j).
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

# --- Constants ---
TWO_PI = 2.0 * np.pi
LAMBDA_1 = 4.0 * np.pi ** 2  # first nonzero eigenvalue of -Laplacian on [0,1)^N
DEFAULT_DEALIAS_FRACTION = 2.0 / 3.0
MEAN_ZERO_TOL = 1e-12
SUPPORTED_DIMS = (1, 2)
MIN_POINTS = 8


class GridMismatchError(ValueError):
    """Raised when samples or fields do not live on the expected grid."""


@dataclass(frozen=True)
class Grid:
    dim: int
    points_per_axis: int

    def __post_init__(self):
        if self.dim not in SUPPORTED_DIMS:
            raise ValueError(f"Grid dim must be one of {SUPPORTED_DIMS}, got {self.dim}")
        m = self.points_per_axis
        if m < MIN_POINTS or m & (m - 1):
            raise ValueError(f"points_per_axis must be a power of two >= {MIN_POINTS}, got {m}")

    @property
    def spacing(self):
        return 1.0 / self.points_per_axis

    @property
    def shape(self):
        return (self.points_per_axis,) * self.dim

    @property
    def sample_count(self):
        return self.points_per_axis ** self.dim

    @cached_property
    def wavenumbers(self):
        """Integer frequencies of one axis in FFT order."""
        m = self.points_per_axis
        return np.fft.fftfreq(m, d=1.0 / m)

    @cached_property
    def k_vectors(self):
        return tuple(np.meshgrid(*([self.wavenumbers] * self.dim), indexing="ij"))

    @cached_property
    def k_squared(self):
        return sum(k ** 2 for k in self.k_vectors)

    @cached_property
    def k_max_abs(self):
        """|k|_inf per mode."""
        return np.max(np.abs(np.stack(self.k_vectors)), axis=0)

    @cached_property
    def coordinates(self):
        x = np.arange(self.points_per_axis) * self.spacing
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def nyquist_mask(self, axis=None):
        """Modes sitting on the Nyquist frequency along `axis` (any axis if None)."""
        half = self.points_per_axis // 2
        axes = range(self.dim) if axis is None else [axis]
        mask = np.zeros(self.shape, dtype=bool)
        for j in axes:
            mask |= np.abs(self.k_vectors[j]) == half
        return mask

    def zero_index(self):
        return (0,) * self.dim


@dataclass
class SpectralField:
    grid: Grid
    coeffs: np.ndarray
    is_mean_zero: bool = False

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.shape != self.grid.shape:
            raise GridMismatchError(
                f"Coefficient shape {self.coeffs.shape} does not match grid {self.grid.shape}"
            )

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128), is_mean_zero=True)

    @property
    def mean(self):
        return float(self.coeffs[self.grid.zero_index()].real)

    def to_physical(self):
        return inverse_transform(self)

    def with_coeffs(self, coeffs, is_mean_zero=None):
        flag = self.is_mean_zero if is_mean_zero is None else is_mean_zero
        return SpectralField(self.grid, coeffs, is_mean_zero=flag)

    def copy(self):
        return self.with_coeffs(self.coeffs.copy())

    def _check_same_grid(self, other):
        if other.grid != self.grid:
            raise GridMismatchError(f"Cannot combine fields on {self.grid} and {other.grid}")

    def __add__(self, other):
        self._check_same_grid(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs,
                             is_mean_zero=self.is_mean_zero and other.is_mean_zero)

    def __sub__(self, other):
        self._check_same_grid(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs,
                             is_mean_zero=self.is_mean_zero and other.is_mean_zero)

    def __mul__(self, scalar):
        return self.with_coeffs(self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_coeffs(-self.coeffs)


@dataclass(frozen=True)
class SobolevSpec:
    s: float
    homogeneous: bool = False

    def __post_init__(self):
        if not math.isfinite(self.s):
            raise ValueError(f"Sobolev exponent must be finite, got {self.s}")


L2 = SobolevSpec(0.0)
H1_SEMI = SobolevSpec(1.0, homogeneous=True)
H_MINUS_1 = SobolevSpec(-1.0, homogeneous=True)


def forward_transform(samples, grid=None):
    """
    Fourier coefficients of real samples.

    Args:
        samples: real array of shape (M,) or (M, M)
        grid: target grid; inferred from the sample shape when omitted

    Returns:
        SpectralField with coeffs[0] equal to the sample mean

    Raises:
        GridMismatchError: if the sample shape does not match the grid
    """
    samples = np.asarray(samples)
    if np.iscomplexobj(samples):
        samples = samples.real
    if grid is None:
        if samples.ndim not in SUPPORTED_DIMS or len(set(samples.shape)) != 1:
            raise GridMismatchError(f"Cannot infer a square grid from shape {samples.shape}")
        grid = Grid(samples.ndim, samples.shape[0])
    if samples.shape != grid.shape:
        raise GridMismatchError(f"Sample shape {samples.shape} does not match grid {grid.shape}")
    coeffs = np.fft.fftn(samples.astype(np.float64)) / grid.sample_count
    return SpectralField(grid, coeffs)


def inverse_transform(u):
    return np.fft.ifftn(u.coeffs * u.grid.sample_count).real


def integrate_samples(samples):
    """Periodic rectangle rule on [0,1)^N (weight 1/M^N)."""
    return float(np.mean(samples))


def pointwise_power(u, p):
    """|u|^p formed in physical space."""
    return forward_transform(np.abs(inverse_transform(u)) ** p, u.grid)


def heat_semigroup(u, t, kappa=1.0):
    if t < 0:
        raise ValueError(f"heat semigroup time must be >= 0, got {t}")
    if kappa <= 0:
        raise ValueError(f"diffusivity must be > 0, got {kappa}")
    multiplier = np.exp(-kappa * LAMBDA_1 * u.grid.k_squared * t)
    return u.with_coeffs(u.coeffs * multiplier)


def sobolev_weights(grid, spec):
    lam = LAMBDA_1 * grid.k_squared
    if not spec.homogeneous:
        return (1.0 + lam) ** spec.s
    weights = np.zeros(grid.shape)
    nonzero = lam > 0
    weights[nonzero] = lam[nonzero] ** spec.s
    return weights


def sobolev_norm(u, spec=L2):
    """(sum_k w(k)|u_k|^2)^(1/2); homogeneous weights skip k = 0."""
    weights = sobolev_weights(u.grid, spec)
    return float(np.sqrt(np.sum(weights * np.abs(u.coeffs) ** 2)))


def l2_norm(u):
    return float(np.sqrt(np.sum(np.abs(u.coeffs) ** 2)))


def gradient(u):
    """Spectral partial derivatives; the Nyquist plane of each axis is zeroed."""
    grid = u.grid
    components = []
    for j in range(grid.dim):
        symbol = 1j * TWO_PI * grid.k_vectors[j]
        symbol = np.where(grid.nyquist_mask(j), 0.0, symbol)
        components.append(SpectralField(grid, u.coeffs * symbol, is_mean_zero=True))
    return components


def project_mean_zero(u):
    coeffs = u.coeffs.copy()
    coeffs[u.grid.zero_index()] = 0.0
    return SpectralField(u.grid, coeffs, is_mean_zero=True)


def dealias(u, fraction=DEFAULT_DEALIAS_FRACTION):
    """Zero every mode with some |k_j| > fraction * M/2."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"dealias fraction must be in (0, 1], got {fraction}")
    cutoff = fraction * u.grid.points_per_axis / 2.0
    keep = u.grid.k_max_abs <= cutoff
    return u.with_coeffs(np.where(keep, u.coeffs, 0.0))


def fractional_laplacian(u, s):
    """(-Laplacian)^(s/2) as a Fourier multiplier; kills the mean."""
    weights = sobolev_weights(u.grid, SobolevSpec(s / 2.0, homogeneous=True))
    return SpectralField(u.grid, u.coeffs * weights, is_mean_zero=True)


def shift(u, offset):
    """Translate u by `offset` (one entry per axis): returns x -> u(x - offset)."""
    grid = u.grid
    offset = np.broadcast_to(np.asarray(offset, dtype=float), (grid.dim,))
    phase = sum(k * a for k, a in zip(grid.k_vectors, offset))
    coeffs = u.coeffs * np.exp(-1j * TWO_PI * phase)
    on_grid = np.allclose(offset * grid.points_per_axis, np.round(offset * grid.points_per_axis))
    if not on_grid:
        # off-grid phases make the Nyquist coefficient complex
        coeffs = np.where(grid.nyquist_mask(), 0.0, coeffs)
    return u.with_coeffs(coeffs)


def semigroup_smoothing_constant(s):
    """C_s with ||(-Lap)^(s/2) e^(t Lap) f|| <= C_s t^(-s/2) ||f|| for mean-zero f."""
    if s < 0:
        raise ValueError(f"smoothing order must be >= 0, got {s}")
    if s == 0:
        return 1.0
    return (s / (2.0 * math.e)) ** (s / 2.0)


def is_hermitian(u, tol=1e-12):
    """coeffs(-k) == conj(coeffs(k)), i.e. the field is real-valued."""
    flipped = u.coeffs
    for axis in range(u.grid.dim):
        flipped = np.roll(np.flip(flipped, axis=axis), 1, axis=axis)
    scale = max(l2_norm(u), 1.0)
    return bool(np.max(np.abs(flipped - np.conj(u.coeffs))) <= tol * scale)
