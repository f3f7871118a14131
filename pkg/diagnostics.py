"""
Scalar functionals and inequality monitors evaluated on solution fields and
trajectories: blow-up energy, energy identity, shear decomposition,
envelope fits for the nonlinear hypotheses, smallness thresholds,
averaged-mode bounds and bootstrap coefficients.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger
from scipy.stats import linregress

from spectral_core import (
    H1_SEMI,
    LAMBDA_1,
    Grid,
    SpectralField,
    forward_transform,
    integrate_samples,
    inverse_transform,
    l2_norm,
    pointwise_power,
    sobolev_norm,
)

CSV_COLUMNS = ["t", "l2_norm", "h1_seminorm", "l2_mean_x1", "l2_perp", "blowup_energy", "energy_residual"]
EXTRA_COLUMNS = ["perp_grad_sq"]
ASSUMED_BOOTSTRAP = (20.0, 10.0)
IMPROVED_BOOTSTRAP = (15.0, 5.0)
MIN_DECAY_SAMPLES = 5


class FitError(ValueError):
    """A fit could not be made from the supplied samples."""


# --- Trajectory record ---

@dataclass
class TrajectoryRecord:
    frame: pd.DataFrame
    config_hash: str = ""
    snapshots: list = field(default_factory=list)
    final_state: Optional[SpectralField] = None

    @classmethod
    def from_rows(cls, rows, config_hash="", snapshots=None, final_state=None):
        frame = pd.DataFrame(rows, columns=CSV_COLUMNS + EXTRA_COLUMNS)
        record = cls(frame, config_hash, list(snapshots or []), final_state)
        record.validate()
        return record

    @property
    def times(self):
        return self.frame["t"].to_numpy()

    def column(self, name):
        return self.frame[name].to_numpy()

    def __len__(self):
        return len(self.frame)

    def validate(self):
        times = self.times
        if np.any(np.diff(times) <= 0):
            raise ValueError("trajectory times are not strictly increasing")
        for name in ("l2_norm", "h1_seminorm", "l2_mean_x1", "l2_perp"):
            if np.any(self.column(name) < 0):
                raise ValueError(f"negative values in column {name}")

    def to_csv(self, path):
        self.frame[CSV_COLUMNS].to_csv(path, index=False, float_format="%.17g")


# --- Shear decomposition ---

def shear_decompose(u):
    """
    Split u = <u> + u_perp, with <u>(x2) the x1-average.

    Returns:
        tuple: (mean_part on a 1-D grid, perp_part on u's grid)

    Raises:
        ValueError: if u is not two-dimensional
    """
    if u.grid.dim != 2:
        raise ValueError(f"shear decomposition needs a 2-D field, got dim {u.grid.dim}")
    line = Grid(1, u.grid.points_per_axis)
    mean_part = SpectralField(line, u.coeffs[0, :].copy(), is_mean_zero=u.is_mean_zero)
    perp = u.coeffs.copy()
    perp[0, :] = 0.0
    return mean_part, SpectralField(u.grid, perp, is_mean_zero=True)


def embed_mean(mean_part, grid):
    """Lift a 1-D x2-profile back onto the 2-D grid (constant in x1)."""
    coeffs = np.zeros(grid.shape, dtype=np.complex128)
    coeffs[0, :] = mean_part.coeffs
    return SpectralField(grid, coeffs, is_mean_zero=mean_part.is_mean_zero)


def _split(u):
    """(x1-averaged part, remainder) on u's own grid; for N = 1 the average is the mean."""
    if u.grid.dim == 2:
        mean_part, perp = shear_decompose(u)
        return embed_mean(mean_part, u.grid), perp
    coeffs = np.zeros(u.grid.shape, dtype=np.complex128)
    coeffs[0] = u.coeffs[0]
    rest = u.coeffs.copy()
    rest[0] = 0.0
    return SpectralField(u.grid, coeffs), SpectralField(u.grid, rest, is_mean_zero=True)


# --- Energies ---

def blowup_energy_terms(u, p):
    """(1/2 ||grad u||^2, integral |u|^(p+1) / (p+1))."""
    gradient_term = 0.5 * sobolev_norm(u, H1_SEMI) ** 2
    potential_term = pointwise_power(u, p + 1).mean / (p + 1)
    return gradient_term, potential_term


def blowup_energy(u, p):
    gradient_term, potential_term = blowup_energy_terms(u, p)
    return gradient_term - potential_term


def blowup_threshold_amplitude(shape, p):
    """Amplitude A* at which E(A * shape) changes sign: ((p+1) G / Q)^(1/(p-1))."""
    if p <= 1:
        raise ValueError(f"blow-up threshold needs p > 1, got {p}")
    gradient_term, potential_term = blowup_energy_terms(shape, p)
    if potential_term <= 0:
        raise ValueError("shape has zero L^(p+1) norm")
    # potential_term already carries the 1/(p+1)
    return (gradient_term / potential_term) ** (1.0 / (p - 1))


def energy_rate(u, p, nu=1.0, weight=1.0):
    """
    nu ||grad u||^2 - w (int |u|^p u - int |u|^p int u).

    Twice its time integral closes the L^2 balance: ||u(t)||^2 - ||u0||^2 + 2 int rate = 0.
    """
    samples = inverse_transform(u)
    power = np.abs(samples) ** p
    pairing = integrate_samples(power * samples) - integrate_samples(power) * integrate_samples(samples)
    return nu * sobolev_norm(u, H1_SEMI) ** 2 - weight * pairing


def energy_identity_residual(snapshots, p, nu=1.0, weight=1.0):
    """
    |‖u(T)‖² + 2 ∫ rate dt − ‖u0‖²| over (t, field) samples, trapezoid in time.

    Raises:
        ValueError: with fewer than 3 samples
    """
    if len(snapshots) < 3:
        raise ValueError(f"energy identity needs at least 3 samples, got {len(snapshots)}")
    times = np.array([t for t, _ in snapshots])
    rates = np.array([energy_rate(u, p, nu, weight) for _, u in snapshots])
    integral = float(np.sum(0.5 * np.diff(times) * (rates[1:] + rates[:-1])))
    first, last = snapshots[0][1], snapshots[-1][1]
    return abs(l2_norm(last) ** 2 + 2.0 * integral - l2_norm(first) ** 2)


def sample_row(u, t, p, residual):
    mean_part, perp = _split(u)
    return {
        "t": t,
        "l2_norm": l2_norm(u),
        "h1_seminorm": sobolev_norm(u, H1_SEMI),
        "l2_mean_x1": l2_norm(mean_part),
        "l2_perp": l2_norm(perp),
        "blowup_energy": blowup_energy(u, p),
        "energy_residual": residual,
        "perp_grad_sq": sobolev_norm(perp, H1_SEMI) ** 2,
    }


# --- Hypothesis terms and envelope fits ---

@dataclass
class H1H2Terms:
    pairing: float
    grad_sq: float
    nonlinearity_l2: float
    l2: float


@dataclass
class EnvelopeFit:
    coefficient: float
    constant: float
    exponents: tuple


def h1_h2_terms(phi, p):
    from evolution import nonlocal_nonlinearity

    nonlinear = nonlocal_nonlinearity(phi, p)
    pairing = float(np.real(np.vdot(phi.coeffs, nonlinear.coeffs)))
    return H1H2Terms(
        pairing=pairing,
        grad_sq=sobolev_norm(phi, H1_SEMI) ** 2,
        nonlinearity_l2=l2_norm(nonlinear),
        l2=l2_norm(phi),
    )


def h1_exponent(p, dim):
    return (4 * (p + 1) - 2 * (p - 1) * dim) / (4 - (p - 1) * dim)


def h2_exponents(p, dim):
    return ((4 * p - 2 * (p - 1) * dim) / (4 - (p - 1) * dim),
            (4 * p - 2 * (p - 2) * dim) / (4 - (p - 2) * dim))


def fit_h1_envelope(terms, p, dim, epsilon0=0.5):
    """
    Minimal C with |pairing| <= (1 - epsilon0) grad_sq + C y^e over the samples,
    then the largest epsilon0 that constant still admits.

    Returns:
        EnvelopeFit with coefficient = fitted epsilon0
    """
    exponent = h1_exponent(p, dim)
    usable = [s for s in terms if s.l2 > 0]
    if not usable:
        raise FitError("no nonzero samples for the (H1) envelope")
    constant = max(max((abs(s.pairing) - (1 - epsilon0) * s.grad_sq) / s.l2 ** exponent for s in usable), 0.0)
    best = 1.0
    for s in usable:
        if s.grad_sq > 0:
            best = min(best, 1.0 - (abs(s.pairing) - constant * s.l2 ** exponent) / s.grad_sq)
    return EnvelopeFit(coefficient=best, constant=constant, exponents=(exponent,))


def fit_h2_envelope(terms, p, dim, c0=1.0):
    """Minimal C with ||N(phi)|| <= c0 grad_sq + C (y^e1 + y^e2) over the samples."""
    e1, e2 = h2_exponents(p, dim)
    usable = [s for s in terms if s.l2 > 0]
    if not usable:
        raise FitError("no nonzero samples for the (H2) envelope")
    constant = max(max((s.nonlinearity_l2 - c0 * s.grad_sq) / (s.l2 ** e1 + s.l2 ** e2) for s in usable), 0.0)
    return EnvelopeFit(coefficient=c0, constant=constant, exponents=(e1, e2))


# --- Shear regime quantities ---

def smallness_threshold(p, C_p):
    """1/4 (lambda_1 / (4 C_p))^((5-p)/(4(p-1))) with lambda_1 = 4 pi^2."""
    if not 1 < p < 2:
        raise ValueError(f"smallness threshold needs 1 < p < 2, got {p}")
    if C_p <= 0:
        raise ValueError(f"C_p must be > 0, got {C_p}")
    return 0.25 * (LAMBDA_1 / (4.0 * C_p)) ** ((5.0 - p) / (4.0 * (p - 1.0)))


def fit_gagliardo_nirenberg_constant(p, samples=200, points=64, k_max=8, seed=0):
    """
    Largest observed ratio int|g|^(p+1) / (||g'||^((p-1)/2) ||g||^((p+3)/2))
    over seeded random mean-zero band-limited g on the circle.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    line = Grid(1, points)
    k = np.abs(line.wavenumbers)
    band = (k >= 1) & (k <= k_max)
    best = 0.0
    for _ in range(samples):
        coeffs = np.zeros(points, dtype=np.complex128)
        coeffs[band] = rng.standard_normal(band.sum()) + 1j * rng.standard_normal(band.sum())
        decay = rng.uniform(0.0, 2.0)
        coeffs[band] /= np.maximum(k[band], 1) ** decay
        g = forward_transform(inverse_transform(SpectralField(line, coeffs)), line)
        norm = l2_norm(g)
        grad = sobolev_norm(g, H1_SEMI)
        if norm == 0 or grad == 0:
            continue
        lebesgue = integrate_samples(np.abs(inverse_transform(g)) ** (p + 1))
        best = max(best, lebesgue / (grad ** ((p - 1) / 2) * norm ** ((p + 3) / 2)))
    logger.debug(f"fitted Gagliardo-Nirenberg constant {best:.4g} for p={p}")
    return best


def averaged_mode_constant(p, nu, lambda_nu, C_p):
    """20 C_p 10^((p-1)/2) [2(3-p)]^((3-p)/2) (nu / lambda_nu)^((3-p)/2)."""
    return (20.0 * C_p * 10.0 ** ((p - 1) / 2) * (2.0 * (3.0 - p)) ** ((3.0 - p) / 2)
            * (nu / lambda_nu) ** ((3.0 - p) / 2))


def averaged_mode_bound(mean0, perp0, p, nu, lambda_nu, C_p):
    """Bound on ||<u>(t)||: sqrt(exp(C ||u_perp(0)||^p) (||<u0>||^2 + C ||u_perp(0)||^p))."""
    c = averaged_mode_constant(p, nu, lambda_nu, C_p)
    forcing = c * perp0 ** p
    return math.sqrt(math.exp(forcing) * (mean0 ** 2 + forcing))


# --- Bootstrap monitor ---

@dataclass
class BootstrapReport:
    coeff_decay: float
    coeff_gradient: float
    lambda_nu_used: float
    within_assumed: bool
    within_improved: bool


def bootstrap_monitor(record, lambda_nu, nu=1.0):
    """
    Extremal constants over sampled pairs s <= t of

        ||u_perp(t)|| <= C e^(-lambda (t - s) / 4) ||u_perp(s)||
        nu int_s^t ||grad u_perp||^2 <= C' ||u_perp(s)||^2
    """
    frame = record.frame
    if "l2_perp" not in frame or "perp_grad_sq" not in frame or frame[["l2_perp", "perp_grad_sq"]].isna().any().any():
        raise ValueError("trajectory lacks the perp decomposition samples")
    times = frame["t"].to_numpy(dtype=float)
    perp = frame["l2_perp"].to_numpy(dtype=float)
    grad_sq = frame["perp_grad_sq"].to_numpy(dtype=float)

    alive = perp > 0
    if not np.any(alive):
        return BootstrapReport(0.0, 0.0, lambda_nu, True, True)

    with np.errstate(divide="ignore"):
        shifted = np.log(perp) + 0.25 * lambda_nu * times
    suffix_max = np.maximum.accumulate(shifted[::-1])[::-1]
    coeff_decay = float(np.max(np.exp(suffix_max[alive] - shifted[alive])))

    cumulative = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(times) * (grad_sq[1:] + grad_sq[:-1]))])
    tail = nu * (cumulative[-1] - cumulative)
    coeff_gradient = float(np.max(tail[alive] / perp[alive] ** 2))

    report = BootstrapReport(
        coeff_decay=coeff_decay,
        coeff_gradient=coeff_gradient,
        lambda_nu_used=lambda_nu,
        within_assumed=coeff_decay <= ASSUMED_BOOTSTRAP[0] and coeff_gradient <= ASSUMED_BOOTSTRAP[1],
        within_improved=coeff_decay <= IMPROVED_BOOTSTRAP[0] and coeff_gradient <= IMPROVED_BOOTSTRAP[1],
    )
    logger.debug(f"bootstrap coefficients: decay {coeff_decay:.4g}, gradient {coeff_gradient:.4g}")
    return report


# --- Decay fit ---

@dataclass
class DecayFit:
    rate: float
    prefactor: float
    r_squared: float


def decay_fit(series, values=None):
    """
    Least-squares line through (t, log value); rate = -slope.

    Args:
        series: list of (t, value) pairs, or the times when `values` is given

    Raises:
        FitError: with fewer than 5 samples or a non-positive value
    """
    if values is None:
        pairs = list(series)
        times = np.array([t for t, _ in pairs], dtype=float)
        values = np.array([v for _, v in pairs], dtype=float)
    else:
        times = np.asarray(series, dtype=float)
        values = np.asarray(values, dtype=float)
    if times.size < MIN_DECAY_SAMPLES:
        raise FitError(f"decay fit needs at least {MIN_DECAY_SAMPLES} samples, got {times.size}")
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise FitError("decay fit window contains non-positive or non-finite values")

    logs = np.log(values)
    fit = linregress(times, logs)
    residual = logs - (fit.intercept + fit.slope * times)
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(residual ** 2)) / ss_tot
    return DecayFit(rate=-fit.slope, prefactor=math.exp(fit.intercept), r_squared=r_squared)
