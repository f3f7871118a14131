"""
Dissipation time and enhanced-dissipation rates of advection-diffusion,
theta_t + v.grad(theta) - nu Lap(theta) = 0, on a truncated mean-zero Fourier basis.

The generator H = -nu Lap + v.grad is assembled as a dense matrix on the
modes 0 < |k|_inf <= K, the solution operator is exp(-t H) and its L^2 norm
is the largest singular value.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from loguru import logger
from scipy.linalg import expm
from scipy.signal import resample
from scipy.stats import linregress

from diagnostics import FitError, decay_fit
from flow_library import Custom, Shear, Zero, evaluate_flow, is_time_dependent
from spectral_core import LAMBDA_1, TWO_PI, Grid, forward_transform

# --- Defaults ---
DEFAULT_TRUNCATION = 16
HALF = 0.5
POWER_ITERATION_TOL = 1e-8
POWER_ITERATION_MAX = 500
SKEW_TOL = 1e-8
TRUNCATION_CONVERGENCE = 0.05
DECAY_R2_MIN = 0.9
MIN_FIT_POINTS = 4
MIN_FIT_DECADES = 1.5
MIXING_RESOLUTION = 1024


class DissipationTimeError(RuntimeError):
    """Bracket failures and ill-conditioned exponentials."""


@dataclass
class TruncatedOperator:
    K: int
    modes: np.ndarray
    matrix: np.ndarray
    nu: float
    time_dependent: bool
    diffusion: np.ndarray
    advection_skew_defect: float = 0.0
    has_advection: bool = True

    @property
    def basis_dim(self):
        return len(self.modes)


@dataclass
class DissipationTimeResult:
    tau_star: float
    K: int
    bisection_tol: float
    norm_curve: list
    truncation_converged: Optional[bool] = None
    tau_star_refined: Optional[float] = None


@dataclass
class TruncationCheck:
    tau_coarse: float
    tau_fine: float
    relative_change: float
    converged: bool


@dataclass
class EnhancedRate:
    nu: float
    rate: float
    prefactor: float
    r_squared: float
    horizon: float


@dataclass
class EnhancedDissipationFit:
    exponent: float
    log_prefactor: float
    prefactor: float
    r_squared: float
    residual: float
    rates: list = field(default_factory=list)


@dataclass
class MixingFit:
    slope: float
    r_squared: float
    gap_power_m: float
    gap_inverse_m: float


def truncated_modes(K, dim=2):
    """Mean-zero integer frequencies with |k|_inf <= K, lexicographic order."""
    axis = np.arange(-K, K + 1)
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    modes = np.stack([g.ravel() for g in grids], axis=1)
    return modes[np.any(modes != 0, axis=1)]


def default_grid(K, dim=2):
    m = 8
    while m < 3 * K:
        m *= 2
    return Grid(dim, m)


def _flow_dim(flow, dim):
    if isinstance(flow, Zero):
        return dim
    if isinstance(flow, Custom):
        return len(flow.components)
    return 2


def build_operator(flow, nu, K=DEFAULT_TRUNCATION, grid=None, t=0.0, dim=2):
    """
    Dense matrix of -nu Lap + v.grad on the truncated mean-zero basis.

    Entries come from the exact Fourier convolution
    H[k, j] = nu 4 pi^2 |k|^2 delta_kj + sum_l v_l^(k - j) 2 pi i j_l
    with the velocity coefficients read from the evaluation grid.

    Raises:
        ValueError: if nu <= 0 or 3K exceeds the grid size
    """
    if nu <= 0:
        raise ValueError(f"nu must be > 0, got {nu}")
    dim = _flow_dim(flow, dim)
    if grid is None:
        grid = Grid(dim, flow.components[0].shape[0]) if isinstance(flow, Custom) else default_grid(K, dim)
    if 3 * K > grid.points_per_axis:
        raise ValueError(f"truncation K={K} too large for grid M={grid.points_per_axis} (need 3K <= M)")

    modes = truncated_modes(K, grid.dim)
    diffusion = nu * LAMBDA_1 * np.sum(modes ** 2, axis=1).astype(float)
    matrix = np.diag(diffusion).astype(np.complex128)

    velocity = evaluate_flow(flow, grid, t)
    has_advection = not velocity.is_zero()
    skew = 0.0
    if has_advection:
        m = grid.points_per_axis
        diff = modes[:, None, :] - modes[None, :, :]
        inside = np.all(np.abs(diff) < m // 2, axis=2)
        index = tuple(np.mod(diff[..., j], m) for j in range(grid.dim))
        advection = np.zeros_like(matrix)
        for j, comp in enumerate(velocity.components):
            vhat = forward_transform(comp, grid).coeffs
            advection += vhat[index] * (1j * TWO_PI * modes[None, :, j])
        advection = np.where(inside, advection, 0.0)
        scale = np.linalg.norm(advection)
        skew = float(np.linalg.norm(advection + advection.conj().T) / scale) if scale > 0 else 0.0
        if skew > SKEW_TOL:
            logger.warning(f"advection block is not skew-Hermitian (defect {skew:.2e}); flow may be compressible")
        matrix = matrix + advection

    logger.debug(f"built operator: K={K}, {len(modes)} modes, grid M={grid.points_per_axis}, skew defect {skew:.2e}")
    return TruncatedOperator(K=K, modes=modes, matrix=matrix, nu=nu, time_dependent=is_time_dependent(flow),
                             diffusion=diffusion, advection_skew_defect=skew, has_advection=has_advection)


def _exponential(matrix, t):
    solution = expm(-t * matrix)
    if not np.all(np.isfinite(solution)):
        raise DissipationTimeError(
            f"matrix exponential overflowed at t={t:g}: ||tH||_2 = {t * np.linalg.norm(matrix, 2):.3e}, "
            f"condition number {np.linalg.cond(matrix):.3e}"
        )
    return solution


def matrix_operator_norm(solution, seed=0, tol=POWER_ITERATION_TOL, max_iter=POWER_ITERATION_MAX):
    """Largest singular value by power iteration on S^H S, dense 2-norm if that stalls."""
    n = solution.shape[0]
    rng = np.random.Generator(np.random.Philox(key=seed))
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(max_iter):
        y = solution.conj().T @ (solution @ x)
        new_estimate = float(np.real(np.vdot(x, y)))
        size = np.linalg.norm(y)
        if size == 0:
            return 0.0
        x = y / size
        if abs(new_estimate - estimate) <= tol * abs(new_estimate):
            return math.sqrt(max(new_estimate, 0.0))
        estimate = new_estimate
    logger.warning(f"power iteration did not converge in {max_iter} iterations; using dense 2-norm")
    return float(np.linalg.norm(solution, 2))


def solution_operator_norm(op, t, seed=0):
    """||exp(-t H)||_{L^2_0 -> L^2_0} on the truncated basis."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    if t == 0:
        return 1.0
    if not op.has_advection:
        return float(np.max(np.exp(-t * op.diffusion)))
    return matrix_operator_norm(_exponential(op.matrix, t), seed=seed)


def propagate_basis(flow, nu, K, s, t, substeps=32, grid=None, dim=2):
    """
    S_{s, s+t} for a time-dependent flow: time-ordered product of
    midpoint exponentials over `substeps` equal substeps.
    """
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    h = t / substeps
    solution = None
    for i in range(substeps):
        op = build_operator(flow, nu, K, grid=grid, t=s + (i + 0.5) * h, dim=dim)
        factor = _exponential(op.matrix, h)
        solution = factor if solution is None else factor @ solution
    return solution


def _norm_function(flow, nu, K, grid, dim, start_times, substeps, seed):
    if is_time_dependent(flow):
        starts = list(start_times) if start_times is not None else [0.0, 0.25, 0.5, 0.75]

        def norm_at(t):
            if t == 0:
                return 1.0
            return max(matrix_operator_norm(propagate_basis(flow, nu, K, s, t, substeps, grid, dim), seed)
                       for s in starts)
        return norm_at

    op = build_operator(flow, nu, K, grid=grid, dim=dim)
    return lambda t: solution_operator_norm(op, t, seed)


def dissipation_time(flow, nu, K=DEFAULT_TRUNCATION, tol=1e-6, grid=None, dim=2, start_times=None,
                     substeps=32, seed=0, check_truncation=False):
    """
    Smallest t with ||S_{0,t}|| <= 1/2, by bisection on [0, 2 ln2 / (nu 4 pi^2)].

    Time-dependent flows take the worst case over `start_times`.

    Raises:
        DissipationTimeError: if the norm does not cross 1/2 in the bracket or
            the result fails the monotonicity check
    """
    norm_at = _norm_function(flow, nu, K, grid, dim, start_times, substeps, seed)
    curve = {}

    def evaluate(t):
        if t not in curve:
            curve[t] = norm_at(t)
        return curve[t]

    lo, hi = 0.0, 2.0 * math.log(2.0) / (nu * LAMBDA_1)
    if evaluate(hi) > HALF:
        raise DissipationTimeError(
            f"norm {curve[hi]:.6f} > 1/2 at bracket end t={hi:g}; truncation K={K} may be pathological"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if evaluate(mid) > HALF:
            lo = mid
        else:
            hi = mid
    tau_star = hi
    if evaluate(tau_star + tol) > HALF:
        raise DissipationTimeError(f"norm rises above 1/2 after tau*={tau_star:g}")

    result = DissipationTimeResult(tau_star=tau_star, K=K, bisection_tol=tol,
                                   norm_curve=sorted(curve.items()))
    if check_truncation:
        check = truncation_check(flow, nu, K, tol, coarse=tau_star, dim=dim, start_times=start_times,
                                 substeps=substeps, seed=seed)
        result.truncation_converged = check.converged
        result.tau_star_refined = check.tau_fine
    logger.info(f"dissipation time tau*={tau_star:.6g} (nu={nu}, K={K}, {len(curve)} norm evaluations)")
    return result


def truncation_check(flow, nu, K, tol=1e-6, coarse=None, dim=2, start_times=None, substeps=32, seed=0):
    """Compare tau* at K and 2K; converged when the relative change is under 5%."""
    if coarse is None:
        coarse = dissipation_time(flow, nu, K, tol, dim=dim, start_times=start_times,
                                  substeps=substeps, seed=seed).tau_star
    fine = dissipation_time(flow, nu, 2 * K, tol, dim=dim, start_times=start_times,
                            substeps=substeps, seed=seed).tau_star
    change = abs(fine - coarse) / fine
    converged = change < TRUNCATION_CONVERGENCE
    if not converged:
        logger.warning(f"tau* not converged in K: {coarse:.6g} at K={K} vs {fine:.6g} at K={2 * K}")
    return TruncationCheck(coarse, fine, change, converged)


# --- Enhanced dissipation ---

def _random_perp_state(modes, seed):
    """Random coefficients on the modes with k1 != 0 (zero x1-average)."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    state = rng.standard_normal(len(modes)) + 1j * rng.standard_normal(len(modes))
    state[modes[:, 0] == 0] = 0.0
    return state / np.linalg.norm(state)


def enhanced_dissipation_rate(flow, nu, K=DEFAULT_TRUNCATION, seed=0, samples=40, decay_target=12.0):
    """
    Late-time decay rate of a random u_perp under exp(-t H_nu).

    The horizon T doubles until ||u(T)|| <= e^(-decay_target) ||u0||; the
    rate is the exponential fit on the window [0.2 T, T].
    """
    op = build_operator(flow, nu, K)
    state = _random_perp_state(op.modes, seed)
    horizon = 1.0 / (nu * LAMBDA_1) / 8.0
    for _ in range(60):
        if np.linalg.norm(_exponential(op.matrix, horizon) @ state) <= math.exp(-decay_target):
            break
        horizon *= 2.0
    else:
        raise FitError(f"no decay to e^-{decay_target} found for nu={nu}")

    h = horizon / samples
    propagator = _exponential(op.matrix, h)
    times = np.arange(samples + 1) * h
    norms = np.empty(samples + 1)
    current = state
    for i in range(samples + 1):
        norms[i] = np.linalg.norm(current)
        current = propagator @ current
    window = times >= 0.2 * horizon
    fit = decay_fit(times[window], norms[window])
    if fit.r_squared < DECAY_R2_MIN:
        raise FitError(
            f"decay of u_perp is not exponential for nu={nu}: R^2={fit.r_squared:.3f} on "
            f"[{0.2 * horizon:.3g}, {horizon:.3g}], norms {norms[window][0]:.3e} -> {norms[window][-1]:.3e}"
        )
    logger.debug(f"nu={nu}: lambda_nu={fit.rate:.5g} (R^2={fit.r_squared:.4f}, T={horizon:.4g})")
    return EnhancedRate(nu=nu, rate=fit.rate, prefactor=fit.prefactor, r_squared=fit.r_squared, horizon=horizon)


def enhanced_dissipation_fit(flow, nu_list, K=DEFAULT_TRUNCATION, seed=0):
    """
    Regress log lambda_nu on log nu; the slope estimates 2/(2+m), the intercept log c0.

    Raises:
        ValueError: with fewer than 4 nu values or a span under 1.5 decades
        FitError: if any single decay window is not exponential
    """
    nus = sorted(float(n) for n in nu_list)
    if len(nus) < MIN_FIT_POINTS:
        raise ValueError(f"need at least {MIN_FIT_POINTS} nu values, got {len(nus)}")
    if math.log10(nus[-1] / nus[0]) < MIN_FIT_DECADES:
        raise ValueError(f"nu values must span at least {MIN_FIT_DECADES} decades, got {nus[0]:g}..{nus[-1]:g}")
    rates = [enhanced_dissipation_rate(flow, nu, K, seed) for nu in nus]
    x = np.log(nus)
    y = np.log([r.rate for r in rates])
    fit = linregress(x, y)
    residual = y - (fit.intercept + fit.slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(residual ** 2)) / ss_tot
    logger.info(f"enhanced dissipation exponent {fit.slope:.4f}, c0={math.exp(fit.intercept):.4g}, R^2={r_squared:.4f}")
    return EnhancedDissipationFit(exponent=float(fit.slope), log_prefactor=float(fit.intercept),
                                  prefactor=math.exp(fit.intercept), r_squared=r_squared,
                                  residual=float(np.sqrt(np.mean(residual ** 2))),
                                  rates=[(r.nu, r.rate) for r in rates])


# --- Pure transport mixing ---

def pure_transport_mixing(u0, shear, times, resolution=MIXING_RESOLUTION):
    """
    H^-1 norms of the exact shear transport of u0_perp at the given times.

    In the mixed representation u^(k1, x2, t) = u0^(k1, x2) exp(-2 pi i k1 v1(x2) t);
    x2 is refined to `resolution` points so the sheared phases stay resolved.
    """
    if u0.grid.dim != 2:
        raise ValueError("pure transport mixing needs a 2-D field")
    if not isinstance(shear, Shear):
        raise ValueError(f"pure transport mixing needs a Shear flow, got {type(shear).__name__}")
    m = u0.grid.points_per_axis
    r = max(resolution, m)
    coeffs = u0.coeffs.copy()
    if np.max(np.abs(coeffs[0, :])) > 1e-12 * max(np.max(np.abs(coeffs)), 1e-300):
        logger.warning("dropping k1 = 0 content: transport leaves the x1-average unchanged")
    coeffs[0, :] = 0.0

    k2_fine = np.fft.fftfreq(r, d=1.0 / r)
    padded = np.zeros((m, r), dtype=np.complex128)
    k2 = u0.grid.wavenumbers
    padded[:, np.mod(k2.astype(int), r)] = coeffs
    mixed = np.fft.ifft(padded, axis=1) * r
    profile = shear.profile if shear.profile.size == r else resample(shear.profile, r)

    k1 = u0.grid.wavenumbers[:, None]
    weights = LAMBDA_1 * (k1 ** 2 + k2_fine[None, :] ** 2)
    inverse = np.zeros_like(weights)
    inverse[weights > 0] = 1.0 / weights[weights > 0]

    norms = []
    for t in times:
        transported = mixed * np.exp(-1j * TWO_PI * k1 * profile[None, :] * t)
        spectrum = np.fft.fft(transported, axis=1) / r
        norms.append(float(np.sqrt(np.sum(inverse * np.abs(spectrum) ** 2))))
    return norms


def mixing_rate_fit(times, norms, m):
    """Slope of log H^-1 norm against log(1+t), compared with -m and -1/m."""
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if times.size < 3 or np.any(norms <= 0):
        raise FitError("mixing fit needs at least 3 positive samples")
    x = np.log1p(times)
    y = np.log(norms)
    fit = linregress(x, y)
    residual = y - (fit.intercept + fit.slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(residual ** 2)) / ss_tot
    slope = float(fit.slope)
    return MixingFit(slope=slope, r_squared=r_squared, gap_power_m=abs(slope + m), gap_inverse_m=abs(slope + 1.0 / m))
