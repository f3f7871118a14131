"""
Time integration of u_t + v.grad(u) - nu Lap(u) = w (|u|^p - mean |u|^p)
in Duhamel (mild-solution) form, plus a Picard fixed-point iterator for
the local-existence contraction.

Integrators are exponential: ETD1 (exponential Euler) by default and the
two-stage ETDRK2 corrector on request. The linear part is the diagonal
Fourier multiplier -nu 4 pi^2 |k|^2.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Union

import numpy as np
from loguru import logger

import diagnostics
from flow_library import FlowSpec, VelocitySample, Zero, evaluate_flow, flow_lebesgue_norm, is_time_dependent
from spectral_core import (
    DEFAULT_DEALIAS_FRACTION,
    LAMBDA_1,
    Grid,
    SpectralField,
    dealias,
    forward_transform,
    gradient,
    heat_semigroup,
    inverse_transform,
    l2_norm,
    pointwise_power,
    project_mean_zero,
)

# --- Solver defaults ---
PHI_TAYLOR_CUTOFF = 1e-4
DEFAULT_BLOWUP_THRESHOLD = 1e6
MAX_DT_HALVINGS = 20
GROWTH_GUARD = 10.0
SCHEMES = ("etd1", "etdrk2")
FORMS = ("standard", "rescaled")

# --- Picard defaults ---
PICARD_DIVERGENCE_NORM = 1e6
PICARD_FIXED_POINT_TOL = 1e-14
PICARD_CONVERGED_WINDOW = 3


class NonFiniteStateError(ArithmeticError):
    """A field picked up NaN or inf samples."""


def fujita_bound(dim):
    return 1.0 + 2.0 / dim


def validate_exponent(p, dim):
    """Raise ValueError unless 1 <= p < 1 + 2/N."""
    bound = fujita_bound(dim)
    if not (1.0 <= p < bound):
        raise ValueError(f"p = {p} violates 1 <= p < 1 + 2/N = {bound:g} for N = {dim}")


@dataclass
class SolverConfig:
    grid: Grid
    nu: float = 1.0
    p: float = 1.5
    dt: float = 1e-3
    t_end: float = 1.0
    flow: FlowSpec = field(default_factory=Zero)
    dealias_fraction: float = DEFAULT_DEALIAS_FRACTION
    blowup_threshold: float = DEFAULT_BLOWUP_THRESHOLD
    enforce_mean_zero: bool = True
    scheme: str = "etd1"
    form: str = "standard"
    max_halvings: int = MAX_DT_HALVINGS
    growth_guard: float = GROWTH_GUARD

    def __post_init__(self):
        validate_exponent(self.p, self.grid.dim)
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.nu <= 0:
            raise ValueError(f"nu must be > 0, got {self.nu}")
        if self.t_end < 0:
            raise ValueError(f"t_end must be >= 0, got {self.t_end}")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ValueError(f"dealias_fraction must be in (0, 1], got {self.dealias_fraction}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}, got {self.form!r}")

    @property
    def nonlinear_weight(self):
        """1 in the standard form, nu in the rescaled shear form."""
        return self.nu if self.form == "rescaled" else 1.0


# --- Status variants ---

@dataclass(frozen=True)
class Completed:
    t: float = 0.0


@dataclass(frozen=True)
class BlowUp:
    t_detect: float
    norm: float


@dataclass(frozen=True)
class StepCollapse:
    t: float


EvolutionStatus = Union[Completed, BlowUp, StepCollapse]


def status_name(status):
    return type(status).__name__


@dataclass
class PicardReport:
    T: float
    iterate_norms: list
    contraction_ratios: list
    converged: bool
    fitted_constant: Optional[float] = None
    times: Optional[np.ndarray] = None
    limit: Optional[SpectralField] = None
    fixed_point: bool = False


# --- Right-hand side ---

def _check_finite(samples):
    if not np.all(np.isfinite(samples)):
        raise NonFiniteStateError("non-finite samples in field")


def nonlocal_nonlinearity(u, p, dealias_fraction=DEFAULT_DEALIAS_FRACTION):
    """|u|^p minus its own mean, dealiased. Always mean-zero."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    power = pointwise_power(u, p)
    _check_finite(power.coeffs)
    return dealias(project_mean_zero(power), dealias_fraction)


def advection_term(u, flow, t=0.0, dealias_fraction=DEFAULT_DEALIAS_FRACTION):
    """
    Pseudo-spectral v.grad(u).

    `flow` is either a FlowSpec or an already evaluated VelocitySample.
    """
    if isinstance(flow, Zero):
        return SpectralField.zeros(u.grid)
    velocity = flow if isinstance(flow, VelocitySample) else evaluate_flow(flow, u.grid, t)
    if velocity.components[0].shape != u.grid.shape:
        raise ValueError(f"velocity shape {velocity.components[0].shape} does not match grid {u.grid.shape}")
    if velocity.is_zero():
        return SpectralField.zeros(u.grid)
    product = np.zeros(u.grid.shape)
    for comp, du in zip(velocity.components, gradient(u)):
        product += comp * inverse_transform(du)
    return dealias(forward_transform(product, u.grid), dealias_fraction)


def forcing(u, t, config, velocity=None):
    """F = w N(u) - v.grad(u)."""
    flow = velocity if velocity is not None else config.flow
    nonlinear = nonlocal_nonlinearity(u, config.p, config.dealias_fraction)
    advect = advection_term(u, flow, t, config.dealias_fraction)
    coeffs = config.nonlinear_weight * nonlinear.coeffs - advect.coeffs
    return SpectralField(u.grid, coeffs)


# --- Exponential integrator multipliers ---

def phi_functions(z):
    """phi1(z) = (e^z - 1)/z and phi2(z) = (e^z - 1 - z)/z^2, Taylor near 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < PHI_TAYLOR_CUTOFF
    safe = np.where(small, 1.0, z)
    expm1 = np.expm1(safe)
    phi1 = np.where(small, 1 + z / 2 + z ** 2 / 6 + z ** 3 / 24, expm1 / safe)
    phi2 = np.where(small, 0.5 + z / 6 + z ** 2 / 24 + z ** 3 / 120, (expm1 - safe) / safe ** 2)
    return phi1, phi2


@lru_cache(maxsize=32)
def etd_multipliers(grid, nu, dt):
    z = -nu * LAMBDA_1 * grid.k_squared * dt
    phi1, phi2 = phi_functions(z)
    return np.exp(z), phi1, phi2


def step(u, t, config, dt=None, velocity=None):
    """
    One exponential step of the Duhamel form.

    ETD1: u+ = E u + dt phi1 F(u, t)
    ETDRK2 adds dt phi2 (F(a, t + dt) - F(u, t)) to the ETD1 predictor a.

    Raises:
        NonFiniteStateError: if the state or the result is not finite
    """
    dt = config.dt if dt is None else dt
    decay, phi1, phi2 = etd_multipliers(u.grid, config.nu, dt)
    f0 = forcing(u, t, config, velocity).coeffs
    coeffs = decay * u.coeffs + dt * phi1 * f0
    if config.scheme == "etdrk2":
        predictor = SpectralField(u.grid, coeffs)
        f1 = forcing(predictor, t + dt, config, velocity).coeffs
        coeffs = coeffs + dt * phi2 * (f1 - f0)
    if not np.all(np.isfinite(coeffs)):
        raise NonFiniteStateError(f"non-finite coefficients after step at t={t:.6g}")
    result = SpectralField(u.grid, coeffs, is_mean_zero=u.is_mean_zero)
    if config.enforce_mean_zero:
        result = project_mean_zero(result)
    return result


def _steady_velocity(config):
    if isinstance(config.flow, Zero) or is_time_dependent(config.flow):
        return None
    return evaluate_flow(config.flow, config.grid, 0.0)


def integrate(u0, config, sample_every=1, checkpoint_every=0, checkpoint_callback=None,
              t0=0.0, keep_snapshots=False):
    """
    Step from t0 to config.t_end, sampling diagnostics every `sample_every` steps.

    A step whose result is non-finite or grows by more than `growth_guard`
    is retried with half the time step (kept for the rest of the run), at
    most `max_halvings` times. Exhausting the halvings ends the run with
    BlowUp when the offending norm is past the threshold and StepCollapse
    otherwise.

    Returns:
        tuple: (TrajectoryRecord, EvolutionStatus); the record carries the
        last accepted state in `final_state`.
    """
    if u0.grid != config.grid:
        raise ValueError(f"initial data grid {u0.grid} does not match solver grid {config.grid}")
    if sample_every < 1:
        raise ValueError(f"sample_every must be >= 1, got {sample_every}")

    u = project_mean_zero(u0) if config.enforce_mean_zero else u0.copy()
    velocity = _steady_velocity(config)
    threshold = config.blowup_threshold * (1.0 + l2_norm(u0))
    weight = config.nonlinear_weight

    norm0_sq = l2_norm(u) ** 2
    rate = diagnostics.energy_rate(u, config.p, config.nu, weight)
    rate_integral = 0.0

    def residual(v):
        return l2_norm(v) ** 2 - norm0_sq + 2.0 * rate_integral

    rows = [diagnostics.sample_row(u, t0, config.p, residual(u))]
    snapshots = [(t0, u)] if keep_snapshots else []

    t = t0
    dt = config.dt
    steps = 0
    status = None
    logger.info(
        f"integrate: N={config.grid.dim} M={config.grid.points_per_axis} p={config.p} nu={config.nu} "
        f"dt={dt:g} t_end={config.t_end:g} scheme={config.scheme} flow={type(config.flow).__name__}"
    )

    while status is None:
        remaining = config.t_end - t
        if remaining <= 1e-9 * dt:
            status = Completed(t)
            break
        h = min(dt, remaining)
        norm = l2_norm(u)
        halvings = 0
        while True:
            try:
                candidate = step(u, t, config, h, velocity)
                new_norm = l2_norm(candidate)
                accepted = new_norm <= config.growth_guard * norm or new_norm == 0.0
            except NonFiniteStateError:
                candidate, new_norm, accepted = None, math.inf, False
            if accepted:
                break
            halvings += 1
            if halvings > config.max_halvings:
                if new_norm >= threshold:
                    status = BlowUp(t, new_norm)
                else:
                    status = StepCollapse(t)
                logger.warning(f"dt collapsed below {h:.3e} at t={t:.6g}; status {status_name(status)}")
                break
            h /= 2.0
            dt = h
            logger.warning(f"step rejected at t={t:.6g} (norm {norm:.3e} -> {new_norm:.3e}); dt halved to {h:.3e}")
        if status is not None:
            break

        new_rate = diagnostics.energy_rate(candidate, config.p, config.nu, weight)
        rate_integral += 0.5 * h * (rate + new_rate)
        rate = new_rate
        u = candidate
        t += h
        steps += 1

        if new_norm >= threshold:
            status = BlowUp(t, new_norm)
        if steps % sample_every == 0 or status is not None or config.t_end - t <= 1e-9 * dt:
            rows.append(diagnostics.sample_row(u, t, config.p, residual(u)))
            if keep_snapshots:
                snapshots.append((t, u))
        if checkpoint_every and checkpoint_callback is not None and steps % checkpoint_every == 0:
            checkpoint_callback(u, t, steps)

    record = diagnostics.TrajectoryRecord.from_rows(rows, snapshots=snapshots, final_state=u)
    logger.info(f"integrate finished after {steps} steps at t={t:.6g}: {status}")
    return record, status


# --- X_T norm and Picard iteration ---

def xt_norm(times, fields):
    """max(sup ||u(t)||, sup_{t>0} t^(1/2) ||grad u(t)||) over the sampled times."""
    if len(fields) == 0:
        raise ValueError("X_T norm of an empty trajectory")
    sup_l2 = 0.0
    sup_grad = 0.0
    for t, u in zip(times, fields):
        sup_l2 = max(sup_l2, l2_norm(u))
        if t > 0:
            grad_sq = sum(l2_norm(g) ** 2 for g in gradient(u))
            sup_grad = max(sup_grad, math.sqrt(t) * math.sqrt(grad_sq))
    return max(sup_l2, sup_grad)


def _duhamel_map(u0, path, times, config):
    """N(path) at the grid times, trapezoid rule in time."""
    grid = u0.grid
    out = []
    integral = np.zeros(grid.shape, dtype=np.complex128)
    f_prev = None
    for n, t in enumerate(times):
        f_now = forcing(path[n], t, config).coeffs
        if n > 0:
            h = times[n] - times[n - 1]
            decay, _, _ = etd_multipliers(grid, config.nu, h)
            integral = decay * (integral + 0.5 * h * f_prev) + 0.5 * h * f_now
        f_prev = f_now
        free = heat_semigroup(u0, t, config.nu)
        field_n = SpectralField(grid, free.coeffs + integral)
        if config.enforce_mean_zero:
            field_n = project_mean_zero(field_n)
        out.append(field_n)
    return out


def _picard_times(T, dt):
    n = max(1, int(math.ceil(T / dt - 1e-12)))
    return np.linspace(0.0, T, n + 1)


def _free_path(u0, times, nu):
    return [heat_semigroup(u0, t, nu) for t in times]


def _xt_difference(times, a, b):
    return xt_norm(times, [x - y for x, y in zip(a, b)])


def picard_exponents(p, dim):
    """Time exponents of the nonlinear and advective Duhamel bounds."""
    spread = dim * (p - 1.0)
    return 1.0 - spread / 4.0, (2.0 - spread) / 4.0


def picard_flow_norm(config):
    """sup_t ||v||_{L^(2/(p-1))} (L^inf when p = 1), sampled at t = 0 for steady flows."""
    q = np.inf if config.p == 1.0 else 2.0 / (config.p - 1.0)
    if isinstance(config.flow, Zero):
        return 0.0
    times = [0.0]
    if is_time_dependent(config.flow):
        times = list(np.linspace(0.0, max(config.t_end, config.dt), 9))
    return max(flow_lebesgue_norm(config.flow, config.grid, q, t) for t in times)


def fit_picard_constant(u0, config, T=None, n_samples=6, seed=0):
    """
    Smallest constant c making the two local-existence bounds hold on sampled data:

        ||N(u)||_XT <= c (||u0|| + T^a ||u||^p + T^b ||v|| ||u||)
        ||N(u1) - N(u2)||_XT <= c (T^a (||u1||^(p-1) + ||u2||^(p-1)) + T^b ||v||) ||u1 - u2||

    with a = 1 - N(p-1)/4, b = (2 - N(p-1))/4 and all norms in X_T.
    Sample paths are scaled free heat evolutions of u0 and of seeded random
    perturbations of it.
    """
    T = min(1.0, config.t_end) if T is None else T
    times = _picard_times(T, max(config.dt, T / 32))
    a, b = picard_exponents(config.p, config.grid.dim)
    v_norm = picard_flow_norm(config)
    u0_norm = l2_norm(u0)
    rng = np.random.Generator(np.random.Philox(key=seed))

    scale = max(u0_norm, 1e-3)
    paths = []
    for k in range(n_samples):
        noise = rng.standard_normal(config.grid.shape)
        noise *= scale / max(np.sqrt(np.mean(noise ** 2)), 1e-300)
        start = u0 + dealias(forward_transform(noise, config.grid), config.dealias_fraction) * (0.1 * (k + 1))
        if config.enforce_mean_zero:
            start = project_mean_zero(start)
        paths.append(_free_path(start, times, config.nu))

    ratios = []
    for path in paths:
        image = _duhamel_map(u0, path, times, config)
        norm_u = xt_norm(times, path)
        bound = u0_norm + T ** a * norm_u ** config.p + T ** b * v_norm * norm_u
        if bound > 0:
            ratios.append(xt_norm(times, image) / bound)
    for first, second in zip(paths, paths[1:]):
        diff = _xt_difference(times, first, second)
        if diff == 0:
            continue
        n1 = xt_norm(times, first)
        n2 = xt_norm(times, second)
        lipschitz = (T ** a * (n1 ** (config.p - 1) + n2 ** (config.p - 1)) + T ** b * v_norm) * diff
        if lipschitz > 0:
            images = _duhamel_map(u0, first, times, config), _duhamel_map(u0, second, times, config)
            ratios.append(_xt_difference(times, *images) / lipschitz)

    constant = max(ratios) if ratios else 1.0
    logger.debug(f"fitted Picard constant {constant:.4g} from {len(ratios)} samples on T={T:g}")
    return constant


def picard_horizon(constant, u0_norm, v_norm, p, dim):
    """min{1, 1/((10 c M^(p-1))^(4/(4-N(p-1))) + (10 c ||v||)^(4/(2-N(p-1))))}, M = 10 c ||u0||."""
    validate_exponent(p, dim)
    radius = 10.0 * constant * u0_norm
    spread = dim * (p - 1.0)
    nonlinear = (10.0 * constant * radius ** (p - 1.0)) ** (4.0 / (4.0 - spread))
    advective = (10.0 * constant * v_norm) ** (4.0 / (2.0 - spread))
    total = nonlinear + advective
    return 1.0 if total <= 1.0 else 1.0 / total


def continuation_horizon(constant, bound, v_norm, p, dim):
    """Restart horizon for data bounded by `bound` in L^2 (uniform in the restart time)."""
    validate_exponent(p, dim)
    spread = dim * (p - 1.0)
    nonlinear = (5.0 * 2.0 ** p * constant * bound ** (p - 1.0)) ** (4.0 / (4.0 - spread))
    advective = (10.0 * constant * v_norm) ** (4.0 / (2.0 - spread))
    total = nonlinear + advective
    return 1.0 if total <= 1.0 else 1.0 / total


def picard_iterate(u0, config, T=None, n_iter=10):
    """
    Picard iteration u_(j+1) = N(u_j) on [0, T] starting from the free heat evolution.

    When T is omitted the contraction constant is fitted and the horizon
    formula picks T. Iteration stops at a numerical fixed point, after
    n_iter iterations, or when the X_T norm passes 1e6 (reported unconverged).
    """
    fitted = None
    if T is None:
        fitted = fit_picard_constant(u0, config)
        T = picard_horizon(fitted, l2_norm(u0), picard_flow_norm(config), config.p, config.grid.dim)
        logger.info(f"Picard horizon T={T:.4e} from fitted constant {fitted:.4g}")
    if not 0 < T <= 1:
        raise ValueError(f"Picard horizon must be in (0, 1], got {T}")

    if config.enforce_mean_zero:
        u0 = project_mean_zero(u0)
    times = _picard_times(T, config.dt)
    current = _free_path(u0, times, config.nu)
    norms = [xt_norm(times, current)]
    ratios = []
    previous_diff = None
    fixed_point = False
    diverged = False

    for j in range(n_iter):
        image = _duhamel_map(u0, current, times, config)
        diff = _xt_difference(times, image, current)
        norms.append(xt_norm(times, image))
        if previous_diff is not None and previous_diff > 0:
            ratios.append(diff / previous_diff)
        current = image
        previous_diff = diff
        logger.debug(f"Picard iteration {j + 1}: X_T norm {norms[-1]:.6e}, difference {diff:.3e}")
        if norms[-1] > PICARD_DIVERGENCE_NORM or not math.isfinite(norms[-1]):
            diverged = True
            break
        if diff <= PICARD_FIXED_POINT_TOL * max(norms[-1], 1e-300):
            fixed_point = True
            break

    window = ratios[-PICARD_CONVERGED_WINDOW:]
    if diverged:
        converged = False
    elif fixed_point:
        converged = all(r < 1 for r in ratios)
    else:
        converged = len(window) == PICARD_CONVERGED_WINDOW and all(r < 1 for r in window)
    logger.info(f"Picard on T={T:.4e}: {len(norms) - 1} iterations, converged={converged}")
    return PicardReport(T=T, iterate_norms=norms, contraction_ratios=ratios, converged=converged,
                        fitted_constant=fitted, times=times, limit=current[-1], fixed_point=fixed_point)
