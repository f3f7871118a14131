"""
Scenario orchestration: runs one configured experiment, writes its artifacts,
resumes from checkpoints and fans parameter sweeps out over processes.

Artifacts of a run (all under config.output_dir):
    trajectory.csv   diagnostics time series (simulate, blowup-scan, shear-suppression)
    summary.json     sorted key-value report, no timestamps
    decay.svg        log-linear plot of the scenario's decaying quantity
    trajectory.html  interactive plot of the trajectory
    report.pdf       tables of the summary
    checkpoints/     binary states every checkpoint_every steps
    *.csv            scenario tables (norm_curve, scan, rates, mixing, candidates)
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger

import pdf_gen
import plot_gen
from checkpoint_io import CheckpointError, CheckpointMeta, load_checkpoint, save_checkpoint
from diagnostics import (
    FitError,
    averaged_mode_bound,
    blowup_energy,
    blowup_threshold_amplitude,
    bootstrap_monitor,
    decay_fit,
    fit_gagliardo_nirenberg_constant,
    smallness_threshold,
)
from dissipation_time import (
    DissipationTimeError,
    dissipation_time,
    enhanced_dissipation_fit,
    enhanced_dissipation_rate,
    mixing_rate_fit,
    pure_transport_mixing,
)
from evolution import BlowUp, Completed, NonFiniteStateError, StepCollapse, integrate, status_name
from flow_library import Cellular, Shear
from initial_data import build_initial_data, sheared_pair, single_mode
from run_config import THREADS, describe_flow
from spectral_core import LAMBDA_1

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

DECAY_WINDOW = 0.5
MIXING_TIMES = np.geomspace(1.0, 50.0, 16)
SWEEP_COLUMNS = ["row", "scenario", "config_hash", "nu", "p", "status", "exit_code",
                 "rate", "r_squared", "tau_star", "exponent", "output_dir", "error"]


class RunError(RuntimeError):
    """An artifact could not be written; `manifest` lists what made it to disk."""

    def __init__(self, message, manifest):
        super().__init__(message)
        self.manifest = manifest


@dataclass
class ScenarioResult:
    status: str
    summary: dict
    record: object = None
    tables: dict = field(default_factory=dict)
    plot: Optional[tuple] = None
    exit_code: int = EXIT_OK


@dataclass
class RunOutcome:
    exit_code: int
    status: str
    summary: dict
    artifacts: list
    output_dir: Optional[Path] = None


# --- Helpers ---

def _plain(value):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Path):
        return str(value)
    return value


def _base_summary(config):
    grid = config.solver.grid
    return {
        "scenario": config.scenario,
        "config_hash": config.config_hash,
        "seed": config.seed,
        "nu": config.solver.nu,
        "p": config.solver.p,
        "grid": {"dim": grid.dim, "points": grid.points_per_axis},
        "flow": describe_flow(config.flow),
        "rate": None,
        "r_squared": None,
    }


def _initial_seed(config):
    # the top-level seed only overrides a preset seed when it was set explicitly
    return config.seed if "seed" in config.document else None


def _trajectory_decay(record, window=DECAY_WINDOW):
    """Exponential fit of ||u|| over the last `window` fraction of the run, or None."""
    times = record.times
    if times.size == 0:
        return None
    start = times[0] + (1.0 - window) * (times[-1] - times[0])
    keep = times >= start
    try:
        return decay_fit(times[keep], record.column("l2_norm")[keep])
    except FitError as e:
        logger.debug(f"no decay fit: {e}")
        return None


def _checkpoint_writer(out, solver, written, prefix="checkpoint"):
    directory = out / "checkpoints"

    def write(u, t, steps):
        directory.mkdir(exist_ok=True)
        path = directory / f"{prefix}_{steps:06d}.nlsp"
        save_checkpoint(u, CheckpointMeta(nu=solver.nu, p=solver.p, t=t), path)
        written.append(str(path.relative_to(out)))

    return write


# --- Scenarios ---

def _simulate(config, out, written, initial_state=None):
    solver = config.solver
    if initial_state is None:
        u0, t0, prefix = build_initial_data(config.initial_data, solver.grid, _initial_seed(config)), 0.0, "checkpoint"
    else:
        (u0, t0), prefix = initial_state, "resumed"

    record, status = integrate(
        u0, solver,
        sample_every=config.sample_every,
        checkpoint_every=config.checkpoint_every,
        checkpoint_callback=_checkpoint_writer(out, solver, written, prefix),
        t0=t0,
    )
    record.config_hash = config.config_hash

    summary = _base_summary(config)
    summary.update({
        "status": status_name(status),
        "t_start": t0,
        "t_final": float(record.times[-1]),
        "samples": len(record),
        "initial_l2_norm": float(record.column("l2_norm")[0]),
        "final_l2_norm": float(record.column("l2_norm")[-1]),
        "max_energy_residual": float(np.max(np.abs(record.column("energy_residual")))),
        "initial_blowup_energy": float(record.column("blowup_energy")[0]),
    })
    if isinstance(status, BlowUp):
        summary["t_detect"] = status.t_detect
        summary["blowup_norm"] = status.norm

    fit = _trajectory_decay(record) if isinstance(status, Completed) else None
    if fit is not None:
        summary.update({"rate": fit.rate, "r_squared": fit.r_squared, "decay_prefactor": fit.prefactor})

    return ScenarioResult(
        status=status_name(status),
        summary=summary,
        record=record,
        plot=(record.times, record.column("l2_norm"), "L2 norm", "||u||_L2"),
        exit_code=EXIT_NUMERICAL if isinstance(status, StepCollapse) else EXIT_OK,
    )


def _dissipation_time(config, out, written):
    settings = config.dissipation
    nu = config.solver.nu
    result = dissipation_time(
        config.flow, nu, K=settings.K, tol=settings.tol, dim=config.solver.grid.dim,
        start_times=settings.start_times, substeps=settings.substeps, seed=config.seed,
        check_truncation=settings.check_truncation,
    )
    summary = _base_summary(config)
    summary.update({
        "status": "Completed",
        "tau_star": result.tau_star,
        "heat_tau_star": math.log(2.0) / (nu * LAMBDA_1),
        "K": result.K,
        "bisection_tol": result.bisection_tol,
        "norm_evaluations": len(result.norm_curve),
        "truncation_converged": result.truncation_converged,
        "tau_star_refined": result.tau_star_refined,
    })
    if isinstance(config.flow, Shear):
        try:
            rate = enhanced_dissipation_rate(config.flow, nu, settings.K, seed=config.seed)
            summary.update({"rate": rate.rate, "r_squared": rate.r_squared})
        except FitError as e:
            logger.warning(f"no enhanced dissipation rate for nu={nu}: {e}")

    curve = pd.DataFrame(result.norm_curve, columns=["t", "operator_norm"])
    return ScenarioResult(
        status="Completed",
        summary=summary,
        tables={"norm_curve": curve},
        plot=(curve["t"], curve["operator_norm"], "Solution operator norm", "||S(0,t)||"),
    )


def _blowup_scan(config, out, written):
    solver = config.solver
    scan = config.scan
    shape = build_initial_data(config.initial_data, solver.grid, _initial_seed(config))
    a_star = blowup_threshold_amplitude(shape, solver.p)
    logger.info(f"blow-up scan: A* = {a_star:.6g} for p={solver.p}")

    rows = []
    shown = None
    collapsed = False
    for multiple in scan.amplitude_multiples:
        u0 = shape * (multiple * a_star)
        record, status = integrate(u0, solver, sample_every=config.sample_every)
        collapsed = collapsed or isinstance(status, StepCollapse)
        rows.append({
            "multiple": multiple,
            "scale": multiple * a_star,
            "initial_energy": blowup_energy(u0, solver.p),
            "status": status_name(status),
            "t_detect": status.t_detect if isinstance(status, BlowUp) else None,
            "final_l2_norm": float(record.column("l2_norm")[-1]),
        })
        shown = (record, status)

    summary = _base_summary(config)
    summary.update({
        "a_star": a_star,
        "rows": rows,
        "blowups": sum(row["status"] == "BlowUp" for row in rows),
        "suppression_amplitude": None,
    })
    tables = {"scan": pd.DataFrame(rows)}

    if scan.flow_amplitudes:
        top = max(scan.amplitude_multiples) * a_star
        u0 = shape * top
        attempts = []
        for amplitude in sorted(scan.flow_amplitudes):
            flow = Cellular(amplitude=amplitude, cell_scale=scan.cell_scale)
            record, status = integrate(u0, replace(solver, flow=flow), sample_every=config.sample_every)
            fit = _trajectory_decay(record) if isinstance(status, Completed) else None
            suppressed = fit is not None and fit.r_squared > scan.fit_r2
            attempts.append({
                "flow_amplitude": amplitude,
                "status": status_name(status),
                "rate": fit.rate if fit else None,
                "r_squared": fit.r_squared if fit else None,
                "suppressed": suppressed,
            })
            if suppressed:
                summary.update({"suppression_amplitude": amplitude, "rate": fit.rate, "r_squared": fit.r_squared})
                shown = (record, status)
                logger.info(f"blow-up suppressed by cellular flow of amplitude {amplitude:g} (rate {fit.rate:.4g})")
                break
        summary["suppression_attempts"] = attempts
        tables["suppression"] = pd.DataFrame(attempts)
        if summary["suppression_amplitude"] is None:
            logger.warning(f"no amplitude in {sorted(scan.flow_amplitudes)} suppressed blow-up")

    record, status = shown
    record.config_hash = config.config_hash
    summary["status"] = status_name(status)
    return ScenarioResult(
        status=status_name(status),
        summary=summary,
        record=record,
        tables=tables,
        plot=(record.times, record.column("l2_norm"), "L2 norm", "||u||_L2"),
        exit_code=EXIT_NUMERICAL if collapsed else EXIT_OK,
    )


def _enhanced_dissipation_sweep(config, out, written):
    settings = config.dissipation
    flow = config.flow
    fit = enhanced_dissipation_fit(flow, settings.nu_list, K=settings.K, seed=config.seed)
    m = flow.critical_order
    predicted = 2.0 / (m + 2.0)

    field2d = single_mode(config.solver.grid, k=1, amplitude=1.0, axis=0)
    norms = pure_transport_mixing(field2d, flow, MIXING_TIMES)
    mixing = mixing_rate_fit(MIXING_TIMES, norms, m)

    summary = _base_summary(config)
    summary.update({
        "status": "Completed",
        "exponent": fit.exponent,
        "predicted_exponent": predicted,
        "exponent_gap": abs(fit.exponent - predicted),
        "prefactor": fit.prefactor,
        "r_squared": fit.r_squared,
        "fit_residual": fit.residual,
        "critical_order": m,
        "mixing_slope": mixing.slope,
        "mixing_r_squared": mixing.r_squared,
        "mixing_gap_power_m": mixing.gap_power_m,
        "mixing_gap_inverse_m": mixing.gap_inverse_m,
    })
    rates = pd.DataFrame(fit.rates, columns=["nu", "lambda_nu"])
    transport = pd.DataFrame({"t": MIXING_TIMES, "h_minus_1_norm": norms})
    return ScenarioResult(
        status="Completed",
        summary=summary,
        tables={"rates": rates, "mixing": transport},
        plot=(transport["t"], transport["h_minus_1_norm"], "Pure transport mixing", "||u||_H-1"),
    )


def _shear_suppression(config, out, written):
    """
    Descending sweep over nu candidates; the first nu whose rescaled run
    completes inside the bootstrap constants and under the averaged-mode
    bound is reported as admissible.
    """
    solver = config.solver
    shear = config.shear
    p = solver.p
    C_p = shear.C_p if shear.C_p is not None else fit_gagliardo_nirenberg_constant(p, seed=config.seed)
    threshold = smallness_threshold(p, C_p)
    mean_norm = shear.mean_fraction * threshold
    u0 = sheared_pair(solver.grid, mean_norm, shear.perp_norm)
    logger.info(f"shear suppression: C_p={C_p:.4g}, threshold {threshold:.4g}, <u0> norm {mean_norm:.4g}")

    candidates = []
    admissible = None
    shown = None
    for nu in sorted(shear.nu_candidates, reverse=True):
        rate = enhanced_dissipation_rate(config.flow, nu, shear.K, seed=config.seed)
        run_solver = replace(solver, nu=nu, form="rescaled", t_end=shear.horizon_factor / rate.rate)
        record, status = integrate(u0, run_solver, sample_every=config.sample_every)
        report = bootstrap_monitor(record, rate.rate, nu)
        bound = averaged_mode_bound(mean_norm, shear.perp_norm, p, nu, rate.rate, C_p)
        ratio = float(np.max(record.column("l2_mean_x1"))) / bound
        ok = isinstance(status, Completed) and report.within_assumed and ratio <= shear.bound_factor
        candidates.append({
            "nu": nu,
            "lambda_nu": rate.rate,
            "t_end": run_solver.t_end,
            "status": status_name(status),
            "coeff_decay": report.coeff_decay,
            "coeff_gradient": report.coeff_gradient,
            "within_assumed": report.within_assumed,
            "within_improved": report.within_improved,
            "mean_bound": bound,
            "mean_bound_ratio": ratio,
            "admissible": ok,
        })
        shown = (record, status, rate)
        if ok:
            admissible = nu
            break

    record, status, rate = shown
    record.config_hash = config.config_hash
    summary = _base_summary(config)
    last = candidates[-1]
    summary.update({
        "status": status_name(status),
        "C_p": C_p,
        "C_p_fitted": shear.C_p is None,
        "smallness_threshold": threshold,
        "mean_norm": mean_norm,
        "perp_norm": shear.perp_norm,
        "admissible_nu": admissible,
        "rate": rate.rate,
        "r_squared": rate.r_squared,
        "coeff_decay": last["coeff_decay"],
        "coeff_gradient": last["coeff_gradient"],
        "mean_bound_ratio": last["mean_bound_ratio"],
        "bound_factor": shear.bound_factor,
        "candidates": candidates,
    })
    if admissible is None:
        logger.warning(f"no admissible nu among {sorted(shear.nu_candidates, reverse=True)}")
    return ScenarioResult(
        status=status_name(status),
        summary=summary,
        record=record,
        tables={"candidates": pd.DataFrame(candidates)},
        plot=(record.times, record.column("l2_perp"), "Perpendicular part", "||u_perp||_L2"),
        exit_code=EXIT_NUMERICAL if isinstance(status, StepCollapse) else EXIT_OK,
    )


SCENARIO_HANDLERS = {
    "simulate": _simulate,
    "dissipation-time": _dissipation_time,
    "blowup-scan": _blowup_scan,
    "enhanced-dissipation-sweep": _enhanced_dissipation_sweep,
    "shear-suppression": _shear_suppression,
}


# --- Artifacts ---

def _write_manifest(out, written, failed, error):
    manifest = {"written": list(written), "failed": failed, "error": str(error)}
    try:
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    except OSError as e:
        logger.error(f"could not write manifest either: {e}")
    return manifest


def _emit(result, out, written):
    """Write the run's artifacts; raises RunError with the manifest on the first failure."""
    pending = []
    if result.record is not None:
        pending.append(("trajectory.csv", lambda path: result.record.to_csv(path)))
    for name, table in sorted(result.tables.items()):
        pending.append((f"{name}.csv",
                        lambda path, table=table: table.to_csv(path, index=False, float_format="%.17g")))
    summary_text = json.dumps(_plain(result.summary), indent=2, sort_keys=True) + "\n"
    pending.append(("summary.json", lambda path: path.write_text(summary_text, encoding="utf-8")))
    if result.plot is not None:
        times, values, title, label = result.plot
        svg = plot_gen.generate_decay_svg(times, values, title=title, y_label=label)
        pending.append(("decay.svg", lambda path: path.write_text(svg, encoding="utf-8")))
    if result.record is not None:
        pending.append(("trajectory.html", lambda path: path.write_text(
            plot_gen.generate_trajectory_html(result.record.frame), encoding="utf-8")))
    frame = result.record.frame if result.record is not None else None
    pending.append(("report.pdf", lambda path: path.write_bytes(
        pdf_gen.generate_run_report(_plain(result.summary), frame).getvalue())))

    for name, write in pending:
        try:
            write(out / name)
        except OSError as e:
            manifest = _write_manifest(out, written, name, e)
            raise RunError(f"failed writing {out / name}: {e}", manifest) from e
        written.append(name)


def run(config, initial_state=None):
    """
    Run one scenario and write its artifacts.

    Args:
        config: run_config.RunConfig
        initial_state: (SpectralField, t0) to continue a simulate run from

    Returns:
        RunOutcome: exit code 0 on success (BlowUp included), 1 on I/O
        failure, 2 on rejected input, 3 on numerical failure
    """
    out = Path(config.output_dir)
    written = []
    logger.info(f"run {config.scenario} ({config.config_hash}) -> {out}")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        logger.error(f"cannot create output directory {out}: {e}")
        return RunOutcome(EXIT_IO, "io-error", {"error": str(e)}, [], out)

    handler = SCENARIO_HANDLERS[config.scenario]
    try:
        if config.scenario == "simulate":
            result = handler(config, out, written, initial_state)
        else:
            result = handler(config, out, written)
    except (DissipationTimeError, FitError, NonFiniteStateError) as e:
        logger.error(f"{config.scenario} failed numerically: {e}")
        summary = _base_summary(config)
        summary.update({"status": "numerical-failure", "error": str(e)})
        result = ScenarioResult("numerical-failure", summary, exit_code=EXIT_NUMERICAL)
    except ValueError as e:
        logger.error(f"{config.scenario} rejected its input: {e}")
        return RunOutcome(EXIT_CONFIG, "config-error", {"error": str(e)}, written, out)
    except OSError as e:
        manifest = _write_manifest(out, written, config.scenario, e)
        logger.error(f"I/O failure during {config.scenario}: {e}")
        return RunOutcome(EXIT_IO, "io-error", {"error": str(e), "manifest": manifest}, written, out)

    result.summary["exit_code"] = result.exit_code
    try:
        _emit(result, out, written)
    except RunError as e:
        logger.error(str(e))
        return RunOutcome(EXIT_IO, "io-error", {"error": str(e), "manifest": e.manifest}, written, out)

    logger.info(f"{config.scenario} finished with status {result.status}; wrote {len(written)} artifacts")
    return RunOutcome(result.exit_code, result.status, result.summary, written, out)


def resume(checkpoint_path, config):
    """
    Continue a simulate run from a checkpoint up to config.solver.t_end.

    nu and p are taken from the checkpoint; the grid must match the config.
    """
    try:
        u, meta = load_checkpoint(checkpoint_path)
    except (CheckpointError, OSError) as e:
        logger.error(f"cannot resume: {e}")
        return RunOutcome(EXIT_CONFIG, "config-error", {"error": str(e)}, [], Path(config.output_dir))

    solver = config.solver
    problems = []
    if u.grid != solver.grid:
        problems.append(f"checkpoint grid {u.grid} does not match config grid {solver.grid}")
    if meta.t >= solver.t_end:
        problems.append(f"checkpoint time {meta.t:g} is not before t_end {solver.t_end:g}")
    if problems:
        for problem in problems:
            logger.error(problem)
        return RunOutcome(EXIT_CONFIG, "config-error", {"error": "; ".join(problems)}, [], Path(config.output_dir))
    if (meta.nu, meta.p) != (solver.nu, solver.p):
        logger.warning(f"using nu={meta.nu}, p={meta.p} from the checkpoint over the config values")
        solver = replace(solver, nu=meta.nu, p=meta.p)

    logger.info(f"resuming from {checkpoint_path} at t={meta.t:g}")
    return run(replace(config, scenario="simulate", solver=solver), initial_state=(u, meta.t))


# --- Sweeps ---

def _row(index, config, outcome=None, error=None):
    summary = outcome.summary if outcome is not None else {}
    return {
        "row": index,
        "scenario": config.scenario,
        "config_hash": config.config_hash,
        "nu": config.solver.nu,
        "p": config.solver.p,
        "status": outcome.status if outcome is not None else "error",
        "exit_code": outcome.exit_code if outcome is not None else EXIT_NUMERICAL,
        "rate": summary.get("rate"),
        "r_squared": summary.get("r_squared"),
        "tau_star": summary.get("tau_star"),
        "exponent": summary.get("exponent"),
        "output_dir": str(config.output_dir),
        "error": error if error is not None else summary.get("error"),
    }


def _run_row(index, config):
    try:
        return _row(index, config, run(config))
    except Exception as e:
        logger.exception(f"sweep row {index} failed")
        return _row(index, config, error=f"{type(e).__name__}: {e}")


def sweep(configs, parallelism=THREADS, output_dir=None):
    """
    Run independent configs, each into its own row_NNNN directory.

    Rows come back in input order whatever the completion order; a failing
    row is recorded and the sweep carries on. Writes sweep.csv and a PDF
    table next to the row directories.

    Returns:
        pd.DataFrame: one row per config, columns SWEEP_COLUMNS
    """
    configs = list(configs)
    if not configs:
        return pd.DataFrame(columns=SWEEP_COLUMNS)

    base = Path(output_dir) if output_dir is not None else Path(configs[0].output_dir)
    jobs = [replace(c, output_dir=base / f"row_{i:04d}") for i, c in enumerate(configs)]
    results = [None] * len(jobs)
    logger.info(f"sweep of {len(jobs)} rows with parallelism {parallelism} -> {base}")

    if parallelism <= 1 or len(jobs) == 1:
        for i, job in enumerate(jobs):
            results[i] = _run_row(i, job)
    else:
        with ProcessPoolExecutor(max_workers=min(parallelism, len(jobs))) as pool:
            futures = {pool.submit(_run_row, i, job): i for i, job in enumerate(jobs)}
            for future in as_completed(futures):
                i = futures[future]
                try:
                    results[i] = future.result()
                except Exception as e:
                    logger.error(f"sweep row {i} crashed its worker: {e}")
                    results[i] = _row(i, jobs[i], error=f"{type(e).__name__}: {e}")

    table = pd.DataFrame(results, columns=SWEEP_COLUMNS)
    base.mkdir(parents=True, exist_ok=True)
    table.to_csv(base / "sweep.csv", index=False, float_format="%.17g")
    (base / "report.pdf").write_bytes(pdf_gen.generate_sweep_report(table).getvalue())
    failed = int((table["exit_code"] != EXIT_OK).sum())
    logger.info(f"sweep finished: {len(table) - failed} ok, {failed} failed")
    return table
