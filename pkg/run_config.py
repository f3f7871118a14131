"""
Run configuration: a YAML document parsed into validated dataclasses.
Every violation in a document is collected and reported together.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from loguru import logger

from evolution import SolverConfig, validate_exponent
from flow_library import Cellular, Custom, FlowError, RescaledMixing, Shear, Zero, shear_critical_order, sine_shear
from initial_data import PRESETS, InitialDataSpec
from spectral_core import Grid

# --- Configuration ---
# Deployment defaults come from the environment
OUTPUT_DIR = os.getenv("NLSP_OUTPUT_DIR", "runs")
THREADS = int(os.getenv("NLSP_THREADS", "0") or 0) or (os.cpu_count() or 1)
LOG_LEVEL = os.getenv("NLSP_LOG_LEVEL", "INFO")

SCENARIOS = ("simulate", "dissipation-time", "blowup-scan", "enhanced-dissipation-sweep", "shear-suppression")
SHEAR_SCENARIOS = ("enhanced-dissipation-sweep", "shear-suppression")

TOP_KEYS = {"scenario", "output_dir", "seed", "sample_every", "checkpoint_every",
            "grid", "solver", "flow", "initial_data", "dissipation", "scan", "shear"}
GRID_KEYS = {"dim", "points"}
SOLVER_KEYS = {"nu", "p", "dt", "t_end", "dealias_fraction", "blowup_threshold", "enforce_mean_zero",
               "scheme", "form", "max_halvings", "growth_guard"}
FLOW_KEYS = {
    "zero": {"type"},
    "shear": {"type", "profile", "critical_order"},
    "cellular": {"type", "amplitude", "cell_scale"},
    "rescaled_mixing": {"type", "amplitude", "base"},
    "custom": {"type", "path"},
}
PROFILE_KEYS = {"kind", "amplitude", "power", "points"}
DISSIPATION_KEYS = {"K", "tol", "nu_list", "start_times", "substeps", "check_truncation"}
SCAN_KEYS = {"amplitude_multiples", "flow_amplitudes", "cell_scale", "fit_r2"}
SHEAR_KEYS = {"C_p", "nu_candidates", "mean_fraction", "perp_norm", "horizon_factor", "bound_factor", "K"}


class ConfigError(ValueError):
    """Carries every violation found in a run configuration."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid run configuration:\n  - " + "\n  - ".join(self.errors))


@dataclass
class DissipationSettings:
    K: int = 16
    tol: float = 1e-6
    nu_list: list = field(default_factory=list)
    start_times: Optional[list] = None
    substeps: int = 32
    check_truncation: bool = False


@dataclass
class ScanSettings:
    amplitude_multiples: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    flow_amplitudes: list = field(default_factory=list)
    cell_scale: float = 1.0
    fit_r2: float = 0.95


@dataclass
class ShearSettings:
    C_p: Optional[float] = None
    nu_candidates: list = field(default_factory=lambda: [0.05, 0.02, 0.01])
    mean_fraction: float = 0.1
    perp_norm: float = 0.1
    horizon_factor: float = 50.0
    # slack on the averaged-mode bound before a nu is rejected
    bound_factor: float = 2.0
    K: int = 12


@dataclass
class RunConfig:
    scenario: str
    solver: SolverConfig
    flow: object
    initial_data: InitialDataSpec
    output_dir: Path
    sample_every: int = 10
    checkpoint_every: int = 0
    seed: int = 0
    dissipation: DissipationSettings = field(default_factory=DissipationSettings)
    scan: ScanSettings = field(default_factory=ScanSettings)
    shear: ShearSettings = field(default_factory=ShearSettings)
    document: dict = field(default_factory=dict)

    @property
    def config_hash(self):
        canonical = json.dumps(self.document, sort_keys=True, default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class _Reader:
    """Typed access to one mapping, recording violations instead of raising."""

    def __init__(self, errors, data, path):
        self.errors = errors
        self.path = path
        if data is None:
            data = {}
        if not isinstance(data, dict):
            errors.append(f"{path or 'document'}: expected a mapping, got {type(data).__name__}")
            data = {}
        self.data = data

    def check_keys(self, allowed):
        for key in sorted(set(self.data) - set(allowed), key=str):
            self.errors.append(f"unknown key '{self._name(key)}'")

    def _name(self, key):
        return f"{self.path}.{key}" if self.path else str(key)

    def has(self, key):
        return key in self.data

    def number(self, key, default, kind=float, minimum=None, exclusive=False):
        value = self.data.get(key, default)
        if value is None:
            return None
        try:
            if isinstance(value, bool):
                raise ValueError
            value = kind(float(value)) if kind is int else kind(value)
        except (TypeError, ValueError):
            self.errors.append(f"{self._name(key)}: expected a number, got {value!r}")
            return default
        if minimum is not None and (value <= minimum if exclusive else value < minimum):
            bound = ">" if exclusive else ">="
            self.errors.append(f"{self._name(key)}: must be {bound} {minimum}, got {value}")
            return default
        return value

    def flag(self, key, default):
        value = self.data.get(key, default)
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        self.errors.append(f"{self._name(key)}: expected true/false, got {value!r}")
        return default

    def text(self, key, default, choices=None):
        value = self.data.get(key, default)
        if choices is not None and value not in choices:
            self.errors.append(f"{self._name(key)}: must be one of {list(choices)}, got {value!r}")
            return default
        return value

    def numbers(self, key, default):
        value = self.data.get(key, default)
        if value is None:
            return None
        if not isinstance(value, (list, tuple)):
            self.errors.append(f"{self._name(key)}: expected a list of numbers")
            return list(default or [])
        out = []
        for item in value:
            try:
                out.append(float(item))
            except (TypeError, ValueError):
                self.errors.append(f"{self._name(key)}: {item!r} is not a number")
        return out

    def section(self, key):
        return _Reader(self.errors, self.data.get(key), self._name(key))


def _parse_profile(reader):
    value = reader.data.get("profile")
    if isinstance(value, (list, tuple)):
        try:
            return np.asarray([float(x) for x in value]), None
        except (TypeError, ValueError):
            reader.errors.append(f"{reader._name('profile')}: samples must be numbers")
            return None, None
    spec = reader.section("profile")
    spec.check_keys(PROFILE_KEYS)
    spec.text("kind", "sine", choices=("sine",))
    power = spec.number("power", 1, kind=int, minimum=1)
    points = spec.number("points", 64, kind=int, minimum=8)
    amplitude = spec.number("amplitude", 1.0)
    shear = sine_shear(amplitude, power, points)
    return shear.profile, shear.critical_order


def parse_flow(reader):
    kind = reader.text("type", "zero", choices=tuple(FLOW_KEYS))
    reader.check_keys(FLOW_KEYS.get(kind, {"type"}))
    try:
        if kind == "zero":
            return Zero()
        if kind == "cellular":
            return Cellular(reader.number("amplitude", 1.0, minimum=0.0), reader.number("cell_scale", 1.0))
        if kind == "rescaled_mixing":
            base = parse_flow(reader.section("base"))
            return RescaledMixing(base, reader.number("amplitude", 1.0, minimum=0.0, exclusive=True))
        if kind == "custom":
            path = reader.text("path", None)
            if path is None:
                reader.errors.append(f"{reader._name('path')}: custom flows need a .npy path")
                return Zero()
            return Custom(tuple(np.load(path)))
        profile, declared = _parse_profile(reader)
        if profile is None:
            return Zero()
        order = reader.number("critical_order", declared or 2, kind=int, minimum=2)
        try:
            measured = shear_critical_order(profile)
            if measured != order:
                logger.warning(f"declared critical order {order} differs from measured {measured}")
        except FlowError as e:
            reader.errors.append(f"{reader.path}: {e}")
        return Shear(profile, order)
    except (FlowError, OSError) as e:
        reader.errors.append(f"{reader.path}: {e}")
        return Zero()


def _parse_initial_data(reader):
    preset = reader.text("preset", "single_mode", choices=tuple(PRESETS))
    params = {k: v for k, v in reader.data.items() if k != "preset"}
    try:
        return InitialDataSpec(preset, params)
    except ValueError as e:
        reader.errors.append(f"{reader.path}: {e}")
        return InitialDataSpec("single_mode")


def parse_config(text):
    """
    Parse and validate a YAML run configuration.

    Args:
        text: YAML document (str or bytes)

    Returns:
        RunConfig

    Raises:
        ConfigError: listing every violation found
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        document = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError([f"not valid YAML: {e}"]) from e

    errors = []
    top = _Reader(errors, document, "")
    top.check_keys(TOP_KEYS)
    scenario = top.text("scenario", None, choices=SCENARIOS)

    grid_reader = top.section("grid")
    grid_reader.check_keys(GRID_KEYS)
    dim = grid_reader.number("dim", 2, kind=int)
    points = grid_reader.number("points", 64, kind=int)
    grid = None
    try:
        grid = Grid(dim, points)
    except ValueError as e:
        errors.append(f"grid: {e}")

    if scenario in SHEAR_SCENARIOS and not top.has("flow"):
        errors.append(f"flow: required for scenario {scenario}")
    flow = parse_flow(top.section("flow"))
    if scenario in SHEAR_SCENARIOS and top.has("flow") and not isinstance(flow, Shear):
        errors.append(f"flow: scenario {scenario} needs a shear flow, got {type(flow).__name__}")

    solver_reader = top.section("solver")
    solver_reader.check_keys(SOLVER_KEYS)
    p = solver_reader.number("p", 1.5)
    if grid is not None and p is not None:
        try:
            validate_exponent(p, grid.dim)
        except ValueError as e:
            errors.append(f"solver.p: {e}")
    solver_values = dict(
        nu=solver_reader.number("nu", 1.0, minimum=0.0, exclusive=True),
        p=p,
        dt=solver_reader.number("dt", 1e-3, minimum=0.0, exclusive=True),
        t_end=solver_reader.number("t_end", 1.0, minimum=0.0),
        dealias_fraction=solver_reader.number("dealias_fraction", 2.0 / 3.0, minimum=0.0, exclusive=True),
        blowup_threshold=solver_reader.number("blowup_threshold", 1e6, minimum=0.0, exclusive=True),
        enforce_mean_zero=solver_reader.flag("enforce_mean_zero", True),
        scheme=solver_reader.text("scheme", "etd1", choices=("etd1", "etdrk2")),
        form=solver_reader.text("form", "standard", choices=("standard", "rescaled")),
        max_halvings=solver_reader.number("max_halvings", 20, kind=int, minimum=0),
        growth_guard=solver_reader.number("growth_guard", 10.0, minimum=1.0, exclusive=True),
    )

    initial = _parse_initial_data(top.section("initial_data"))
    if grid is not None and initial.kind == "sheared_pair" and grid.dim != 2:
        errors.append("initial_data: sheared_pair needs grid.dim = 2")

    diss_reader = top.section("dissipation")
    diss_reader.check_keys(DISSIPATION_KEYS)
    dissipation = DissipationSettings(
        K=diss_reader.number("K", 16, kind=int, minimum=1),
        tol=diss_reader.number("tol", 1e-6, minimum=0.0, exclusive=True),
        nu_list=diss_reader.numbers("nu_list", []),
        start_times=diss_reader.numbers("start_times", None),
        substeps=diss_reader.number("substeps", 32, kind=int, minimum=1),
        check_truncation=diss_reader.flag("check_truncation", False),
    )
    if scenario == "enhanced-dissipation-sweep" and len(dissipation.nu_list) < 4:
        errors.append("dissipation.nu_list: enhanced-dissipation-sweep needs at least 4 values")

    scan_reader = top.section("scan")
    scan_reader.check_keys(SCAN_KEYS)
    scan = ScanSettings(
        amplitude_multiples=scan_reader.numbers("amplitude_multiples", [0.5, 1.0, 2.0]),
        flow_amplitudes=scan_reader.numbers("flow_amplitudes", []),
        cell_scale=scan_reader.number("cell_scale", 1.0),
        fit_r2=scan_reader.number("fit_r2", 0.95),
    )
    if scenario == "blowup-scan":
        if not scan.amplitude_multiples:
            errors.append("scan.amplitude_multiples: blowup-scan needs at least one multiple")
        if p is not None and p <= 1.0:
            errors.append(f"solver.p: blowup-scan needs p > 1 for a finite threshold amplitude, got {p}")

    shear_reader = top.section("shear")
    shear_reader.check_keys(SHEAR_KEYS)
    shear = ShearSettings(
        C_p=shear_reader.number("C_p", None, minimum=0.0, exclusive=True),
        nu_candidates=shear_reader.numbers("nu_candidates", [0.05, 0.02, 0.01]),
        mean_fraction=shear_reader.number("mean_fraction", 0.1, minimum=0.0, exclusive=True),
        perp_norm=shear_reader.number("perp_norm", 0.1, minimum=0.0, exclusive=True),
        horizon_factor=shear_reader.number("horizon_factor", 50.0, minimum=0.0, exclusive=True),
        bound_factor=shear_reader.number("bound_factor", 2.0, minimum=0.0, exclusive=True),
        K=shear_reader.number("K", 12, kind=int, minimum=1),
    )
    if scenario == "shear-suppression" and grid is not None and grid.dim != 2:
        errors.append("grid.dim: shear-suppression needs a 2-D grid")
    if scenario == "shear-suppression" and not shear.nu_candidates:
        errors.append("shear.nu_candidates: shear-suppression needs at least one candidate")
    if scenario == "shear-suppression" and p is not None and not 1.0 < p < 2.0:
        errors.append(f"solver.p: shear-suppression needs 1 < p < 2, got {p}")

    sample_every = top.number("sample_every", 10, kind=int, minimum=1)
    checkpoint_every = top.number("checkpoint_every", 0, kind=int, minimum=0)
    seed = top.number("seed", 0, kind=int, minimum=0)
    output_dir = Path(str(top.data.get("output_dir", OUTPUT_DIR)))

    solver = None
    if not errors:
        try:
            solver = SolverConfig(grid=grid, flow=flow, **solver_values)
        except ValueError as e:
            errors.append(f"solver: {e}")
    if errors:
        raise ConfigError(errors)

    config = RunConfig(scenario=scenario, solver=solver, flow=flow, initial_data=initial, output_dir=output_dir,
                       sample_every=sample_every, checkpoint_every=checkpoint_every, seed=seed,
                       dissipation=dissipation, scan=scan, shear=shear, document=document)
    logger.debug(f"parsed {scenario} config {config.config_hash}")
    return config


def load_config(path):
    return parse_config(Path(path).read_text(encoding="utf-8"))


def apply_overrides(config, output_dir=None, seed=None):
    """CLI flags win over the document."""
    changes = {}
    if output_dir is not None:
        changes["output_dir"] = Path(output_dir)
    if seed is not None:
        changes["seed"] = int(seed)
        document = dict(config.document)
        document["seed"] = int(seed)
        changes["document"] = document
    return replace(config, **changes) if changes else config


def describe_flow(flow):
    """Plain-dict summary of a flow for reports."""
    if isinstance(flow, Shear):
        return {"type": "shear", "critical_order": flow.critical_order, "max_speed": float(np.max(np.abs(flow.profile)))}
    if isinstance(flow, Cellular):
        return {"type": "cellular", "amplitude": flow.amplitude, "cell_scale": flow.cell_scale}
    if isinstance(flow, RescaledMixing):
        return {"type": "rescaled_mixing", "amplitude": flow.amplitude, "base": describe_flow(flow.base)}
    if isinstance(flow, Custom):
        return {"type": "custom", "components": len(flow.components)}
    return {"type": "zero"}
