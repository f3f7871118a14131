import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from checkpoint_io import MAGIC, load_checkpoint
from spectral_core import TWO_PI, SpectralField, forward_transform, inverse_transform, l2_norm, project_mean_zero

PRESETS = {
    "single_mode": {"k": 1, "amplitude": 1.0, "axis": 0},
    "random_band": {"k_max": 4, "amplitude": 0.1, "seed": 0},
    "file": {"path": None},
    "sheared_pair": {"mean_norm": 0.01, "perp_norm": 0.1},
}


@dataclass
class InitialDataSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PRESETS:
            raise ValueError(f"unknown initial data preset {self.kind!r}; choose from {sorted(PRESETS)}")
        unknown = set(self.params) - set(PRESETS[self.kind])
        if unknown:
            raise ValueError(f"unknown {self.kind} parameters: {sorted(unknown)}")
        merged = dict(PRESETS[self.kind])
        merged.update(self.params)
        self.params = merged

    @property
    def seed(self):
        return self.params.get("seed")


def single_mode(grid, k=1, amplitude=1.0, axis=0):
    """A sin(2 pi k x_axis)."""
    if axis >= grid.dim:
        raise ValueError(f"axis {axis} out of range for a {grid.dim}-D grid")
    return forward_transform(amplitude * np.sin(TWO_PI * k * grid.coordinates[axis]), grid)


def random_band(grid, k_max=4, amplitude=0.1, seed=0):
    """
    Mean-zero random field on the modes 0 < |k|_inf <= k_max with L^2 norm `amplitude`.

    Uses a counter-based Philox stream keyed by the seed, so the draw is
    identical across platforms.
    """
    if not 1 <= k_max <= grid.points_per_axis // 3:
        raise ValueError(f"k_max must be in [1, M/3] = [1, {grid.points_per_axis // 3}], got {k_max}")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    band = grid.k_max_abs <= k_max
    raw = np.zeros(grid.shape, dtype=np.complex128)
    count = int(band.sum())
    raw[band] = rng.standard_normal(count) + 1j * rng.standard_normal(count)
    # real part of the synthesis keeps the band and enforces Hermitian symmetry
    real = forward_transform(inverse_transform(SpectralField(grid, raw)), grid)
    u = project_mean_zero(real)
    norm = l2_norm(u)
    return u * (amplitude / norm) if norm > 0 else u


def sheared_pair(grid, mean_norm=0.01, perp_norm=0.1):
    """x1-averaged part sin(2 pi x2) plus perpendicular part sin(2 pi x1), each scaled to an L^2 norm."""
    if grid.dim != 2:
        raise ValueError("sheared_pair needs a 2-D grid")
    x1, x2 = grid.coordinates
    root2 = math.sqrt(2.0)
    samples = root2 * mean_norm * np.sin(TWO_PI * x2) + root2 * perp_norm * np.sin(TWO_PI * x1)
    return forward_transform(samples, grid)


def from_file(grid, path):
    """A checkpoint (NLSP magic) or a .npy array of physical samples."""
    if path is None:
        raise ValueError("file preset needs a path")
    path = Path(path)
    with open(path, "rb") as handle:
        magic = handle.read(len(MAGIC))
    if magic == MAGIC:
        u, _ = load_checkpoint(path)
    else:
        u = forward_transform(np.load(path), grid)
    if u.grid != grid:
        raise ValueError(f"initial data in {path} lives on {u.grid}, expected {grid}")
    return u


def build_initial_data(spec, grid, seed=None):
    """
    Materialize an initial-data preset on a grid.

    Args:
        spec: InitialDataSpec
        grid: spectral_core.Grid
        seed: overrides the preset seed (random_band only)

    Returns:
        SpectralField
    """
    params = dict(spec.params)
    if spec.kind == "single_mode":
        return single_mode(grid, int(params["k"]), float(params["amplitude"]), int(params["axis"]))
    if spec.kind == "random_band":
        chosen = params["seed"] if seed is None else seed
        return random_band(grid, int(params["k_max"]), float(params["amplitude"]), int(chosen))
    if spec.kind == "sheared_pair":
        return sheared_pair(grid, float(params["mean_norm"]), float(params["perp_norm"]))
    return from_file(grid, params["path"])
