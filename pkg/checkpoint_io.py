"""
Binary checkpoints of a solution state.
Provides functions to save and load a SpectralField with its run metadata.

Layout (little-endian): magic "NLSP", version u32, dim u32, M u32,
nu f64, p f64, t f64, then M^N complex coefficients as interleaved
(re, im) f64 pairs in row-major FFT order.
"""

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger

from spectral_core import Grid, SpectralField

MAGIC = b"NLSP"
VERSION = 1
HEADER_DTYPE = np.dtype([
    ("magic", "S4"),
    ("version", "<u4"),
    ("dim", "<u4"),
    ("points", "<u4"),
    ("nu", "<f8"),
    ("p", "<f8"),
    ("t", "<f8"),
])
COEFF_DTYPE = np.dtype("<c16")


class CheckpointError(Exception):
    """Raised when a checkpoint file is malformed or unsupported."""


@dataclass(frozen=True)
class CheckpointMeta:
    nu: float
    p: float
    t: float
    version: int = VERSION


def expected_size(grid):
    return HEADER_DTYPE.itemsize + COEFF_DTYPE.itemsize * grid.sample_count


def save_checkpoint(u, meta, path):
    """
    Write a field and its metadata to `path`.

    The file is written next to the target and moved into place, so a
    failed write never leaves a half-written checkpoint under `path`.

    Args:
        u: SpectralField to store
        meta: CheckpointMeta (nu, p, t)
        path: destination file
    """
    path = Path(path)
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header[0] = (MAGIC, VERSION, u.grid.dim, u.grid.points_per_axis, meta.nu, meta.p, meta.t)
    payload = header.tobytes() + np.ascontiguousarray(u.coeffs, dtype=COEFF_DTYPE).tobytes()
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)
    logger.debug(f"checkpoint written: {path} (t={meta.t:g}, {len(payload)} bytes)")


def load_checkpoint(path):
    """
    Read a checkpoint written by save_checkpoint.

    Returns:
        tuple: (SpectralField, CheckpointMeta)

    Raises:
        CheckpointError: on magic mismatch, unsupported version, bad header
            values or a truncated file
    """
    data = Path(path).read_bytes()
    if len(data) < HEADER_DTYPE.itemsize:
        raise CheckpointError(
            f"{path}: truncated header ({len(data)} bytes, need {HEADER_DTYPE.itemsize})"
        )
    header = np.frombuffer(data, dtype=HEADER_DTYPE, count=1)[0]
    if bytes(header["magic"]) != MAGIC:
        raise CheckpointError(f"{path}: bad magic {bytes(header['magic'])!r}, expected {MAGIC!r}")
    version = int(header["version"])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (supported: {VERSION})")
    try:
        grid = Grid(int(header["dim"]), int(header["points"]))
    except ValueError as e:
        raise CheckpointError(f"{path}: invalid grid in header: {e}") from e

    if len(data) != expected_size(grid):
        raise CheckpointError(
            f"{path}: size {len(data)} bytes does not match header (expected {expected_size(grid)} "
            f"for dim={grid.dim}, M={grid.points_per_axis})"
        )
    coeffs = np.frombuffer(data, dtype=COEFF_DTYPE, offset=HEADER_DTYPE.itemsize).reshape(grid.shape)
    meta = CheckpointMeta(nu=float(header["nu"]), p=float(header["p"]), t=float(header["t"]), version=version)
    field = SpectralField(grid, coeffs.astype(np.complex128))
    return field, meta
