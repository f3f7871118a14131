import numpy as np
import pytest

from checkpoint_io import (
    HEADER_DTYPE,
    MAGIC,
    CheckpointError,
    CheckpointMeta,
    expected_size,
    load_checkpoint,
    save_checkpoint,
)
from initial_data import random_band
from spectral_core import Grid


@pytest.fixture
def field():
    return random_band(Grid(2, 16), k_max=5, amplitude=0.3, seed=4)


def test_round_trip_is_bit_identical(tmp_path, field):
    path = tmp_path / "state.nlsp"
    save_checkpoint(field, CheckpointMeta(nu=0.01, p=1.5, t=0.125), path)
    loaded, meta = load_checkpoint(path)
    assert loaded.grid == field.grid
    np.testing.assert_array_equal(loaded.coeffs, field.coeffs)
    assert meta == CheckpointMeta(nu=0.01, p=1.5, t=0.125)
    assert not (tmp_path / "state.nlsp.tmp").exists()


def test_file_size(tmp_path, field):
    path = tmp_path / "state.nlsp"
    save_checkpoint(field, CheckpointMeta(1.0, 1.5, 0.0), path)
    assert HEADER_DTYPE.itemsize == 40
    assert path.stat().st_size == 40 + 16 * 16 ** 2 == expected_size(field.grid)


def test_one_dimensional_round_trip(tmp_path):
    field = random_band(Grid(1, 32), k_max=8, amplitude=1.0, seed=1)
    path = tmp_path / "line.nlsp"
    save_checkpoint(field, CheckpointMeta(1.0, 2.5, 3.0), path)
    loaded, meta = load_checkpoint(path)
    np.testing.assert_array_equal(loaded.coeffs, field.coeffs)
    assert meta.p == 2.5


def test_truncated_file(tmp_path, field):
    path = tmp_path / "state.nlsp"
    save_checkpoint(field, CheckpointMeta(1.0, 1.5, 0.0), path)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(CheckpointError, match="size"):
        load_checkpoint(path)
    path.write_bytes(data[:20])
    with pytest.raises(CheckpointError, match="truncated header"):
        load_checkpoint(path)


def test_unsupported_version(tmp_path, field):
    path = tmp_path / "state.nlsp"
    save_checkpoint(field, CheckpointMeta(1.0, 1.5, 0.0), path)
    data = bytearray(path.read_bytes())
    data[4:8] = np.array([999], dtype="<u4").tobytes()
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="version 999"):
        load_checkpoint(path)


def test_bad_magic(tmp_path, field):
    path = tmp_path / "state.nlsp"
    save_checkpoint(field, CheckpointMeta(1.0, 1.5, 0.0), path)
    data = path.read_bytes()
    path.write_bytes(b"XXXX" + data[len(MAGIC):])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_invalid_grid_in_header(tmp_path, field):
    path = tmp_path / "state.nlsp"
    save_checkpoint(field, CheckpointMeta(1.0, 1.5, 0.0), path)
    data = bytearray(path.read_bytes())
    data[8:12] = np.array([3], dtype="<u4").tobytes()
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="invalid grid"):
        load_checkpoint(path)
