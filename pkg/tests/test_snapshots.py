import csv
import struct

import numpy as np
import pytest

from cbf import catalog
from cbf.forward import CbfParams, SamplingPolicy, solve_forward
from cbf.snapshots import (
    DIAGNOSTIC_COLUMNS, HEADER, MAGIC, SnapshotError, decode_field, encode_field, read_field,
    read_trajectory, write_field, write_trajectory,
)
from cbf.spectral import SPECTRAL, ScalarField


class TestFieldFiles:
    def test_header_layout(self, small_grid, taylor_green):
        blob = encode_field(taylor_green(small_grid))

        assert HEADER.size == 32
        assert blob[:4] == MAGIC
        assert len(blob) == 32 + 2 * 16 * 16 * 8

    def test_physical_file(self, tmp_path, small_grid, taylor_green):
        u = taylor_green(small_grid, amplitude=0.3)
        path = tmp_path / 'u.cbff'

        write_field(str(path), u)
        loaded = read_field(str(path), solenoidal=True)

        assert loaded.grid.same_as(small_grid)
        assert np.array_equal(loaded.values, u.values)

    def test_spectral_representation(self, small_grid, rng):
        u = catalog.random_solenoidal(small_grid, rng)

        blob = encode_field(u, SPECTRAL)
        loaded = decode_field(blob)

        assert len(blob) == 32 + 2 * 16 * 16 * 16
        assert np.max(np.abs(loaded.values - u.values)) <= 1e-14

    def test_scalar_field(self, small_grid, rng):
        p = ScalarField(small_grid, rng.standard_normal(small_grid.shape))

        loaded = decode_field(encode_field(p))

        assert isinstance(loaded, ScalarField)
        assert np.array_equal(loaded.values, p.values)

    def test_bad_magic(self, small_grid, taylor_green):
        blob = b'XXXX' + encode_field(taylor_green(small_grid))[4:]

        with pytest.raises(SnapshotError, match="bad snapshot magic"):
            decode_field(blob)

    def test_truncated(self):
        with pytest.raises(SnapshotError, match="shorter than its header"):
            decode_field(b'CBFF')

    def test_unsupported_version(self, small_grid, taylor_green):
        blob = encode_field(taylor_green(small_grid))
        blob = blob[:4] + struct.pack('<I', 9) + blob[8:]

        with pytest.raises(SnapshotError, match="unsupported snapshot version 9"):
            decode_field(blob)

    def test_component_mismatch(self, small_grid):
        header = HEADER.pack(MAGIC, 1, 2, 16, 2 * np.pi, 3, 0)
        blob = header + np.zeros(3 * 16 * 16).tobytes()

        with pytest.raises(SnapshotError, match="3 components"):
            decode_field(blob)


class TestTrajectoryDirectory:
    @pytest.fixture
    def trajectory(self, small_grid):
        params = CbfParams(mu=1.0, alpha=1.0, beta=1.0, r=3.0)
        u0 = catalog.vector_field('tg1', small_grid)
        f = catalog.vector_field('tg2', small_grid, 0.5)
        return solve_forward(u0, f, catalog.modulation('one', small_grid), params, 0.5, 64,
                             record=SamplingPolicy(every=8, geometric=0))

    def test_write_and_read(self, tmp_path, trajectory):
        directory = str(tmp_path / 'trajectory')

        write_trajectory(directory, trajectory, r=3.0)
        loaded = read_trajectory(directory)

        assert np.array_equal(loaded.times, trajectory.times)
        assert len(loaded) == len(trajectory)
        assert all(np.array_equal(a.values, b.values) for a, b in zip(loaded.snapshots, trajectory.snapshots))

    def test_diagnostics(self, tmp_path, trajectory):
        write_trajectory(str(tmp_path), trajectory, r=3.0)

        with open(tmp_path / 'diagnostics.csv', encoding='utf-8') as handle:
            rows = list(csv.reader(handle))

        assert tuple(rows[0]) == DIAGNOSTIC_COLUMNS
        assert len(rows) == len(trajectory) + 1
        assert float(rows[1][1]) == pytest.approx(np.sqrt(2) * np.pi)
        assert all(float(row[5]) <= 1e-10 for row in rows[1:])

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="no trajectory manifest"):
            read_trajectory(str(tmp_path))
