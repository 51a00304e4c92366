"""Binary field snapshots and trajectory directories."""
import csv
import logging
import os
import struct
from datetime import datetime

import numpy as np

from cbf.forward import Trajectory
from cbf.spectral import (
    PHYSICAL, SPECTRAL, ScalarField, VectorField, make_grid, norm_h1_semi, norm_l2, norm_linf, norm_lp,
)

logger = logging.getLogger(__name__)

MAGIC = b'CBFF'
VERSION = 1
HEADER = struct.Struct('<4sIIIdII')
MANIFEST = 'manifest.txt'
DIAGNOSTICS = 'diagnostics.csv'
DIAGNOSTIC_COLUMNS = ('time', 'norm_h', 'norm_grad', 'norm_lr1', 'norm_inf', 'div_max')


class SnapshotError(ValueError):
    """Raised for a malformed snapshot file."""


def encode_field(field, representation=PHYSICAL):
    """Header plus little-endian payload for a scalar or vector field."""
    grid = field.grid
    components = grid.d if isinstance(field, VectorField) else 1
    flag = 1 if representation == SPECTRAL else 0
    header = HEADER.pack(MAGIC, VERSION, grid.d, grid.n, grid.L, components, flag)
    if representation == SPECTRAL:
        payload = np.ascontiguousarray(field.coefficients, dtype='<c16')
    else:
        payload = np.ascontiguousarray(field.values, dtype='<f8')
    return header + payload.tobytes()


def decode_field(blob, solenoidal=False):
    if len(blob) < HEADER.size:
        raise SnapshotError("snapshot shorter than its header")
    magic, version, d, n, L, components, flag = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise SnapshotError(f"bad snapshot magic {magic!r}")
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    grid = make_grid(d, n, L)
    dtype = '<c16' if flag == 1 else '<f8'
    count = components * n ** d
    payload = np.frombuffer(blob, dtype=dtype, count=count, offset=HEADER.size)
    representation = SPECTRAL if flag == 1 else PHYSICAL
    if components == 1:
        return ScalarField(grid, payload.reshape(grid.shape), representation)
    if components != d:
        raise SnapshotError(f"snapshot has {components} components on a {d}-dimensional grid")
    return VectorField(grid, payload.reshape((d,) + grid.shape), representation, solenoidal=solenoidal)


def write_field(path, field, representation=PHYSICAL):
    with open(path, 'wb') as handle:
        handle.write(encode_field(field, representation))


def read_field(path, solenoidal=False):
    with open(path, 'rb') as handle:
        return decode_field(handle.read(), solenoidal=solenoidal)


def diagnostics_rows(trajectory, r):
    for t, u in zip(trajectory.times, trajectory.snapshots):
        yield [t, norm_l2(u), norm_h1_semi(u), norm_lp(u, r + 1), norm_linf(u), u.divergence_max()]


def write_trajectory(directory, trajectory, r):
    """Snapshot files, a manifest and per-time diagnostics."""
    os.makedirs(directory, exist_ok=True)
    lines = [f"# written {datetime.now().isoformat(timespec='seconds')}"]
    for index, (t, u) in enumerate(zip(trajectory.times, trajectory.snapshots)):
        name = f"u_{index:05d}.cbff"
        write_field(os.path.join(directory, name), u)
        lines.append(f"{index} {float(t)!r} {name}")
    with open(os.path.join(directory, MANIFEST), 'w', encoding='utf-8') as handle:
        handle.write("\n".join(lines) + "\n")

    with open(os.path.join(directory, DIAGNOSTICS), 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(DIAGNOSTIC_COLUMNS)
        for row in diagnostics_rows(trajectory, r):
            writer.writerow([repr(float(value)) for value in row])
    logger.info(f"Wrote {len(trajectory.snapshots)} snapshots to {directory}")


def read_trajectory(directory):
    manifest = os.path.join(directory, MANIFEST)
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"no trajectory manifest in {directory}")
    times, snapshots = [], []
    with open(manifest, encoding='utf-8') as handle:
        for line in handle:
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            _, t, name = line.split()
            times.append(float(t))
            snapshots.append(read_field(os.path.join(directory, name), solenoidal=True))
    if not snapshots:
        raise SnapshotError(f"trajectory in {directory} has no snapshots")
    return Trajectory(times=np.asarray(times), snapshots=snapshots)
