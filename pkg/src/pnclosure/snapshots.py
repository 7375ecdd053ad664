"""Binary snapshot files and the per-run manifest.

A snapshot holds one moment field at one time: a fixed little-endian header
(version, retained order, grid, time, cross sections, seed) followed by the
raw float64 payload, cell-major then moment-index.  A run directory carries
a human-readable manifest listing every snapshot it produced.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .solver import FieldState, Grid2D

SNAPSHOT_MAGIC = b"PNSN"
SNAPSHOT_VERSION = 1
MANIFEST_NAME = "manifest.txt"

_HEADER_FMT = "<4sIIII4d3dq"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)


@dataclass(frozen=True)
class Snapshot:
    """One stored moment field plus its provenance metadata."""

    state: FieldState
    grid: Grid2D
    order: int
    sigma_a: float
    sigma_s: float
    seed: int


def save_snapshot(path, state, grid, order, sigma_a, sigma_s, seed):
    """Write one snapshot; the payload is (nx, ny, flat) row-major float64."""
    flat = (order + 1) * (order + 2) // 2
    if state.u.shape != (grid.nx, grid.ny, flat):
        raise ValueError(
            f"state shape {state.u.shape} does not match grid/order "
            f"({grid.nx}, {grid.ny}, {flat})"
        )
    header = struct.pack(
        _HEADER_FMT,
        SNAPSHOT_MAGIC,
        SNAPSHOT_VERSION,
        order,
        grid.nx,
        grid.ny,
        grid.xmin,
        grid.xmax,
        grid.ymin,
        grid.ymax,
        state.t,
        float(sigma_a),
        float(sigma_s),
        int(seed),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(state.u, dtype="<f8").tobytes())


def load_snapshot(path):
    """Read a snapshot written by :func:`save_snapshot`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER_SIZE:
        raise ValueError(f"truncated snapshot file {path}")
    (
        magic,
        version,
        order,
        nx,
        ny,
        xmin,
        xmax,
        ymin,
        ymax,
        t,
        sigma_a,
        sigma_s,
        seed,
    ) = struct.unpack(_HEADER_FMT, raw[:_HEADER_SIZE])
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"not a snapshot file: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    flat = (order + 1) * (order + 2) // 2
    count = nx * ny * flat
    payload = np.frombuffer(raw, dtype="<f8", count=count, offset=_HEADER_SIZE)
    if payload.size != count or len(raw) != _HEADER_SIZE + 8 * count:
        raise ValueError(f"snapshot payload size mismatch in {path}")
    grid = Grid2D(nx=nx, ny=ny, xmin=xmin, xmax=xmax, ymin=ymin, ymax=ymax)
    state = FieldState(t=t, u=payload.reshape(nx, ny, flat).astype(float))
    return Snapshot(
        state=state, grid=grid, order=order, sigma_a=sigma_a, sigma_s=sigma_s, seed=seed
    )


def write_manifest(run_dir, meta, entries):
    """Human-readable run manifest.

    meta: ordered (key, value) pairs; entries: (seed, time, filename) per
    snapshot, written in a fixed order so reruns are byte-identical.
    """
    run_dir = Path(run_dir)
    lines = ["pnclosure run manifest", f"version {SNAPSHOT_VERSION}"]
    for key, value in meta:
        lines.append(f"{key} {value}")
    for seed, t, filename in entries:
        lines.append(f"snapshot {seed} {t:.12g} {filename}")
    (run_dir / MANIFEST_NAME).write_text("\n".join(lines) + "\n")


def read_manifest(run_dir):
    """Parse a run manifest into (meta dict, entry list)."""
    run_dir = Path(run_dir)
    text = (run_dir / MANIFEST_NAME).read_text().splitlines()
    if not text or text[0] != "pnclosure run manifest":
        raise ValueError(f"not a run manifest: {run_dir / MANIFEST_NAME}")
    meta = {}
    entries = []
    for line in text[1:]:
        if not line.strip():
            continue
        key, _, rest = line.partition(" ")
        if key == "snapshot":
            seed_s, t_s, filename = rest.split()
            entries.append((int(seed_s), float(t_s), filename))
        else:
            meta[key] = rest
    return meta, entries
