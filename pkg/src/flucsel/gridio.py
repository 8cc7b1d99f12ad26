"""Field snapshot I/O: CSV rows per record time and the binary grid dump
(magic ``FSL1``, little-endian u32 dimension, u32 cells-per-side,
f64 time, f64 values row-major).
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError

MAGIC = b"FSL1"


def write_field_csv(path, times, snapshots) -> None:
    """One row per record time: t, cell_0, ..., cell_{K-1} (row-major)."""
    times = np.asarray(times, dtype=float)
    snaps = np.asarray(snapshots, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        n_cells = int(np.prod(snaps.shape[1:]))
        writer.writerow(["t"] + [f"cell_{i}" for i in range(n_cells)])
        for t, snap in zip(times, snaps):
            writer.writerow([repr(float(t))] + [repr(float(x)) for x in snap.ravel()])


def read_field_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise ConfigError(f"{path}: expected a field CSV with a 't,cell_*' header")
    data = np.array([[float(x) for x in row] for row in rows[1:]])
    return data[:, 0], data[:, 1:]


def write_field_binary(path, dimension: int, time: float, values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f8")
    k = values.shape[0]
    if values.shape != (k,) * dimension:
        raise ConfigError(f"field shape {values.shape} is not a {dimension}-d grid")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", dimension, k))
        fh.write(struct.pack("<d", float(time)))
        fh.write(values.ravel().tobytes())


def read_field_binary(path) -> tuple[int, float, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ConfigError(f"{path}: bad magic, expected {MAGIC!r}")
    dimension, k = struct.unpack("<II", raw[4:12])
    (time,) = struct.unpack("<d", raw[12:20])
    values = np.frombuffer(raw[20:], dtype="<f8").reshape((k,) * dimension)
    return dimension, time, values.copy()


def write_event_log_csv(path, run) -> None:
    """Reproduction-event log of an SLFV run: t, centre, kind, u, r."""
    d = run.event_centres.shape[1] if run.event_centres.size else 1
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{i}" for i in range(d)] + ["kind", "u", "r"])
        for i in range(len(run.event_times)):
            writer.writerow(
                [repr(float(run.event_times[i]))]
                + [repr(float(c)) for c in run.event_centres[i]]
                + [
                    "selective" if run.event_selective[i] else "neutral",
                    repr(float(run.impact)),
                    repr(float(run.radius)),
                ]
            )
