"""Measurement record container and its on-disk format.

A record stores one channel's outcome per integration step: bytes 0/1 for
event detection, measured increments for quadrature detection.  Files use
a small self-describing layout:

    line 1   magic  b"QREC1"
    line 2   JSON header: kind, rate, phase, dt, t_total, n_steps,
             encoding ("u1" or "<f8"), seed_key (list or null)
    rest     raw payload, n_steps bytes (u1) or n_steps little-endian
             doubles (<f8)

The seed_key documents which random substream produced the record; it is
metadata only and never feeds back into the numbers.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .config import DetectorConfig

_MAGIC = b"QREC1"


@dataclasses.dataclass
class Record:
    """One channel's measurement outcomes on the full step grid."""

    detector: DetectorConfig
    dt: float
    values: np.ndarray
    seed_key: tuple[int, ...] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 1:
            raise ValueError("record values must be one dimensional")
        if self.detector.diffusive:
            self.values = self.values.astype(np.float64, copy=False)
        else:
            vals = self.values.astype(np.uint8, copy=False)
            if self.values.dtype.kind == "f" and not np.array_equal(vals, self.values):
                raise ValueError("event record values must be 0 or 1")
            if vals.max(initial=0) > 1:
                raise ValueError("event record values must be 0 or 1")
            self.values = vals
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")

    @property
    def n_steps(self) -> int:
        return int(self.values.size)

    @property
    def t_total(self) -> float:
        return self.n_steps * self.dt

    def __len__(self) -> int:
        return self.n_steps


def write_record(path, record: Record) -> None:
    header = {
        "kind": record.detector.kind,
        "rate": record.detector.rate,
        "phase": record.detector.phase,
        "dt": record.dt,
        "t_total": record.t_total,
        "n_steps": record.n_steps,
        "encoding": "u1" if not record.detector.diffusive else "<f8",
        "seed_key": list(record.seed_key) if record.seed_key is not None else None,
    }
    payload = (
        record.values.astype(np.uint8).tobytes()
        if not record.detector.diffusive
        else record.values.astype("<f8").tobytes()
    )
    with open(path, "wb") as fh:
        fh.write(_MAGIC + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)


def read_record(path) -> Record:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a record file (bad magic {magic!r})")
        header = json.loads(fh.readline().decode())
        payload = fh.read()
    n = int(header["n_steps"])
    encoding = header["encoding"]
    values = np.frombuffer(payload, dtype=np.uint8 if encoding == "u1" else "<f8")
    if values.size != n:
        raise ValueError(f"{path}: expected {n} outcomes, found {values.size}")
    detector = DetectorConfig(header["kind"], float(header["rate"]))
    seed_key = header.get("seed_key")
    return Record(
        detector=detector,
        dt=float(header["dt"]),
        values=values.copy(),
        seed_key=tuple(seed_key) if seed_key is not None else None,
    )
