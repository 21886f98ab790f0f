"""Run configuration: physical parameters, ensemble sizes, file round-trip.

Every physical number used by the simulator lives here, in one frozen
dataclass, so a saved config file fully determines a run.  Defaults are
quoted in units where the total decay rate is 1, but nothing assumes those
units; rates are plain inverse-time quantities and the drive amplitude is
radians per time.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import math

import numpy as np

DETECTOR_KINDS = ("N", "X", "Y")

# Canonical ordering of the nine observed/unobserved detector pairings.
# The position in this tuple seeds per-combination random substreams, so it
# must never be reordered.
COMBINATIONS = (
    "dNdN", "dNdX", "dNdY",
    "dXdN", "dXdX", "dXdY",
    "dYdN", "dYdX", "dYdY",
)

# ensemble sizes for the headline experiment; the everyday default below is
# deliberately smaller so a desktop run finishes in well under a day
FULL_SCALE_RECORDS = 3000
FULL_SCALE_CANDIDATES = 10_000


def combination_label(observed: str, unobserved: str) -> str:
    return f"d{observed}d{unobserved}"


def split_combination(label: str) -> tuple[str, str]:
    """Parse a label like 'dNdX' into ('N', 'X')."""
    if len(label) == 4 and label[0] == "d" and label[2] == "d":
        observed, unobserved = label[1], label[3]
        if observed in DETECTOR_KINDS and unobserved in DETECTOR_KINDS:
            return observed, unobserved
    raise ValueError(f"unknown detector combination {label!r}")


def combination_index(label: str) -> int:
    return COMBINATIONS.index(label)


@dataclasses.dataclass(frozen=True)
class DetectorConfig:
    """One decay channel and how its emission is monitored.

    Kind 'N' is direct detection of emission events; 'X' and 'Y' are
    quadrature measurements with local-oscillator phases 0 and pi/2.
    """

    kind: str
    rate: float

    def __post_init__(self):
        if self.kind not in DETECTOR_KINDS:
            raise ValueError(
                f"detector kind must be one of {DETECTOR_KINDS}, got {self.kind!r}"
            )
        if self.rate < 0.0:
            raise ValueError(f"detector rate must be nonnegative, got {self.rate}")

    @property
    def phase(self) -> float | None:
        """Local-oscillator phase, None for event detection."""
        if self.kind == "N":
            return None
        return 0.0 if self.kind == "X" else 0.5 * math.pi

    @property
    def diffusive(self) -> bool:
        return self.kind != "N"


@dataclasses.dataclass(frozen=True)
class SimConfig:
    """Full description of one smoothing experiment.

    Defaults give the standard working point: drive five times the total
    decay rate, decay split evenly between the observed and the unobserved
    channel, every record started from the excited state.
    """

    omega: float = 5.0
    gamma: float = 1.0
    gamma_observed: float = 0.5
    gamma_unobserved: float = 0.5
    observed: str = "N"
    unobserved: str = "Y"
    dt: float = 1e-3
    t_total: float = 8.0
    n_records: int = 200
    n_candidates: int = 2000
    seed: int = 12345
    ss_window: tuple[float, float] = (4.5, 6.0)
    store_every: int = 10
    t_corr: float | None = None
    ostensible_rate_observed: float | None = None
    ostensible_rate_unobserved: float | None = None
    initial_state: str = "excited"
    candidate_chunk: int = 1024

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ValueError("total decay rate must be positive")
        if self.gamma_observed < 0.0 or self.gamma_unobserved < 0.0:
            raise ValueError("channel rates must be nonnegative")
        if abs(self.gamma_observed + self.gamma_unobserved - self.gamma) > 1e-12:
            raise ValueError("channel rates must add up to the total decay rate")
        if self.observed not in DETECTOR_KINDS or self.unobserved not in DETECTOR_KINDS:
            raise ValueError(f"detector kinds must be in {DETECTOR_KINDS}")
        if self.dt <= 0.0 or self.t_total <= 0.0:
            raise ValueError("dt and t_total must be positive")
        # first-order stepping needs dt well below both dynamical timescales
        fastest = min(1.0 / self.gamma, 1.0 / self.omega if self.omega > 0 else np.inf)
        if self.dt > 0.2 * fastest + 1e-15:
            raise ValueError(
                f"dt={self.dt} too coarse for rates (omega={self.omega}, gamma={self.gamma})"
            )
        n = self.t_total / self.dt
        if abs(n - round(n)) > 1e-6:
            raise ValueError("t_total must be an integer number of steps")
        if self.store_every < 1 or round(n) % self.store_every != 0:
            raise ValueError("store_every must divide the step count")
        if self.n_records < 1 or self.n_candidates < 1:
            raise ValueError("ensemble sizes must be positive")
        if not (0.0 <= self.ss_window[0] < self.ss_window[1] <= self.t_total):
            raise ValueError("ss_window must be an increasing interval inside the run")
        if self.initial_state not in ("excited", "ground"):
            raise ValueError("initial_state must be 'excited' or 'ground'")
        if self.candidate_chunk < 1:
            raise ValueError("candidate_chunk must be positive")

    # derived quantities -------------------------------------------------

    @property
    def n_steps(self) -> int:
        return int(round(self.t_total / self.dt))

    @property
    def n_stored(self) -> int:
        return self.n_steps // self.store_every + 1

    def stored_times(self) -> np.ndarray:
        return self.dt * self.store_every * np.arange(self.n_stored)

    @property
    def combination(self) -> str:
        return combination_label(self.observed, self.unobserved)

    @property
    def detector_observed(self) -> DetectorConfig:
        return DetectorConfig(self.observed, self.gamma_observed)

    @property
    def detector_unobserved(self) -> DetectorConfig:
        return DetectorConfig(self.unobserved, self.gamma_unobserved)

    @property
    def effective_t_corr(self) -> float:
        """Decorrelation time used for steady-window averaging."""
        return self.t_corr if self.t_corr is not None else 1.0 / self.gamma

    def initial_rho(self) -> np.ndarray:
        from . import qubit

        return (qubit.EXCITED if self.initial_state == "excited" else qubit.GROUND).copy()

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    # serialization ------------------------------------------------------

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["ss_window"] = list(self.ss_window)
        return out

    def config_hash(self) -> str:
        """Stable digest of the physics content, used for resume checks."""
        payload = json.dumps(self.as_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    _SECTIONS = {
        "model": ("omega", "gamma", "gamma_observed", "gamma_unobserved", "initial_state"),
        "detection": (
            "observed",
            "unobserved",
            "ostensible_rate_observed",
            "ostensible_rate_unobserved",
        ),
        "integration": ("dt", "t_total", "store_every"),
        "ensemble": ("n_records", "n_candidates", "seed", "candidate_chunk"),
        "analysis": ("ss_window", "t_corr"),
    }

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        values = self.as_dict()
        for section, keys in self._SECTIONS.items():
            parser[section] = {}
            for key in keys:
                val = values[key]
                if val is None:
                    continue
                if key == "ss_window":
                    val = f"{val[0]!r}, {val[1]!r}"
                parser[section][key] = str(val)
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_ini())

    @classmethod
    def from_ini(cls, path) -> "SimConfig":
        parser = configparser.ConfigParser()
        with open(path) as fh:
            parser.read_file(fh)
        return cls._from_parser(parser)

    @classmethod
    def from_ini_string(cls, text: str) -> "SimConfig":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        return cls._from_parser(parser)

    @classmethod
    def _from_parser(cls, parser: configparser.ConfigParser) -> "SimConfig":
        field_names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for section in parser.sections():
            for key, raw in parser[section].items():
                if key not in field_names:
                    raise ValueError(f"unknown config key {key!r} in [{section}]")
                kwargs[key] = _parse_value(key, raw)
        return cls(**kwargs)


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key == "ss_window":
        parts = [float(p) for p in raw.replace(",", " ").split()]
        if len(parts) != 2:
            raise ValueError(f"ss_window needs two numbers, got {raw!r}")
        return (parts[0], parts[1])
    if key in ("observed", "unobserved", "initial_state"):
        return raw
    if raw.lower() in ("none", ""):
        return None
    if key in ("n_records", "n_candidates", "seed", "store_every", "candidate_chunk"):
        return int(raw)
    return float(raw)
