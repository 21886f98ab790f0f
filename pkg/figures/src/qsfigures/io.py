"""Readers for the pipeline's on-disk outputs.

Everything here parses the documented file contracts: per-run CSVs under
<data>/<combo>/{sim,smooth,effects}/, per-combination metrics.csv and
summary.json, the frozen config.ini snapshot, and the analytic
correlators.csv / prediction.json / lindblad.csv at the data root.
Nothing recomputes statistics; malformed or missing inputs raise with the
offending path in the message.
"""

from __future__ import annotations

import configparser
import json
from pathlib import Path

import numpy as np


def read_table(path) -> dict[str, np.ndarray]:
    """Load one comma-delimited table as {column: float array}."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing data file {path}")
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.dtype.names is None:
        raise ValueError(f"{path} has no header row")
    if data.ndim == 0:
        data = data.reshape(1)
    return {name: np.asarray(data[name], dtype=float) for name in data.dtype.names}


def require_columns(cols: dict, needed, path) -> None:
    missing = [name for name in needed if name not in cols]
    if missing:
        raise ValueError(f"{path} lacks expected columns {missing}")


def read_correlators(path) -> dict[str, dict[str, np.ndarray]]:
    """Correlator grid rows grouped by their combination label."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing correlator table {path}")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "pair":
            raise ValueError(f"{path} does not look like a correlator table")
        grouped: dict[str, dict[str, list]] = {}
        for line in fh:
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            block = grouped.setdefault(cells[0], {name: [] for name in header[1:]})
            for name, cell in zip(header[1:], cells[1:]):
                block[name].append(float(cell))
    return {
        pair: {name: np.array(values) for name, values in block.items()}
        for pair, block in grouped.items()
    }


def combo_dirs(data_dir) -> list[Path]:
    """Combination directories under the data root, sorted by name."""
    root = Path(data_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory {root} does not exist")
    return sorted(p.parent for p in root.glob("*/config.ini"))


def read_gamma(combo_dir) -> float:
    """Total decay rate from the frozen config snapshot, for time axes."""
    parser = configparser.ConfigParser()
    read = parser.read(Path(combo_dir) / "config.ini")
    if not read:
        raise FileNotFoundError(f"missing config snapshot in {combo_dir}")
    return parser.getfloat("model", "gamma")


def run_files(combo_dir, stage: str) -> list[Path]:
    return sorted(Path(combo_dir).glob(f"{stage}/run_*.csv"))


def load_summaries(data_dir) -> dict[str, dict]:
    """summary.json per combination directory that has one."""
    out = {}
    for combo in combo_dirs(data_dir):
        path = combo / "summary.json"
        if path.exists():
            with open(path) as fh:
                out[combo.name] = json.load(fh)
    return out


def load_levels(data_dir) -> dict[str, int]:
    """Predicted level per combination from prediction.json."""
    path = Path(data_dir) / "prediction.json"
    if not path.exists():
        raise FileNotFoundError(
            f"missing {path}; generate it with the pipeline's reproduce command"
        )
    with open(path) as fh:
        rows = json.load(fh)
    levels = {}
    for row in rows:
        if row.get("level") is None:
            raise ValueError(f"{path} carries an unclassified combination: {row}")
        levels[row["combination"]] = int(row["level"])
    return levels
