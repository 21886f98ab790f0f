"""Batch orchestration: staged pipeline runs and their on-disk contracts.

Each detector combination gets one directory under the output root:

    <out>/<combo>/config.ini                  frozen config snapshot
    <out>/<combo>/records/run_00000.obs.qrec  observed-channel record
    <out>/<combo>/records/run_00000.unobs.qrec  kept for diagnostics
    <out>/<combo>/sim/run_00000.csv           true + filtered trajectories
    <out>/<combo>/smooth/run_00000.csv        filtered + smoothed summary
    <out>/<combo>/metrics.csv                 ensemble recovery curves
    <out>/<combo>/summary.json                steady-window numbers
    <out>/<combo>/manifest_<stage>.json       one per stage invocation

Analytic outputs live at the root: correlators.csv and prediction.json.

Rerunning a stage with the same config and seed reproduces every data file
byte for byte, for any worker count; per-run substreams make scheduling
irrelevant.  A combination directory created under a different config is
refused rather than silently mixed, and completed run files are skipped on
resume.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import time
from concurrent import futures
from pathlib import Path

import numpy as np

from . import qubit
from .config import COMBINATIONS, SimConfig, combination_index, split_combination
from .correlators import CorrelatorModel, default_tau_grid, predict_level
from .metrics import (
    average_purity,
    purity_from_bloch,
    recovery_curves,
    steady_ratio_average,
    yz_projection_purity,
)
from .records import Record, read_record, write_record
from .smoothing import retrofilter, smooth_run
from .unravelling import (
    TAG_TRUE,
    filter_trajectory,
    lindblad_liouvillian,
    simulate_true_runs,
)

# column contracts consumed by the plotting component; order is load bearing
SIM_COLUMNS = "t,x_T,y_T,z_T,P_T,x_F,y_F,z_F,P_F"
SMOOTH_COLUMNS = "t,x_F,y_F,z_F,P_F,x_S,y_S,z_S,P_S,dP_S,ESS"
METRICS_COLUMNS = "t,R_A,dR_A,R_R,dR_R,PbarF,dPbarF,PbarS,dPbarS,PbarT,dPbarT"
CORRELATOR_COLUMNS = "pair,tau_over_T_Omega,C2,C3_O_twice,C3_U_twice"
LINDBLAD_COLUMNS = "t,x_L,y_L,z_L,P_L"
EFFECT_COLUMNS = "t,E00,E11,ReE01,ImE01"

FLOAT_FMT = "%.12e"


def run_name(index: int) -> str:
    return f"run_{index:05d}"


def _atomic_bytes(path: Path, payload: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def write_table(path, header: str, array) -> None:
    """Write a float table as CSV with a fixed decimal format.

    The format is wide enough that rereading loses nothing the analysis
    cares about, and the bytes depend only on the numbers.
    """
    array = np.atleast_2d(np.asarray(array, dtype=float))
    lines = [header]
    for row in array:
        lines.append(",".join(FLOAT_FMT % v for v in row))
    _atomic_bytes(Path(path), ("\n".join(lines) + "\n").encode())


def read_table(path) -> dict[str, np.ndarray]:
    """Read a CSV written by :func:`write_table` as name -> column."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.dtype.names is None:
        raise ValueError(f"{path}: no header row")
    return {name: np.atleast_1d(data[name]).astype(float) for name in data.dtype.names}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _file_hashes(combo_dir: Path, paths) -> dict[str, str]:
    return {p.relative_to(combo_dir).as_posix(): _sha256(p) for p in paths}


def write_json(path, payload) -> None:
    _atomic_bytes(Path(path), (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode())


# ---------------------------------------------------------------------------
# directory layout and manifests


def combo_dir(out_dir, config: SimConfig) -> Path:
    return Path(out_dir) / config.combination


def prepare_combo_dir(out_dir, config: SimConfig) -> Path:
    """Create (or validate) the directory for one combination's outputs."""
    combo = combo_dir(out_dir, config)
    combo.mkdir(parents=True, exist_ok=True)
    cfg_path = combo / "config.ini"
    if cfg_path.exists():
        existing = SimConfig.from_ini(cfg_path)
        if existing.config_hash() != config.config_hash():
            raise RuntimeError(
                f"{combo} holds data for config {existing.config_hash()} but the "
                f"current config hashes to {config.config_hash()}; use a fresh "
                "output directory or restore the original parameters"
            )
    else:
        cfg_path.write_text(config.to_ini())
    for sub in ("records", "sim", "smooth"):
        (combo / sub).mkdir(exist_ok=True)
    return combo


def _write_manifest(
    target_dir: Path, stage: str, config: SimConfig, rows, elapsed: float, extra: dict | None = None
) -> dict:
    manifest = {
        "stage": stage,
        "tool_version": _tool_version(),
        "config": config.as_dict(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "runs": rows,
        "n_computed": len(rows),
        "elapsed_seconds": round(elapsed, 3),
    }
    if extra:
        manifest.update(extra)
    write_json(target_dir / f"manifest_{stage}.json", manifest)
    return manifest


def _tool_version() -> str:
    from . import __version__

    return __version__


# ---------------------------------------------------------------------------
# worker plumbing


def _map_chunks(fn, config: SimConfig, combo: Path, run_indices, workers: int, chunk_size: int):
    chunks = [
        list(run_indices[i : i + chunk_size])
        for i in range(0, len(run_indices), chunk_size)
    ]
    rows = []
    if workers <= 1 or len(chunks) <= 1:
        for chunk in chunks:
            rows.extend(fn(config, chunk, combo))
    else:
        with futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(fn, itertools.repeat(config), chunks, itertools.repeat(combo))
            for part in results:
                rows.extend(part)
    rows.sort(key=lambda row: row["run"])
    return rows


# ---------------------------------------------------------------------------
# simulate stage


def _sim_paths(combo: Path, index: int) -> tuple[Path, Path, Path]:
    name = run_name(index)
    return (
        combo / "records" / f"{name}.obs.qrec",
        combo / "records" / f"{name}.unobs.qrec",
        combo / "sim" / f"{name}.csv",
    )


def _write_record_atomic(path: Path, record: Record) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    write_record(tmp, record)
    os.replace(tmp, path)


def _simulate_chunk(config: SimConfig, runs, combo: Path):
    rows = []
    for run in simulate_true_runs(config, runs):
        obs_path, unobs_path, sim_path = _sim_paths(combo, run.run_index)
        _write_record_atomic(obs_path, run.record_observed)
        _write_record_atomic(unobs_path, run.record_unobserved)
        _, bloch_f = filter_trajectory(run.record_observed, config)
        table = np.column_stack(
            [
                run.times,
                run.bloch,
                purity_from_bloch(run.bloch),
                bloch_f,
                purity_from_bloch(bloch_f),
            ]
        )
        write_table(sim_path, SIM_COLUMNS, table)
        rows.append(
            {
                "run": run.run_index,
                "seed_key": list(run.record_observed.seed_key),
                "files": _file_hashes(combo, (obs_path, unobs_path, sim_path)),
            }
        )
    return rows


def simulate_batch(config: SimConfig, out_dir, workers: int = 1) -> dict:
    """Generate true runs and records for every missing run index."""
    combo = prepare_combo_dir(out_dir, config)
    pending = [
        i for i in range(config.n_records) if not all(p.exists() for p in _sim_paths(combo, i))
    ]
    start = time.monotonic()
    chunk_size = min(512, max(1, math.ceil(len(pending) / max(workers, 1))))
    rows = _map_chunks(_simulate_chunk, config, combo, pending, workers, chunk_size)
    return _write_manifest(combo, "simulate", config, rows, time.monotonic() - start)


# ---------------------------------------------------------------------------
# smooth stage


def _smooth_path(combo: Path, index: int) -> Path:
    return combo / "smooth" / f"{run_name(index)}.csv"


def _load_observed(combo: Path, config: SimConfig, index: int) -> Record:
    path = _sim_paths(combo, index)[0]
    if not path.exists():
        raise RuntimeError(f"missing observed record {path}; run the simulate stage first")
    record = read_record(path)
    expected = (config.seed, combination_index(config.combination), index, TAG_TRUE)
    if record.seed_key is not None and tuple(record.seed_key) != expected:
        raise RuntimeError(
            f"{path} was generated from substream {record.seed_key}, expected {expected}; "
            "the output directory mixes different experiments"
        )
    return record


def _smooth_chunk(config: SimConfig, runs, combo: Path):
    rows = []
    for index in runs:
        record = _load_observed(combo, config, index)
        smoothed = smooth_run(record, config, index)
        # filtered columns come from the same candidate ensemble as the
        # smoothed ones, so the two estimates share their Monte Carlo noise
        # and coincide exactly at t=0 and t=T; the direct filter stays in
        # the sim CSV
        table = np.column_stack(
            [
                smoothed.times,
                smoothed.bloch_filter_mc,
                smoothed.purity_filter_mc,
                smoothed.bloch_smooth,
                smoothed.purity_smooth,
                np.sqrt(smoothed.var_purity_smooth),
                smoothed.ess_smooth,
            ]
        )
        path = _smooth_path(combo, index)
        write_table(path, SMOOTH_COLUMNS, table)
        rows.append({"run": index, "files": _file_hashes(combo, (path,))})
    return rows


def smooth_batch(config: SimConfig, out_dir, workers: int = 1) -> dict:
    """Smooth every simulated run that has no smoothing output yet."""
    combo = prepare_combo_dir(out_dir, config)
    pending = [i for i in range(config.n_records) if not _smooth_path(combo, i).exists()]
    start = time.monotonic()
    rows = _map_chunks(_smooth_chunk, config, combo, pending, workers, chunk_size=1)
    return _write_manifest(combo, "smooth", config, rows, time.monotonic() - start)


# ---------------------------------------------------------------------------
# metrics stage

REFERENCE_CHOICES = ("auto", "unit", "yz")


def _finite_or_none(value: float) -> float | None:
    # masked or empty steady windows produce NaN, which strict JSON lacks
    return float(value) if math.isfinite(value) else None


def _reference_label(config: SimConfig, reference: str) -> str:
    if reference not in REFERENCE_CHOICES:
        raise ValueError(f"reference must be one of {REFERENCE_CHOICES}, got {reference!r}")
    if reference != "auto":
        return reference
    # estimates confined to the y-z plane cannot beat the projected purity,
    # so that is the honest reference when only the unobserved channel
    # breaks the symmetry
    if config.unobserved == "X" and config.observed != "X":
        return "yz"
    return "unit"


def metrics_batch(config: SimConfig, out_dir, reference: str = "auto") -> dict:
    """Aggregate per-run outputs into recovery curves and steady numbers."""
    combo = prepare_combo_dir(out_dir, config)
    n_runs = config.n_records
    if n_runs < 2:
        raise RuntimeError("metrics need at least two records")
    label = _reference_label(config, reference)

    start = time.monotonic()
    times = None
    p_filter = np.empty((n_runs, config.n_stored))
    p_smooth = np.empty((n_runs, config.n_stored))
    var_smooth = np.empty((n_runs, config.n_stored))
    p_reference = np.ones((n_runs, config.n_stored))
    for i in range(n_runs):
        smooth_path = _smooth_path(combo, i)
        if not smooth_path.exists():
            raise RuntimeError(f"missing smoothing output {smooth_path}; run the smooth stage first")
        cols = read_table(smooth_path)
        if times is None:
            times = cols["t"]
        p_filter[i] = cols["P_F"]
        p_smooth[i] = cols["P_S"]
        var_smooth[i] = cols["dP_S"] ** 2
        if label == "yz":
            sim_cols = read_table(_sim_paths(combo, i)[2])
            bloch_t = np.stack([sim_cols["x_T"], sim_cols["y_T"], sim_cols["z_T"]], axis=-1)
            p_reference[i] = yz_projection_purity(bloch_t)

    curves = recovery_curves(times, p_smooth, p_filter, p_reference, var_smooth=var_smooth)
    curve_f = average_purity(times, p_filter)
    curve_s = average_purity(times, p_smooth, var_smooth)
    curve_t = average_purity(times, p_reference)
    absolute, relative = steady_ratio_average(
        curves, config.ss_window, config.effective_t_corr
    )

    table = np.column_stack(
        [
            times,
            curves.absolute,
            np.sqrt(curves.var_absolute),
            curves.relative,
            np.sqrt(curves.var_relative),
            curve_f.mean,
            curve_f.err,
            curve_s.mean,
            curve_s.err,
            curve_t.mean,
            curve_t.err,
        ]
    )
    write_table(combo / "metrics.csv", METRICS_COLUMNS, table)

    summary = {
        "combination": config.combination,
        "R_A_ss": _finite_or_none(absolute.value),
        "dR_A_ss": _finite_or_none(absolute.err),
        "R_R_ss": _finite_or_none(relative.value),
        "dR_R_ss": _finite_or_none(relative.err),
        "N_O": n_runs,
        "N_U": config.n_candidates,
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "reference": label,
        "ss_window": list(config.ss_window),
        "t_corr": config.effective_t_corr,
        "n_effective": absolute.n_effective,
    }
    write_json(combo / "summary.json", summary)
    extra = {
        "summary": summary,
        "files": _file_hashes(combo, (combo / "metrics.csv", combo / "summary.json")),
    }
    return _write_manifest(combo, "metrics", config, [], time.monotonic() - start, extra)


# ---------------------------------------------------------------------------
# analytic correlator tables


def correlator_tables(config: SimConfig, out_dir, n_tau: int = 300) -> Path:
    """Write the nine-combination correlator grid as one CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_drive = 2.0 * math.pi / config.omega
    taus = default_tau_grid(config.omega, periods=3.0, n=n_tau)
    inside = taus < t_drive * (1.0 - 1e-12)

    lines = [CORRELATOR_COLUMNS]
    for combination in COMBINATIONS:
        observed, unobserved = split_combination(combination)
        model = CorrelatorModel(config.replace(observed=observed, unobserved=unobserved))
        c2 = model.c2(taus)
        c3_obs = np.full(taus.shape, np.nan)
        c3_unobs = np.full(taus.shape, np.nan)
        c3_obs[inside] = model.c3(taus[inside], t_drive, twice="observed")
        c3_unobs[inside] = model.c3(taus[inside], t_drive, twice="unobserved")
        for k in range(taus.size):
            values = (taus[k] / t_drive, c2[k], c3_obs[k], c3_unobs[k])
            lines.append(combination + "," + ",".join(FLOAT_FMT % v for v in values))
    path = out / "correlators.csv"
    _atomic_bytes(path, ("\n".join(lines) + "\n").encode())
    return path


def prediction_table(config: SimConfig, out_dir) -> Path:
    """Classify all nine combinations and write the prediction JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for combination in COMBINATIONS:
        observed, unobserved = split_combination(combination)
        prediction = predict_level(config.replace(observed=observed, unobserved=unobserved))
        rows.append({"dO": observed, "dU": unobserved, **prediction.as_dict()})
    path = out / "prediction.json"
    write_json(path, rows)
    return path


# ---------------------------------------------------------------------------
# auxiliary tables for figure bundles


def lindblad_table(config: SimConfig, out_dir) -> Path:
    """Unconditioned master-equation curve on the stored time grid."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prop = qubit.Propagator(lindblad_liouvillian(config))
    times = config.stored_times()
    bloch = np.empty((times.size, 3))
    rho0 = config.initial_rho()
    for k, t in enumerate(times):
        bloch[k] = qubit.bloch_from_rho(qubit.propagate(prop, rho0, float(t)))
    table = np.column_stack([times, bloch, purity_from_bloch(bloch)])
    path = out / "lindblad.csv"
    write_table(path, LINDBLAD_COLUMNS, table)
    return path


def effects_table(config: SimConfig, out_dir, run_index: int = 0) -> Path:
    """Retrodictive-operator diagnostic for one run, on the stored grid."""
    combo = prepare_combo_dir(out_dir, config)
    record = _load_observed(combo, config, run_index)
    effects = retrofilter(record, config).effects
    table = np.column_stack(
        [
            config.stored_times(),
            effects[:, 0, 0].real,
            effects[:, 1, 1].real,
            effects[:, 0, 1].real,
            effects[:, 0, 1].imag,
        ]
    )
    (combo / "effects").mkdir(exist_ok=True)
    path = combo / "effects" / f"{run_name(run_index)}.csv"
    write_table(path, EFFECT_COLUMNS, table)
    return path


# ---------------------------------------------------------------------------
# steady-state report


def steady_report(config: SimConfig) -> dict:
    liou = lindblad_liouvillian(config)
    rho = qubit.steady_state(liou)
    bloch = qubit.bloch_from_rho(rho)
    p_excited = float(rho[0, 0].real)
    return {
        "bloch": [float(b) for b in bloch],
        "purity": float(0.5 * (1.0 + np.dot(bloch, bloch))),
        "p_excited": p_excited,
        "click_rate_observed": config.gamma_observed * p_excited,
        "click_rate_unobserved": config.gamma_unobserved * p_excited,
    }


# ---------------------------------------------------------------------------
# figure bundles

FIGURE_COMBINATIONS = {
    2: ("dNdY", "dYdX", "dXdX"),
    3: ("dNdY",),
    4: COMBINATIONS,
    5: (),
    6: COMBINATIONS,
}


def reproduce_figure(figure: int, config: SimConfig, out_dir, workers: int = 1) -> list[Path]:
    """Run the pipeline stages that produce one figure's data bundle.

    Single-trajectory figures force the record count to one; ensemble
    figures run simulate, smooth and metrics for each combination they
    show.  Figure 5 is purely analytic.
    """
    if figure not in FIGURE_COMBINATIONS:
        known = sorted(FIGURE_COMBINATIONS)
        raise ValueError(f"unknown figure id {figure}; expected one of {known}")
    out = Path(out_dir)
    written: list[Path] = []

    if figure == 5:
        written.append(correlator_tables(config, out))
        written.append(prediction_table(config, out))
        return written

    if figure in (2, 3):
        config = config.replace(n_records=1)
    for combination in FIGURE_COMBINATIONS[figure]:
        observed, unobserved = split_combination(combination)
        cfg = config.replace(observed=observed, unobserved=unobserved)
        simulate_batch(cfg, out, workers=workers)
        smooth_batch(cfg, out, workers=workers)
        if figure in (4, 6):
            metrics_batch(cfg, out)
        if figure == 3:
            written.append(effects_table(cfg, out, run_index=0))
        written.append(combo_dir(out, cfg))
    if figure == 4:
        written.append(lindblad_table(config, out))
    if figure == 6:
        # the bar chart groups combinations by predicted level
        written.append(prediction_table(config, out))
    return written
