"""Acceptance suite: one test (one pass/fail line under -v) per headline
requirement, at the stated tolerances.

Run as `pytest tests/test_acceptance.py -v`.  The two ensemble-ordering
criteria (5 and 6) run at a reduced smoke scale by default: the strongest
and weakest predicted combinations at 50 records x 500 candidates, a few
minutes total.  Set QSS_FULL_ACCEPTANCE=1 to also run the full desk scale
(all nine combinations at 200 records x 2000 candidates, hours when
single-threaded; QSMOOTH_WORKERS controls parallelism, and the output
directory QSS_FULL_DIR is reused across invocations so interrupted runs
resume).
"""

import itertools
import math
import os
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from _oracles import enumerate_smoothed, uniform_reference_config

from qsmooth import qubit, runner
from qsmooth.config import COMBINATIONS, SimConfig, split_combination
from qsmooth.correlators import CorrelatorModel, default_tau_grid, predict_level
from qsmooth.metrics import recovery_curves, steady_average
from qsmooth.records import Record
from qsmooth.smoothing import (
    build_ensemble,
    candidate_record,
    filter_weights,
    smooth_run,
    smooth_weights,
    smoothed_state,
)
from qsmooth.unravelling import (
    filter_trajectories,
    lindblad_liouvillian,
    simulate_true_runs,
)

SMOKE_SEED = 20260822
FULL_SEED = 424242
FULL_SCALE = os.environ.get("QSS_FULL_ACCEPTANCE") == "1"

EXPECTED_LEVELS = {
    "dNdN": 4, "dNdY": 4, "dYdN": 4, "dYdY": 4,
    "dXdX": 3,
    "dXdN": 2, "dXdY": 2,
    "dNdX": 1, "dYdX": 1,
}

# per combination: does (cross, observed-twice, unobserved-twice) vanish
EXPECTED_VANISHING = {
    "dNdN": (False, False, False),
    "dNdX": (True, True, False),
    "dNdY": (False, False, False),
    "dXdN": (True, False, True),
    "dXdX": (False, True, True),
    "dXdY": (True, False, True),
    "dYdN": (False, False, False),
    "dYdX": (True, True, False),
    "dYdY": (False, False, False),
}


def _experiment_config(combination: str, n_records: int, n_candidates: int, seed: int) -> SimConfig:
    observed, unobserved = split_combination(combination)
    return SimConfig(
        observed=observed,
        unobserved=unobserved,
        dt=1e-3,
        t_total=8.0,
        store_every=10,
        n_records=n_records,
        n_candidates=n_candidates,
        seed=seed,
        ss_window=(4.5, 6.0),
        candidate_chunk=512,
    )


def _pipeline_summaries(out_dir, combinations, n_records, n_candidates, seed, workers=1):
    summaries = {}
    for combination in combinations:
        cfg = _experiment_config(combination, n_records, n_candidates, seed)
        runner.simulate_batch(cfg, out_dir, workers=workers)
        runner.smooth_batch(cfg, out_dir, workers=workers)
        summaries[combination] = runner.metrics_batch(cfg, out_dir)["summary"]
    return summaries


@pytest.fixture(scope="session")
def smoke_data(tmp_path_factory):
    """Strongest (dNdY, level 4) vs weakest (dNdX, level 1) at smoke scale."""
    out = tmp_path_factory.mktemp("acceptance_smoke")
    start = time.monotonic()
    summaries = _pipeline_summaries(out, ("dNdY", "dNdX"), 50, 500, SMOKE_SEED)
    return {"summaries": summaries, "dir": out, "elapsed": time.monotonic() - start}


@pytest.fixture(scope="session")
def full_scale_data():
    if not FULL_SCALE:
        pytest.skip("set QSS_FULL_ACCEPTANCE=1 for the desk-scale ordering runs")
    out = Path(os.environ.get("QSS_FULL_DIR", tempfile.gettempdir())) / "qsmooth_full_acceptance"
    workers = int(os.environ.get("QSMOOTH_WORKERS", os.cpu_count() or 1))
    return _pipeline_summaries(out, COMBINATIONS, 200, 2000, FULL_SEED, workers=workers)


def _combined_sigma(summary_a, summary_b, key) -> float:
    return math.hypot(summary_a["d" + key], summary_b["d" + key])


# ---------------------------------------------------------------------------


def test_criterion_01_steady_state_bloch_vector():
    report = runner.steady_report(SimConfig())
    np.testing.assert_allclose(
        report["bloch"], [0.0, 10.0 / 51.0, -1.0 / 51.0], atol=1e-10
    )


def test_criterion_02_unravelling_consistency_with_lindblad():
    # each detector kind observed alone, the unobserved half averaged out
    n_runs = 1000
    base = SimConfig(
        dt=2e-3, t_total=4.0, store_every=50, n_records=n_runs,
        seed=515151, ss_window=(2.0, 3.5),
    )
    prop = qubit.Propagator(lindblad_liouvillian(base))
    times = base.stored_times()
    lindblad_bloch = np.array(
        [qubit.bloch_from_rho(qubit.propagate(prop, base.initial_rho(), float(t))) for t in times]
    )
    for kind in ("N", "X", "Y"):
        cfg = base.replace(observed=kind, unobserved="Y")
        runs = simulate_true_runs(cfg, range(n_runs))
        _, bloch = filter_trajectories([r.record_observed for r in runs], cfg)
        mean_bloch = bloch.mean(axis=0)
        trace_distance = 0.5 * np.linalg.norm(mean_bloch - lindblad_bloch, axis=-1)
        assert trace_distance.max() < 0.05, (
            f"observed d{kind}: max trace distance {trace_distance.max():.4f}"
        )


def test_criterion_03_correlator_vanishing_pattern():
    cfg = SimConfig()
    t_drive = 2.0 * math.pi / cfg.omega
    taus2 = default_tau_grid(cfg.omega, periods=3.0, n=300)
    taus3 = np.linspace(0.0, t_drive, 302)[1:-1]
    for combination, expected in EXPECTED_VANISHING.items():
        observed, unobserved = split_combination(combination)
        model = CorrelatorModel(cfg.replace(observed=observed, unobserved=unobserved))
        magnitudes = (
            max(
                np.max(np.abs(model.c2(taus2, "observed", "unobserved"))),
                np.max(np.abs(model.c2(taus2, "unobserved", "observed"))),
            ),
            np.max(np.abs(model.c3(taus3, t_drive, twice="observed"))),
            np.max(np.abs(model.c3(taus3, t_drive, twice="unobserved"))),
        )
        for magnitude, vanishes in zip(magnitudes, expected):
            if vanishes:
                assert magnitude < 1e-10, f"{combination}: {magnitude:.2e} should vanish"
            else:
                assert magnitude > 1e-3, f"{combination}: {magnitude:.2e} should survive"


def test_criterion_04_predicted_smoothing_levels_match_reference_table():
    cfg = SimConfig()
    for combination, expected in EXPECTED_LEVELS.items():
        observed, unobserved = split_combination(combination)
        prediction = predict_level(cfg.replace(observed=observed, unobserved=unobserved))
        assert prediction.level == expected, (
            f"{combination}: predicted {prediction.level}, expected {expected}"
        )


def test_criterion_05_smoothing_power_ordering_smoke(smoke_data):
    strong = smoke_data["summaries"]["dNdY"]
    weak = smoke_data["summaries"]["dNdX"]
    gap = strong["R_A_ss"] - weak["R_A_ss"]
    sigma = _combined_sigma(strong, weak, "R_A_ss")
    assert gap >= sigma, f"level-4 vs level-1 gap {gap:.4f} below 1 sigma {sigma:.4f}"
    assert smoke_data["elapsed"] < 900.0, "smoke pipeline exceeded the 15 minute budget"


@pytest.mark.skipif(not FULL_SCALE, reason="set QSS_FULL_ACCEPTANCE=1")
def test_criterion_05_smoothing_power_ordering_full(full_scale_data):
    groups = [
        [c for c, lvl in EXPECTED_LEVELS.items() if lvl == level] for level in (4, 3, 2, 1)
    ]
    for upper, lower in zip(groups, groups[1:]):
        floor_combo = min(upper, key=lambda c: full_scale_data[c]["R_A_ss"])
        ceil_combo = max(lower, key=lambda c: full_scale_data[c]["R_A_ss"])
        floor, ceil = full_scale_data[floor_combo], full_scale_data[ceil_combo]
        gap = floor["R_A_ss"] - ceil["R_A_ss"]
        sigma = _combined_sigma(floor, ceil, "R_A_ss")
        assert gap >= sigma, (
            f"{floor_combo} ({floor['R_A_ss']:.4f}) vs {ceil_combo} "
            f"({ceil['R_A_ss']:.4f}): gap {gap:.4f} below 1 sigma {sigma:.4f}"
        )


def test_criterion_06_relative_recovery_regrouping_smoke(smoke_data):
    # dNdX evaluates against the y-z projected true purity by default
    strong = smoke_data["summaries"]["dNdY"]
    weak = smoke_data["summaries"]["dNdX"]
    assert weak["reference"] == "yz"
    gap = strong["R_R_ss"] - weak["R_R_ss"]
    sigma = _combined_sigma(strong, weak, "R_R_ss")
    assert gap >= sigma, f"relative-recovery gap {gap:.4f} below 1 sigma {sigma:.4f}"


@pytest.mark.skipif(not FULL_SCALE, reason="set QSS_FULL_ACCEPTANCE=1")
def test_criterion_06_relative_recovery_regrouping_full(full_scale_data):
    upper = [c for c, lvl in EXPECTED_LEVELS.items() if lvl >= 3]
    lower = [c for c, lvl in EXPECTED_LEVELS.items() if lvl <= 2]
    floor_combo = min(upper, key=lambda c: full_scale_data[c]["R_R_ss"])
    ceil_combo = max(lower, key=lambda c: full_scale_data[c]["R_R_ss"])
    floor, ceil = full_scale_data[floor_combo], full_scale_data[ceil_combo]
    gap = floor["R_R_ss"] - ceil["R_R_ss"]
    sigma = _combined_sigma(floor, ceil, "R_R_ss")
    assert gap >= sigma, (
        f"{floor_combo} ({floor['R_R_ss']:.4f}) vs {ceil_combo} "
        f"({ceil['R_R_ss']:.4f}): gap {gap:.4f} below 1 sigma {sigma:.4f}"
    )


def test_criterion_07_endpoint_and_physicality_suite(smoke_data):
    # curve endpoints, from the files the pipeline actually wrote
    for combination in ("dNdY", "dNdX"):
        cols = runner.read_table(Path(smoke_data["dir"]) / combination / "metrics.csv")
        assert cols["R_A"][0] == 0.0
        assert abs(cols["R_A"][-1]) < 2.0 * cols["dR_A"][-1]

    # every smoothed state is a state: Hermitian, PSD, unit trace
    cfg = SimConfig(
        observed="N", unobserved="Y", dt=1e-3, t_total=2.0, store_every=20,
        n_candidates=200, n_records=2, seed=7777, ss_window=(1.0, 1.5),
    )
    for run_index in range(cfg.n_records):
        run = simulate_true_runs(cfg, [run_index])[0]
        candidates = [
            candidate_record(cfg, run_index, j) for j in range(cfg.n_candidates)
        ]
        ens = build_ensemble(run.record_observed, candidates, cfg)
        for k in range(cfg.n_stored):
            weights = smooth_weights(ens.log_weights[k], ens.effects[k], ens.states[k])
            rho = smoothed_state(ens.states[k], weights)
            qubit.check_density_matrix(rho, atol=1e-10)
        # smoothing reduces to filtering at the final time
        w_end = smooth_weights(ens.log_weights[-1], ens.effects[-1], ens.states[-1])
        np.testing.assert_allclose(
            w_end, filter_weights(ens.log_weights[-1]), atol=1e-12
        )

    # an observed click resets the smoothed state to the ground state
    cfg = SimConfig(
        observed="N", unobserved="Y", dt=1e-3, t_total=1.0, store_every=1,
        n_candidates=100, n_records=30, seed=1234, ss_window=(0.5, 0.8),
    )
    checked = 0
    for run_index in range(cfg.n_records):
        run = simulate_true_runs(cfg, [run_index])[0]
        clicks = np.flatnonzero(run.record_observed.values)
        if clicks.size == 0:
            continue
        smoothed = smooth_run(run.record_observed, cfg, run_index)
        for t_click in clicks:
            np.testing.assert_allclose(
                smoothed.bloch_smooth[t_click + 1], [0.0, 0.0, -1.0], atol=1e-10
            )
        checked += 1
        if checked >= 3:
            break
    assert checked > 0, "no observed clicks in thirty runs, cannot check the reset"


def test_criterion_08_exhaustive_enumeration_oracle():
    cfg = uniform_reference_config()
    patterns = [np.array(p, np.uint8) for p in itertools.product((0, 1), repeat=3)]
    for o_values in (np.zeros(3, np.uint8), np.array([0, 1, 0], np.uint8)):
        record = Record(cfg.detector_observed, cfg.dt, o_values)
        candidates = [Record(cfg.detector_unobserved, cfg.dt, p) for p in patterns]
        ens = build_ensemble(record, candidates, cfg)
        means, _, _ = enumerate_smoothed(cfg, o_values)
        for k in range(cfg.n_stored):
            weights = smooth_weights(ens.log_weights[k], ens.effects[k], ens.states[k])
            np.testing.assert_allclose(
                smoothed_state(ens.states[k], weights), means[k], atol=1e-10
            )


def test_criterion_09_error_formula_oracles():
    rng = np.random.default_rng(99)
    n_runs, n_times = 7, 5
    p_f = rng.uniform(0.5, 0.9, (n_runs, n_times))
    p_s = np.clip(p_f + rng.uniform(0.0, 0.1, (n_runs, n_times)), None, 1.0)
    v_s = rng.uniform(0.0, 1e-3, (n_runs, n_times))
    p_r = 1.0 - rng.uniform(0.0, 0.02, (n_runs, n_times))
    times = np.linspace(0.0, 8.0, n_times)
    curves = recovery_curves(times, p_s, p_f, p_r, var_smooth=v_s)

    for t in range(n_times):
        num = p_s[:, t] - p_f[:, t]
        den = p_r[:, t] - p_f[:, t]
        r_abs = num.mean()
        var_abs = ((num - r_abs) ** 2).mean() / n_runs + v_s[:, t].mean() / n_runs
        assert abs(curves.absolute[t] - r_abs) < 1e-12
        assert abs(curves.var_absolute[t] - var_abs) < 1e-12

        ratio = r_abs / den.mean()
        var_den = ((den - den.mean()) ** 2).mean() / n_runs
        cov_nd = ((num - r_abs) * (den - den.mean())).mean() / n_runs
        var_ratio = (var_abs + ratio**2 * var_den - 2.0 * ratio * cov_nd) / den.mean() ** 2
        assert abs(curves.relative[t] - ratio) < 1e-12
        assert abs(curves.var_relative[t] - var_ratio) < 1e-12

    # steady averaging counts (window / decorrelation time) + 1 samples
    grid = np.arange(0.0, 8.0 + 1e-9, 0.1)
    values = rng.normal(0.0, 1.0, grid.size)
    pointwise = rng.uniform(0.0, 0.1, grid.size)
    steady = steady_average(grid, values, pointwise, (4.5, 6.0), 1.0)
    assert steady.n_effective == pytest.approx(2.5, abs=1e-12)
    window = (grid >= 4.5 - 1e-12) & (grid <= 6.0 + 1e-12)
    assert steady.value == pytest.approx(values[window].mean(), abs=1e-12)
    expected_err = math.sqrt((values[window].var() + pointwise[window].mean()) / 2.5)
    assert steady.err == pytest.approx(expected_err, abs=1e-12)
