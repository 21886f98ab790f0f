"""Rendering tests over miniature pipeline outputs.

The data fixtures are generated with the primary package, but every
assertion here goes through the documented file contracts only.  The
figure-5 test is the acceptance check for this component: the two-time
panel must contain exactly the four surviving channel pairs.
"""

import shutil

import matplotlib.pyplot as plt
import numpy as np
import pytest

from qsfigures import FIGURES, build_figure, io, render
from qsfigures.cli import main

from qsmooth import runner
from qsmooth.config import SimConfig


def _tiny_config():
    return SimConfig(
        omega=1.0, observed="N", unobserved="Y", dt=0.05, t_total=1.0,
        store_every=2, n_records=2, n_candidates=8, seed=5,
        ss_window=(0.4, 0.9), candidate_chunk=8,
    )


@pytest.fixture(scope="session")
def pipeline_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    cfg = _tiny_config()
    runner.reproduce_figure(6, cfg, out)
    runner.effects_table(cfg, out, run_index=0)
    runner.lindblad_table(cfg, out)
    return out


@pytest.fixture(scope="session")
def analytic_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("analytic")
    runner.correlator_tables(SimConfig(), out)
    runner.prediction_table(SimConfig(), out)
    return out


def test_figure5_shows_exactly_four_surviving_pair_curves(analytic_dir, tmp_path):
    fig = build_figure(5, analytic_dir)
    panel = next(ax for ax in fig.axes if ax.get_gid() == "c2-panel")
    curves = panel.get_lines()
    assert len(curves) == 4
    assert sorted(line.get_label() for line in curves) == ["N-N", "N-Y", "X-X", "Y-Y"]
    for line in curves:
        assert np.max(np.abs(line.get_ydata())) > 1e-3, "a vanishing curve was drawn"
    plt.close(fig)

    assert main(["--figure", "5", "--data", str(analytic_dir), "--out", str(tmp_path)]) == 0
    image = tmp_path / "figure_5.png"
    assert image.exists() and image.stat().st_size > 1000


def test_single_run_figure_renders(pipeline_dir, tmp_path):
    assert main(["--figure", "2", "--data", str(pipeline_dir), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "figure_2.png").stat().st_size > 1000


def test_retrodiction_figure_renders(pipeline_dir, tmp_path):
    assert main(["--figure", "3", "--data", str(pipeline_dir), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "figure_3.png").stat().st_size > 1000


def test_average_purity_figure_includes_all_combinations(pipeline_dir, tmp_path):
    fig = build_figure(4, pipeline_dir)
    labels = {line.get_label() for ax in fig.axes for line in ax.get_lines()}
    assert {"dNdN", "dXdX", "dYdX", "unconditioned"} <= labels
    plt.close(fig)
    assert main(["--figure", "4", "--data", str(pipeline_dir), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "figure_4.png").stat().st_size > 1000


def test_recovery_bar_chart_groups_by_level(pipeline_dir, tmp_path):
    fig = build_figure(6, pipeline_dir)
    bars = fig.axes[0].patches
    assert len(bars) == 9
    assert len({patch.get_facecolor() for patch in bars}) == 4
    plt.close(fig)
    assert main(["--figure", "6", "--data", str(pipeline_dir), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "figure_6.png").stat().st_size > 1000


def test_empty_data_directory_is_an_explicit_error(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    out = tmp_path / "out"
    for figure in sorted(FIGURES):
        assert main(["--figure", str(figure), "--data", str(empty), "--out", str(out)]) == 1
        assert "error:" in capsys.readouterr().err
    assert not out.exists(), "an error run must not leave an image behind"
    with pytest.raises(FileNotFoundError):
        build_figure(2, empty)
    with pytest.raises(FileNotFoundError):
        build_figure(2, tmp_path / "nowhere")


def test_malformed_table_is_reported_with_columns(tmp_path, pipeline_dir):
    source = io.combo_dirs(pipeline_dir)[0]
    combo = tmp_path / "dNdY"
    (combo / "smooth").mkdir(parents=True)
    shutil.copy(source / "config.ini", combo / "config.ini")
    (combo / "smooth" / "run_00000.csv").write_text("t,bogus\n0.0,1.0\n")
    with pytest.raises(ValueError, match="lacks expected columns"):
        build_figure(2, tmp_path)


def test_rendering_never_touches_the_data_directory(pipeline_dir, analytic_dir, tmp_path):
    def snapshot(root):
        return {
            path: path.stat().st_mtime_ns
            for path in sorted(root.rglob("*"))
            if path.is_file()
        }

    before = snapshot(pipeline_dir), snapshot(analytic_dir)
    for figure in (2, 3, 4, 6):
        render(figure, pipeline_dir, tmp_path)
    render(5, analytic_dir, tmp_path)
    assert (snapshot(pipeline_dir), snapshot(analytic_dir)) == before
