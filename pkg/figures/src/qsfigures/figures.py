"""Figure builders over the pipeline's file contracts.

Each builder reads the delimited outputs for one figure id and assembles
the matplotlib panels; nothing is recomputed here beyond axis scaling.
Time axes are drawn in decay-time units for trajectory figures and in
drive-period units for the correlator grid, matching the source data
columns.  Rendering never writes into the data directory.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import io

# curves whose whole magnitude sits below this are treated as vanishing
# and left off the correlator panels; sits between the classifier's
# vanish/survive bands so no classified curve is ambiguous
VANISH_TOL = 1e-8

LEVEL_COLORS = {4: "#4c72b0", 3: "#dd8452", 2: "#55a868", 1: "#c44e52"}

plt.rcParams.update(
    {
        "figure.facecolor": "white",
        "axes.grid": True,
        "grid.alpha": 0.3,
        "legend.framealpha": 0.9,
        "font.size": 10,
    }
)


def _combo_color(index: int):
    return plt.get_cmap("tab10")(index % 10)


def _pair_kinds(label: str) -> tuple[str, str]:
    if len(label) != 4 or label[0] != "d" or label[2] != "d":
        raise ValueError(f"malformed combination label {label!r}")
    return label[1], label[3]


def _fig_single_runs(data_dir: Path):
    combos = [c for c in io.combo_dirs(data_dir) if io.run_files(c, "smooth")]
    if not combos:
        raise FileNotFoundError(
            f"no smoothing outputs under {data_dir}; run the simulate and "
            "smooth stages (or the reproduce command) first"
        )
    fig, axes = plt.subplots(
        len(combos), 1, figsize=(7.0, 2.4 * len(combos)), sharex=True, squeeze=False
    )
    for ax, combo in zip(axes[:, 0], combos):
        gamma = io.read_gamma(combo)
        smooth_path = io.run_files(combo, "smooth")[0]
        smooth = io.read_table(smooth_path)
        io.require_columns(smooth, ("t", "P_F", "P_S", "dP_S"), smooth_path)
        sim_path = combo / "sim" / smooth_path.name
        sim = io.read_table(sim_path)
        io.require_columns(sim, ("t", "P_T"), sim_path)

        t = smooth["t"] * gamma
        ax.plot(sim["t"] * gamma, sim["P_T"], color="0.55", lw=1.0, label="true")
        ax.plot(t, smooth["P_F"], color="C0", ls="--", lw=1.2, label="filtered")
        ax.fill_between(
            t,
            smooth["P_S"] - smooth["dP_S"],
            smooth["P_S"] + smooth["dP_S"],
            color="C3",
            alpha=0.25,
            lw=0,
        )
        ax.plot(t, smooth["P_S"], color="C3", lw=1.4, label="smoothed")
        ax.set_ylabel("purity")
        ax.set_title(f"{combo.name}, {smooth_path.stem}", loc="left", fontsize=9)
    axes[0, 0].legend(loc="lower left", fontsize=8, ncol=3)
    axes[-1, 0].set_xlabel(r"$t \,/\, T_\gamma$")
    fig.tight_layout()
    return fig


def _fig_retrodiction(data_dir: Path):
    effect_files = [
        path for combo in io.combo_dirs(data_dir) for path in io.run_files(combo, "effects")
    ]
    if not effect_files:
        raise FileNotFoundError(
            f"no effect tables under {data_dir}; the reproduce command for "
            "this figure writes them"
        )
    path = effect_files[0]
    combo = path.parent.parent
    gamma = io.read_gamma(combo)
    cols = io.read_table(path)
    io.require_columns(cols, ("t", "E00", "E11", "ReE01", "ImE01"), path)
    t = cols["t"] * gamma

    fig, (ax_d, ax_o) = plt.subplots(2, 1, figsize=(7.0, 5.2), sharex=True)
    ax_d.plot(t, cols["E00"], color="C0", label="excited-excited")
    ax_d.plot(t, cols["E11"], color="C1", label="ground-ground")
    ax_d.set_ylabel("effect diagonal")
    ax_d.legend(fontsize=8)
    ax_d.set_title(f"{combo.name}, {path.stem}", loc="left", fontsize=9)
    ax_o.plot(t, cols["ReE01"], color="C2", label="real off-diagonal")
    ax_o.plot(t, cols["ImE01"], color="C4", label="imaginary off-diagonal")
    ax_o.set_ylabel("effect coherence")
    ax_o.set_xlabel(r"$t \,/\, T_\gamma$")
    ax_o.legend(fontsize=8)
    fig.tight_layout()
    return fig


def _fig_average_purities(data_dir: Path):
    combos = [c for c in io.combo_dirs(data_dir) if (c / "metrics.csv").exists()]
    if not combos:
        raise FileNotFoundError(
            f"no metrics tables under {data_dir}; run the metrics stage first"
        )
    fig, (ax_s, ax_f) = plt.subplots(1, 2, figsize=(11.0, 4.2), sharex=True, sharey=True)
    for i, combo in enumerate(combos):
        gamma = io.read_gamma(combo)
        path = combo / "metrics.csv"
        cols = io.read_table(path)
        io.require_columns(cols, ("t", "PbarF", "dPbarF", "PbarS", "dPbarS"), path)
        t = cols["t"] * gamma
        color = _combo_color(i)
        for ax, mean, err in (
            (ax_s, cols["PbarS"], cols["dPbarS"]),
            (ax_f, cols["PbarF"], cols["dPbarF"]),
        ):
            ax.fill_between(t, mean - err, mean + err, color=color, alpha=0.18, lw=0)
            ax.plot(t, mean, color=color, lw=1.2, label=combo.name)
    lindblad = Path(data_dir) / "lindblad.csv"
    if lindblad.exists():
        cols = io.read_table(lindblad)
        io.require_columns(cols, ("t", "P_L"), lindblad)
        gamma = io.read_gamma(combos[0])
        for ax in (ax_s, ax_f):
            ax.plot(
                cols["t"] * gamma, cols["P_L"], color="k", ls=":", lw=1.2,
                label="unconditioned",
            )
    ax_s.set_title("smoothed ensemble average")
    ax_f.set_title("filtered ensemble average")
    for ax in (ax_s, ax_f):
        ax.set_xlabel(r"$t \,/\, T_\gamma$")
    ax_s.set_ylabel("average purity")
    ax_f.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    return fig


def _fig_correlators(data_dir: Path):
    table = io.read_correlators(Path(data_dir) / "correlators.csv")

    fig, (ax2, ax3) = plt.subplots(1, 2, figsize=(11.0, 4.2))
    ax2.set_gid("c2-panel")
    ax3.set_gid("c3-panel")

    # the two-time correlator is symmetric under swapping the channels, so
    # the nine combinations collapse to unordered kind pairs
    drawn: dict[str, str] = {}
    for pair in sorted(table):
        cols = table[pair]
        io.require_columns(cols, ("tau_over_T_Omega", "C2"), "correlators.csv")
        if np.nanmax(np.abs(cols["C2"])) <= VANISH_TOL:
            continue
        key = "-".join(sorted(_pair_kinds(pair)))
        if key in drawn:
            continue
        drawn[key] = pair
        ax2.plot(cols["tau_over_T_Omega"], cols["C2"], lw=1.4, label=key)
    if not drawn:
        raise ValueError("correlator table contains no surviving two-time curves")
    ax2.set_xlabel(r"$\tau \,/\, T_\Omega$")
    ax2.set_ylabel("two-time record correlator")
    ax2.legend(fontsize=8, title="channel pair", title_fontsize=8)

    for pair in sorted(table):
        cols = table[pair]
        tau = cols["tau_over_T_Omega"]
        for column, style, suffix in (
            ("C3_O_twice", "-", "observed twice"),
            ("C3_U_twice", "--", "unobserved twice"),
        ):
            y = cols[column]
            mask = np.isfinite(y)
            if not mask.any() or np.max(np.abs(y[mask])) <= VANISH_TOL:
                continue
            ax3.plot(tau[mask], y[mask], style, lw=1.0, label=f"{pair}, {suffix}")
    ax3.set_xlabel(r"$\tau \,/\, T_\Omega$")
    ax3.set_ylabel("three-time record correlator")
    ax3.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    return fig


def _fig_recovery_bars(data_dir: Path):
    summaries = io.load_summaries(data_dir)
    if not summaries:
        raise FileNotFoundError(
            f"no steady-state summaries under {data_dir}; run the metrics stage first"
        )
    levels = io.load_levels(data_dir)
    missing = sorted(set(summaries) - set(levels))
    if missing:
        raise ValueError(f"prediction.json lacks combinations {missing}")
    ordered = sorted(summaries, key=lambda c: (-levels[c], c))

    positions = []
    x = 0.0
    for i, combo in enumerate(ordered):
        if i and levels[combo] != levels[ordered[i - 1]]:
            x += 1.0  # visual gap between level groups
        positions.append(x)
        x += 1.0

    fig, (ax_a, ax_r) = plt.subplots(2, 1, figsize=(8.0, 6.4), sharex=True)
    for ax, key in ((ax_a, "R_A_ss"), (ax_r, "R_R_ss")):
        values, errors, colors = [], [], []
        for combo in ordered:
            value = summaries[combo].get(key)
            err = summaries[combo].get("d" + key)
            if value is None or err is None:
                raise ValueError(
                    f"{combo}: {key} is masked in summary.json, nothing to draw"
                )
            values.append(value)
            errors.append(err)
            colors.append(LEVEL_COLORS[levels[combo]])
        ax.bar(positions, values, color=colors, width=0.8)
        ax.errorbar(positions, values, yerr=errors, fmt="none", ecolor="0.2", capsize=3)
        ax.axhline(0.0, color="0.4", lw=0.8)
    ax_a.set_ylabel("steady absolute recovery")
    ax_r.set_ylabel("steady relative recovery")
    ax_r.set_xticks(positions)
    ax_r.set_xticklabels(ordered, rotation=45, ha="right")
    handles = [
        plt.Rectangle((0, 0), 1, 1, color=LEVEL_COLORS[level])
        for level in sorted(set(levels[c] for c in ordered), reverse=True)
    ]
    labels = [
        f"level {level}" for level in sorted(set(levels[c] for c in ordered), reverse=True)
    ]
    ax_a.legend(handles, labels, fontsize=8, ncol=len(handles))
    fig.tight_layout()
    return fig


@dataclasses.dataclass(frozen=True)
class FigureSpec:
    """One renderable figure: its id, input globs, and builder."""

    figure: int
    inputs: tuple[str, ...]
    time_unit: str
    build: callable


FIGURES = {
    2: FigureSpec(2, ("*/sim/run_*.csv", "*/smooth/run_*.csv"), "T_gamma", _fig_single_runs),
    3: FigureSpec(3, ("*/effects/run_*.csv",), "T_gamma", _fig_retrodiction),
    4: FigureSpec(4, ("*/metrics.csv", "lindblad.csv"), "T_gamma", _fig_average_purities),
    5: FigureSpec(5, ("correlators.csv",), "T_Omega", _fig_correlators),
    6: FigureSpec(6, ("*/summary.json", "prediction.json"), "none", _fig_recovery_bars),
}


def build_figure(figure: int, data_dir):
    """Assemble one figure from a pipeline output directory."""
    if figure not in FIGURES:
        raise ValueError(f"unknown figure id {figure}; expected one of {sorted(FIGURES)}")
    return FIGURES[figure].build(Path(data_dir))


def render(figure: int, data_dir, out_dir, dpi: int = 150) -> Path:
    """Build one figure and write it as a PNG under out_dir."""
    fig = build_figure(figure, data_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"figure_{figure}.png"
    try:
        fig.savefig(path, dpi=dpi)
    finally:
        plt.close(fig)
    return path
