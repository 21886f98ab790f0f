"""Ensemble purity averages and recovery statistics.

Averages run over the record ensemble at fixed time.  Every reported error
is the standard error of the estimated mean: the population variance across
runs divided by the number of runs, plus, when a per-run sampling variance
is supplied (the smoothed estimate carries one from its finite candidate
ensemble), its run average divided by the number of runs.

The relative recovery divides the purity gained by smoothing by the gap
between a reference purity and the filtered purity.  Its error comes from
first-order propagation through the ratio, with the numerator-denominator
covariance estimated across runs; time points where the denominator is
smaller than a floor are masked rather than reported.

Steady-window summaries average over the stored times inside the window but
count only one independent sample per decorrelation time, so neighbouring
time points do not masquerade as independent evidence.
"""

from __future__ import annotations

import dataclasses

import numpy as np

__all__ = [
    "PurityCurve",
    "RecoveryCurves",
    "SteadyValue",
    "purity_from_bloch",
    "yz_projection_purity",
    "average_purity",
    "recovery_curves",
    "steady_average",
    "steady_ratio_average",
]


def purity_from_bloch(bloch: np.ndarray) -> np.ndarray:
    """Purity (1 + |b|^2) / 2 along the last axis."""
    b = np.asarray(bloch, dtype=float)
    return 0.5 * (1.0 + np.sum(b * b, axis=-1))


def yz_projection_purity(bloch: np.ndarray) -> np.ndarray:
    """Purity of the Bloch vector with its x component discarded.

    The natural reference for estimates that are confined to the y-z plane
    by symmetry while the underlying state is not.
    """
    b = np.asarray(bloch, dtype=float)
    return 0.5 * (1.0 + b[..., 1] ** 2 + b[..., 2] ** 2)


@dataclasses.dataclass
class PurityCurve:
    """Mean of a per-run curve with the variance of that mean."""

    times: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    n_runs: int

    @property
    def err(self) -> np.ndarray:
        return np.sqrt(self.var)


def average_purity(
    times: np.ndarray, per_run: np.ndarray, per_run_var: np.ndarray | None = None
) -> PurityCurve:
    """Average a per-run curve of shape (n_runs, n_times) over runs."""
    per_run = np.asarray(per_run, dtype=float)
    if per_run.ndim != 2:
        raise ValueError("expected one curve per run, shape (n_runs, n_times)")
    n = per_run.shape[0]
    mean = per_run.mean(axis=0)
    var = per_run.var(axis=0) / n
    if per_run_var is not None:
        var = var + np.asarray(per_run_var, dtype=float).mean(axis=0) / n
    return PurityCurve(np.asarray(times, dtype=float), mean, var, n)


@dataclasses.dataclass
class RecoveryCurves:
    """Absolute and relative purity recovery on the stored time grid.

    The relative curve is NaN wherever mask is False (denominator smaller
    than the configured floor).
    """

    times: np.ndarray
    absolute: np.ndarray
    var_absolute: np.ndarray
    relative: np.ndarray
    var_relative: np.ndarray
    mask: np.ndarray
    n_runs: int


def recovery_curves(
    times: np.ndarray,
    purity_smooth: np.ndarray,
    purity_filter: np.ndarray,
    purity_reference: np.ndarray,
    var_smooth: np.ndarray | None = None,
    denominator_floor: float = 1e-3,
) -> RecoveryCurves:
    """Recovery statistics from per-run purity curves, all (n_runs, n_times).

    The absolute recovery is the run-averaged smoothed-minus-filtered
    purity, with the variance taken of the paired per-run difference so
    that common fluctuations cancel.  The relative recovery divides by the
    run-averaged reference-minus-filtered gap.
    """
    ps = np.asarray(purity_smooth, dtype=float)
    pf = np.asarray(purity_filter, dtype=float)
    pr = np.asarray(purity_reference, dtype=float)
    if ps.shape != pf.shape or ps.shape != pr.shape:
        raise ValueError("per-run purity arrays must share a shape")
    n = ps.shape[0]

    num = ps - pf  # paired, per run
    den = pr - pf
    mean_num = num.mean(axis=0)
    mean_den = den.mean(axis=0)
    var_num = num.var(axis=0) / n
    if var_smooth is not None:
        var_num = var_num + np.asarray(var_smooth, dtype=float).mean(axis=0) / n
    var_den = den.var(axis=0) / n
    cov_nd = ((num - mean_num) * (den - mean_den)).mean(axis=0) / n

    mask = mean_den > denominator_floor
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mask, mean_num / mean_den, np.nan)
        var_ratio = np.where(
            mask,
            (var_num + ratio**2 * var_den - 2.0 * ratio * cov_nd) / mean_den**2,
            np.nan,
        )
    # propagated ratio variance can go slightly negative from the
    # covariance term at float precision
    var_ratio = np.where(mask, np.clip(var_ratio, 0.0, None), np.nan)
    return RecoveryCurves(
        times=np.asarray(times, dtype=float),
        absolute=mean_num,
        var_absolute=var_num,
        relative=ratio,
        var_relative=var_ratio,
        mask=mask,
        n_runs=n,
    )


@dataclasses.dataclass
class SteadyValue:
    value: float
    err: float
    n_times: int
    n_effective: float


def _window_indices(times, window, mask=None):
    times = np.asarray(times, dtype=float)
    lo, hi = window
    inside = (times >= lo - 1e-12) & (times <= hi + 1e-12)
    if mask is not None:
        inside &= np.asarray(mask, dtype=bool)
    return np.flatnonzero(inside)


def steady_average(
    times: np.ndarray,
    values: np.ndarray,
    variances: np.ndarray,
    window: tuple[float, float],
    t_corr: float,
    mask: np.ndarray | None = None,
) -> SteadyValue:
    """Average a curve over a late-time window with honest error counting.

    The effective number of independent samples is the window length over
    the decorrelation time, plus one for the first sample; both the scatter
    of the curve inside the window and the propagated pointwise variances
    are divided by it.
    """
    idx = _window_indices(times, window, mask)
    if idx.size == 0:
        return SteadyValue(np.nan, np.nan, 0, 0.0)
    vals = np.asarray(values, dtype=float)[idx]
    pvar = np.asarray(variances, dtype=float)[idx]
    n_eff = (window[1] - window[0]) / t_corr + 1.0
    mean = vals.mean()
    scatter = vals.var()
    err2 = (scatter + pvar.mean()) / n_eff
    return SteadyValue(float(mean), float(np.sqrt(err2)), int(idx.size), float(n_eff))


def steady_ratio_average(
    curves: RecoveryCurves, window: tuple[float, float], t_corr: float
) -> tuple[SteadyValue, SteadyValue]:
    """Steady-window summaries of the absolute and relative recovery."""
    absolute = steady_average(
        curves.times, curves.absolute, curves.var_absolute, window, t_corr
    )
    relative = steady_average(
        curves.times,
        curves.relative,
        curves.var_relative,
        window,
        t_corr,
        mask=curves.mask,
    )
    return absolute, relative
