"""Smoothed state estimation from a kept record and an unobserved-channel
ensemble.

The estimate at time t averages candidate states over hypothetical
unobserved records, weighted by how well each candidate explains the whole
observed record:

* forward, each candidate evolves under the shared observed record and its
  own reference-sampled unobserved record; the running trace of its
  unnormalized state is the likelihood ratio against the reference, kept in
  log form,
* backward, an effect operator is pulled through the adjoint of the
  filtering map, which summarizes the yet-unseen part of the observed
  record,
* the smoothing weight of candidate i at time t is then
  exp(log w_i(t)) * Tr[E(t) rho_i(t)], normalized across the ensemble.

Weights are never resampled; the effective sample size is reported at every
output time so a collapsing ensemble is visible rather than hidden.  All
error bars on ensemble averages use the variance-of-the-mean convention for
normalized importance weights (a sum-of-squared-weights prefactor).
"""

from __future__ import annotations

import dataclasses
import math
import warnings

import numpy as np

from . import qubit
from .config import SimConfig, combination_index
from .records import Record
from .unravelling import (
    TAG_CANDIDATE,
    StepContext,
    _batch_bloch,
    _batch_traces,
    _hermitize_batch,
    filter_trajectory,
    make_stream,
)

__all__ = [
    "EffectTrajectory",
    "CandidateTrajectories",
    "SmoothingEnsemble",
    "SmoothedRun",
    "retrofilter",
    "retrofilter_batch",
    "candidate_record",
    "propagate_candidates",
    "build_ensemble",
    "filter_weights",
    "smooth_weights",
    "smoothed_state",
    "smoothed_covariance",
    "bloch_cov_to_operator",
    "smoothed_purity_variance",
    "effective_sample_size",
    "smooth_run",
]


# ---------------------------------------------------------------------------
# backward pass


@dataclasses.dataclass
class EffectTrajectory:
    """Retrodictive effect operators on the stored time grid.

    The final-time effect is the identity; earlier operators are rescaled
    to unit trace as the backward pass proceeds.  Only ratios at a fixed
    time carry meaning for the smoothing weights, so the scale is free.
    """

    times: np.ndarray
    effects: np.ndarray  # (n_stored, 2, 2)


def retrofilter(record_observed: Record, config: SimConfig) -> EffectTrajectory:
    """Propagate the effect operator backward through one observed record."""
    if record_observed.n_steps == 0:
        return EffectTrajectory(np.zeros(1), qubit.IDENTITY[None, :, :].copy())
    times, effects = retrofilter_batch([record_observed], config)
    return EffectTrajectory(times, effects[0])


def retrofilter_batch(records, config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Backward effect pass for a batch of observed records.

    Returns (stored times, effects of shape (n_records, n_stored, 2, 2)),
    every effect renormalized to unit trace.
    """
    ctx = StepContext(config)
    records = list(records)
    for rec in records:
        if rec.detector != ctx.det_o or rec.n_steps != config.n_steps:
            raise ValueError("record does not match the configured observed channel")
    values = np.stack([rec.values.astype(np.float64) for rec in records])
    n_runs = len(records)
    n_steps = config.n_steps

    effects = np.repeat(qubit.IDENTITY[None, :, :], n_runs, axis=0)
    stored = np.empty((n_runs, config.n_stored, 2, 2), dtype=complex)
    stored[:, -1] = effects
    for t in range(n_steps - 1, -1, -1):
        effects = ctx.adjoint_unobserved_mean(effects)
        effects = ctx.adjoint_observed_each(effects, values[:, t])
        traces = _batch_traces(effects)
        if np.any(traces <= 0.0):
            raise ValueError("effect operator lost positivity going backward")
        effects = effects / traces[:, None, None]
        if t % config.store_every == 0:
            effects = _hermitize_batch(effects)
            stored[:, t // config.store_every] = effects
    return config.stored_times(), stored


# ---------------------------------------------------------------------------
# candidate ensembles, explicit form


def candidate_record(config: SimConfig, run_index: int, candidate: int) -> Record:
    """Reference-sampled unobserved record for one candidate substream."""
    ctx = StepContext(config)
    key = (config.seed, combination_index(config.combination), run_index,
           TAG_CANDIDATE, candidate)
    rng = make_stream(*key)
    block = _candidate_block(rng, 1, config.n_steps, ctx)
    return Record(ctx.det_u, config.dt, _as_record_values(block[0], ctx), seed_key=key)


def _candidate_block(rng, n: int, n_steps: int, ctx: StepContext) -> np.ndarray:
    """Raw unobserved-channel outcomes for n candidates, one row each."""
    if ctx.det_u.diffusive:
        return math.sqrt(ctx.dt) * rng.standard_normal((n, n_steps))
    return (rng.random((n, n_steps)) < ctx.click_rate_u * ctx.dt).astype(np.float64)


def _as_record_values(row: np.ndarray, ctx: StepContext) -> np.ndarray:
    return row if ctx.det_u.diffusive else row.astype(np.uint8)


@dataclasses.dataclass
class CandidateTrajectories:
    """Candidate states and log filter weights on the stored grid."""

    times: np.ndarray
    states: np.ndarray  # (n_stored, n_candidates, 2, 2), normalized
    log_weights: np.ndarray  # (n_stored, n_candidates)


def propagate_candidates(
    record_observed: Record, candidate_records, config: SimConfig
) -> CandidateTrajectories:
    """Evolve an explicit candidate ensemble under one observed record.

    Every candidate runs under the shared observed record and its own
    unobserved record; log weights accumulate the per-step trace factors.
    A candidate hitting a zero-probability outcome is dropped: its weight
    becomes minus infinity and its state is parked in the ground state.
    """
    ctx = StepContext(config)
    if record_observed.detector != ctx.det_o or record_observed.n_steps != config.n_steps:
        raise ValueError("observed record does not match the configuration")
    candidate_records = list(candidate_records)
    for rec in candidate_records:
        if rec.detector != ctx.det_u or rec.n_steps != config.n_steps:
            raise ValueError("candidate record does not match the unobserved channel")
    u_values = np.stack([rec.values.astype(np.float64) for rec in candidate_records])
    o_values = record_observed.values.astype(np.float64)
    n = len(candidate_records)

    states = np.repeat(config.initial_rho()[None, :, :], n, axis=0)
    logw = np.zeros(n)
    out_states = np.empty((config.n_stored, n, 2, 2), dtype=complex)
    out_logw = np.empty((config.n_stored, n))
    out_states[0] = states
    out_logw[0] = logw
    for t in range(config.n_steps):
        states = ctx.apply_observed_shared(states, o_values[t])
        states = ctx.apply_unobserved_each(states, u_values[:, t])
        states, logw = _renormalize_with_weights(states, logw)
        if (t + 1) % config.store_every == 0:
            k = (t + 1) // config.store_every
            states = _hermitize_batch(states)
            out_states[k] = states
            out_logw[k] = logw
    return CandidateTrajectories(config.stored_times(), out_states, out_logw)


def _renormalize_with_weights(states, logw):
    """Shift the per-step trace into the log weights, dropping dead paths."""
    traces = _batch_traces(states)
    dead = traces <= 0.0
    if np.any(dead):
        states[dead] = qubit.GROUND
        traces = np.where(dead, 1.0, traces)
        logw = np.where(dead, -np.inf, logw)
    with np.errstate(divide="ignore"):
        logw = logw + np.log(traces)
    return states / traces[:, None, None], logw


@dataclasses.dataclass
class SmoothingEnsemble:
    """Everything needed to form smoothed estimates at any stored time."""

    times: np.ndarray
    states: np.ndarray  # (n_stored, n_candidates, 2, 2)
    log_weights: np.ndarray  # (n_stored, n_candidates)
    effects: np.ndarray  # (n_stored, 2, 2)


def build_ensemble(
    record_observed: Record, candidate_records, config: SimConfig
) -> SmoothingEnsemble:
    cands = propagate_candidates(record_observed, candidate_records, config)
    eff = retrofilter(record_observed, config)
    return SmoothingEnsemble(cands.times, cands.states, cands.log_weights, eff.effects)


# ---------------------------------------------------------------------------
# weights and moments at one time


def _normalized_from_log(logw: np.ndarray) -> np.ndarray:
    top = np.max(logw)
    if not np.isfinite(top):
        raise RuntimeError(
            "candidate ensemble collapsed: every weight is zero "
            f"(max log weight {top})"
        )
    w = np.exp(logw - top)
    return w / w.sum()


def filter_weights(log_weights_t: np.ndarray) -> np.ndarray:
    """Normalized filtering weights from accumulated log trace factors."""
    return _normalized_from_log(np.asarray(log_weights_t, dtype=float))


def smooth_weights(
    log_weights_t: np.ndarray, effect_t: np.ndarray, states_t: np.ndarray
) -> np.ndarray:
    """Normalized smoothing weights at one time.

    Multiplies each candidate's filtering weight by the overlap
    Tr[E(t) rho_i(t)] with the retrodictive effect; a common rescaling of
    the effect or a common shift of the log weights leaves the result
    unchanged.
    """
    overlaps = np.einsum("ij,bji->b", effect_t, states_t).real
    overlaps = np.clip(overlaps, 0.0, None)
    with np.errstate(divide="ignore"):
        return _normalized_from_log(np.asarray(log_weights_t) + np.log(overlaps))


def smoothed_state(states_t: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted candidate average, a valid state by convexity."""
    out = np.einsum("b,bij->ij", weights, states_t)
    return 0.5 * (out + out.conj().T)


def smoothed_covariance(states_t: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Bloch-component covariance of the weighted-mean estimate.

    Returns the population covariance of the candidate Bloch vectors scaled
    by the sum of squared normalized weights, i.e. the variance of the mean
    for importance-weighted sampling.
    """
    if len(weights) < 2:
        warnings.warn("covariance of a single-candidate ensemble is identically zero")
        return np.zeros((3, 3))
    bloch = _batch_bloch(states_t)
    mean = weights @ bloch
    centered = bloch - mean
    pop = np.einsum("b,bi,bj->ij", weights, centered, centered)
    return float(np.sum(weights**2)) * pop


def bloch_cov_to_operator(cov: np.ndarray) -> np.ndarray:
    """Embed a Bloch covariance as an operator-entry covariance.

    The (4, 4) result lives on the tensor-square space, so that for any
    Pauli pair Tr[(sigma_a kron sigma_b) out] recovers cov[a, b].
    """
    paulis = (qubit.SIGMA_X, qubit.SIGMA_Y, qubit.SIGMA_Z)
    out = np.zeros((4, 4), dtype=complex)
    for a in range(3):
        for b in range(3):
            out += 0.25 * cov[a, b] * np.kron(paulis[a], paulis[b])
    return out


def smoothed_purity_variance(bloch_mean: np.ndarray, cov: np.ndarray) -> float:
    """First-order variance of the purity (1 + |b|^2) / 2 of the estimate.

    Uses the diagonal Bloch variances only, matching the error convention
    used for the reported purity bands.
    """
    b = np.asarray(bloch_mean, dtype=float)
    out = b[0] ** 2 * cov[0, 0] + b[1] ** 2 * cov[1, 1] + b[2] ** 2 * cov[2, 2]
    return float(max(out, 0.0))


def effective_sample_size(weights: np.ndarray) -> float:
    return float(1.0 / np.sum(np.asarray(weights) ** 2))


# ---------------------------------------------------------------------------
# fused per-run pipeline


@dataclasses.dataclass
class SmoothedRun:
    """Filtered and smoothed summaries of one run on the stored grid."""

    run_index: int
    times: np.ndarray
    bloch_filter: np.ndarray  # (n_stored, 3), direct filter
    bloch_smooth: np.ndarray  # (n_stored, 3)
    cov_smooth: np.ndarray  # (n_stored, 3, 3)
    ess_smooth: np.ndarray  # (n_stored,)
    bloch_filter_mc: np.ndarray  # (n_stored, 3), candidate average
    ess_filter: np.ndarray  # (n_stored,)

    @property
    def purity_filter(self) -> np.ndarray:
        return 0.5 * (1.0 + np.einsum("ij,ij->i", self.bloch_filter, self.bloch_filter))

    @property
    def purity_filter_mc(self) -> np.ndarray:
        return 0.5 * (
            1.0 + np.einsum("ij,ij->i", self.bloch_filter_mc, self.bloch_filter_mc)
        )

    @property
    def purity_smooth(self) -> np.ndarray:
        return 0.5 * (1.0 + np.einsum("ij,ij->i", self.bloch_smooth, self.bloch_smooth))

    @property
    def var_purity_smooth(self) -> np.ndarray:
        b2 = self.bloch_smooth**2
        diag = np.stack(
            [self.cov_smooth[:, 0, 0], self.cov_smooth[:, 1, 1], self.cov_smooth[:, 2, 2]],
            axis=-1,
        )
        # exact zeros can round to tiny negatives in the streamed moments
        return np.maximum(np.einsum("ij,ij->i", b2, diag), 0.0)


class _StreamMoments:
    """Log-sum-exp accumulators for weighted Bloch moments per stored time.

    Chunks of candidates are reduced locally and merged under a running
    maximum so the result does not depend on the chunk split.
    """

    def __init__(self, n_stored: int, second_order: bool):
        self.m = np.full(n_stored, -np.inf)
        self.s0 = np.zeros(n_stored)
        self.s1 = np.zeros((n_stored, 3))
        self.s2 = np.zeros((n_stored, 3, 3)) if second_order else None
        self.q = np.zeros(n_stored)

    def merge(self, other: "_StreamMoments") -> None:
        top = np.maximum(self.m, other.m)
        with np.errstate(invalid="ignore"):
            r_self = np.where(np.isfinite(self.m), np.exp(self.m - top), 0.0)
            r_other = np.where(np.isfinite(other.m), np.exp(other.m - top), 0.0)
        self.s0 = self.s0 * r_self + other.s0 * r_other
        self.s1 = self.s1 * r_self[:, None] + other.s1 * r_other[:, None]
        if self.s2 is not None:
            self.s2 = self.s2 * r_self[:, None, None] + other.s2 * r_other[:, None, None]
        self.q = self.q * r_self**2 + other.q * r_other**2
        self.m = top

    def add(self, k: int, logw: np.ndarray, bloch: np.ndarray) -> None:
        top = logw.max()
        if not np.isfinite(top):
            return
        e = np.exp(logw - top)
        self.m[k] = top
        self.s0[k] = e.sum()
        self.s1[k] = e @ bloch
        if self.s2 is not None:
            self.s2[k] = np.einsum("b,bi,bj->ij", e, bloch, bloch)
        self.q[k] = np.sum(e * e)


def smooth_run(
    record_observed: Record,
    config: SimConfig,
    run_index: int,
    effects: np.ndarray | None = None,
    bloch_filter: np.ndarray | None = None,
) -> SmoothedRun:
    """Full smoothing pass for one observed record.

    Candidate records are regenerated chunk by chunk from their documented
    substreams, so memory stays bounded in the ensemble size and the result
    is identical for any chunk size.

    Args:
        record_observed: the kept record.
        config: run configuration; n_candidates sets the ensemble size.
        run_index: seeds the candidate substreams.
        effects: optional precomputed (n_stored, 2, 2) retrodictive effects.
        bloch_filter: optional precomputed direct-filter Bloch trajectory.
    """
    ctx = StepContext(config)
    if effects is None:
        effects = retrofilter(record_observed, config).effects
    if bloch_filter is None:
        _, bloch_filter = filter_trajectory(record_observed, config)

    n_stored = config.n_stored
    smooth_acc = _StreamMoments(n_stored, second_order=True)
    filt_acc = _StreamMoments(n_stored, second_order=False)
    o_values = record_observed.values.astype(np.float64)
    combo = combination_index(config.combination)

    start = 0
    while start < config.n_candidates:
        size = min(config.candidate_chunk, config.n_candidates - start)
        block = np.empty((size, config.n_steps))
        for i in range(size):
            rng = make_stream(config.seed, combo, run_index, TAG_CANDIDATE, start + i)
            block[i] = _candidate_block(rng, 1, config.n_steps, ctx)[0]

        states = np.repeat(config.initial_rho()[None, :, :], size, axis=0)
        logw = np.zeros(size)
        chunk_s = _StreamMoments(n_stored, second_order=True)
        chunk_f = _StreamMoments(n_stored, second_order=False)
        _accumulate(chunk_s, chunk_f, 0, states, logw, effects[0])
        for t in range(config.n_steps):
            states = ctx.apply_observed_shared(states, o_values[t])
            states = ctx.apply_unobserved_each(states, block[:, t])
            states, logw = _renormalize_with_weights(states, logw)
            if (t + 1) % config.store_every == 0:
                k = (t + 1) // config.store_every
                _accumulate(chunk_s, chunk_f, k, states, logw, effects[k])
        smooth_acc.merge(chunk_s)
        filt_acc.merge(chunk_f)
        start += size

    return _finalize_run(config, run_index, bloch_filter, smooth_acc, filt_acc)


def _accumulate(chunk_s, chunk_f, k, states, logw, effect):
    bloch = _batch_bloch(states)
    chunk_f.add(k, logw, bloch)
    overlaps = np.einsum("ij,bji->b", effect, states).real
    with np.errstate(divide="ignore", invalid="ignore"):
        logw_s = logw + np.log(np.clip(overlaps, 0.0, None))
    chunk_s.add(k, logw_s, bloch)


def _finalize_run(config, run_index, bloch_filter, smooth_acc, filt_acc) -> SmoothedRun:
    n_stored = config.n_stored
    bloch_smooth = np.empty((n_stored, 3))
    cov_smooth = np.empty((n_stored, 3, 3))
    ess_smooth = np.empty(n_stored)
    bloch_mc = np.empty((n_stored, 3))
    ess_filter = np.empty(n_stored)
    for k in range(n_stored):
        if smooth_acc.s0[k] <= 0.0 or not np.isfinite(smooth_acc.m[k]):
            raise RuntimeError(
                f"candidate ensemble collapsed at stored index {k} "
                f"(time {config.stored_times()[k]:.4g})"
            )
        w0 = smooth_acc.s0[k]
        mean = smooth_acc.s1[k] / w0
        second = smooth_acc.s2[k] / w0
        votm = smooth_acc.q[k] / w0**2
        bloch_smooth[k] = mean
        cov_smooth[k] = votm * (second - np.outer(mean, mean))
        ess_smooth[k] = 1.0 / votm
        f0 = filt_acc.s0[k]
        bloch_mc[k] = filt_acc.s1[k] / f0
        ess_filter[k] = f0**2 / filt_acc.q[k]
    return SmoothedRun(
        run_index=run_index,
        times=config.stored_times(),
        bloch_filter=np.asarray(bloch_filter),
        bloch_smooth=bloch_smooth,
        cov_smooth=cov_smooth,
        ess_smooth=ess_smooth,
        bloch_filter_mc=bloch_mc,
        ess_filter=ess_filter,
    )
