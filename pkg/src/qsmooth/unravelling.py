"""Conditional evolution of the driven qubit under two decay channels.

One channel is monitored (kinds: event detection 'N', quadrature detection
'X' or 'Y'), the other is either monitored by a hypothetical observer or
averaged over.  Every step applies a single Kraus factor per channel,

    event, no click   K = 1 - i H dt - c^dag c dt / 2
    event, click      K = c
    quadrature        K = 1 - i H dt - c^dag c dt / 2 + dJ c

with c the lowering operator scaled by the root of the channel rate (and
by the local-oscillator phase for quadratures) and the drive Hamiltonian
carried by the observed factor only.  Maps come scaled against a declared
reference (ostensible) outcome distribution: a click map is divided by the
reference click probability, a no-click map by its complement, while
quadrature maps are left as is because their reference is the zero-mean
Wiener density.  The running trace of an unnormalized state then
accumulates exactly the likelihood ratio of the record against the
reference, which is the weight needed by the smoothing ensembles.

Random substreams
-----------------
All randomness descends from ``SeedSequence((seed, combination_index,
run_index, tag, member))``:

* tag 0, one stream per run: first a length-n_steps block for the observed
  record, then one for the unobserved record (uniforms for event channels,
  standard normals for quadratures),
* tag 1, member i: the ostensible record of candidate i, one
  length-n_steps block.

Any run or candidate is therefore reproducible in isolation.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import qubit
from .config import DetectorConfig, SimConfig, combination_index
from .records import Record

TAG_TRUE = 0
TAG_CANDIDATE = 1

_TINY = 1e-300


def make_stream(*key: int) -> np.random.Generator:
    """Generator for the documented substream key (all components ints)."""
    return np.random.default_rng(np.random.SeedSequence(tuple(int(k) for k in key)))


def channel_operator(detector: DetectorConfig) -> np.ndarray:
    """Lowering operator scaled by root rate and local-oscillator phase."""
    c = math.sqrt(detector.rate) * qubit.SIGMA_MINUS
    if detector.phase:
        c = c * np.exp(-1j * detector.phase)
    return c


def smooth_base_operator(
    detector: DetectorConfig, omega: float, dt: float, include_hamiltonian: bool = True
) -> np.ndarray:
    """No-click / deterministic Kraus factor for one channel over one step."""
    c = channel_operator(detector)
    base = qubit.IDENTITY - 0.5 * dt * (c.conj().T @ c)
    if include_hamiltonian:
        base = base - 0.5j * omega * dt * qubit.SIGMA_X
    return base


def measurement_map(
    detector: DetectorConfig,
    outcome,
    omega: float,
    dt: float,
    include_hamiltonian: bool = True,
    click_rate: float | None = None,
) -> np.ndarray:
    """One-step measurement operation as a (4, 4) superoperator.

    For event detection ``outcome`` is 0 or 1 and ``click_rate`` must give
    the reference click rate used for likelihood scaling.  For quadrature
    detection ``outcome`` is the measured increment and the reference is
    the zero-mean Wiener density, so no extra scaling appears.
    """
    base = smooth_base_operator(detector, omega, dt, include_hamiltonian)
    c = channel_operator(detector)
    if detector.diffusive:
        return qubit.conjugation(base + float(outcome) * c)
    if click_rate is None:
        raise ValueError("event detection needs a reference click rate")
    if not 0.0 < click_rate * dt < 1.0:
        raise ValueError(f"reference click probability {click_rate * dt} not in (0, 1)")
    if outcome:
        return qubit.conjugation(c) / click_rate
    return qubit.conjugation(base) / (1.0 - click_rate * dt)


def sample_true_increment(
    rho: np.ndarray, detector: DetectorConfig, dt: float, rng: np.random.Generator
):
    """Draw one outcome from the physical record statistics for state rho.

    Event channels return 0 or 1 with click probability Tr[c^dag c rho] dt;
    quadrature channels return Tr[(c + c^dag) rho] dt plus a Wiener
    increment of variance dt.
    """
    c = channel_operator(detector)
    if detector.diffusive:
        mean = np.trace((c + c.conj().T) @ rho).real
        return float(mean * dt + math.sqrt(dt) * rng.standard_normal())
    p = np.trace(c.conj().T @ c @ rho).real * dt
    if p > 1.0:
        raise ValueError(f"click probability {p} exceeds 1, dt too coarse")
    return int(rng.random() < p)


def sample_ostensible_increment(
    detector: DetectorConfig,
    dt: float,
    rng: np.random.Generator,
    click_rate: float | None = None,
):
    """Draw one outcome from the state-independent reference distribution."""
    if detector.diffusive:
        return float(math.sqrt(dt) * rng.standard_normal())
    if click_rate is None:
        raise ValueError("event detection needs a reference click rate")
    if not 0.0 < click_rate * dt < 1.0:
        raise ValueError(f"reference click probability {click_rate * dt} not in (0, 1)")
    return int(rng.random() < click_rate * dt)


def lindblad_liouvillian(config: SimConfig) -> np.ndarray:
    """Unconditioned generator with both channels as plain dissipators."""
    return qubit.liouvillian(
        config.omega,
        [
            (config.gamma_observed, qubit.SIGMA_MINUS),
            (config.gamma_unobserved, qubit.SIGMA_MINUS),
        ],
    )


class StepContext:
    """Per-config constants for the one-step maps, built once and reused."""

    def __init__(self, config: SimConfig):
        self.config = config
        dt = config.dt
        self.dt = dt
        self.det_o = config.detector_observed
        self.det_u = config.detector_unobserved
        self.c_o = channel_operator(self.det_o)
        self.c_u = channel_operator(self.det_u)
        self.base_o = smooth_base_operator(self.det_o, config.omega, dt, True)
        self.base_u = smooth_base_operator(self.det_u, config.omega, dt, False)
        self.rho_ss = qubit.steady_state(lindblad_liouvillian(config))
        p_excited = max(self.rho_ss[0, 0].real, 0.0)
        self.click_rate_o = (
            config.ostensible_rate_observed
            if config.ostensible_rate_observed is not None
            else self.det_o.rate * p_excited
        )
        self.click_rate_u = (
            config.ostensible_rate_unobserved
            if config.ostensible_rate_unobserved is not None
            else self.det_u.rate * p_excited
        )
        for lam in (self.click_rate_o, self.click_rate_u):
            if lam < 0.0 or lam * dt >= 1.0:
                raise ValueError(f"reference click probability {lam * dt} not in [0, 1)")

    # single-state steps -------------------------------------------------

    def _kraus(self, observed: bool, outcome) -> tuple[np.ndarray, float]:
        """Kraus factor and map scale for one channel outcome."""
        c = self.c_o if observed else self.c_u
        base = self.base_o if observed else self.base_u
        det = self.det_o if observed else self.det_u
        lam = self.click_rate_o if observed else self.click_rate_u
        if det.diffusive:
            return base + float(outcome) * c, 1.0
        if outcome:
            if lam <= 0.0:
                raise ValueError("click weighted against a zero reference click rate")
            return c, 1.0 / lam
        return base, 1.0 / (1.0 - lam * self.dt)

    def true_step(self, rho: np.ndarray, obs_outcome, unobs_outcome) -> np.ndarray:
        """Advance the fully conditioned state by one step, renormalized."""
        k_o, _ = self._kraus(True, obs_outcome)
        k_u, _ = self._kraus(False, unobs_outcome)
        k = k_u @ k_o
        out = k @ rho @ k.conj().T
        tr = np.trace(out).real
        if tr <= 0.0:
            raise ValueError("record outcome has zero probability from this state")
        out = out / tr
        return 0.5 * (out + out.conj().T)

    def alice_filter_step(self, rho: np.ndarray, obs_outcome) -> tuple[np.ndarray, float]:
        """One filtering step: observed outcome map, unobserved channel averaged.

        Returns the renormalized state and the log of the trace factor, the
        per-step log likelihood ratio of the observed outcome.
        """
        k_o, scale = self._kraus(True, obs_outcome)
        mid = scale * (k_o @ rho @ k_o.conj().T)
        out = (
            self.base_u @ mid @ self.base_u.conj().T
            + self.dt * (self.c_u @ mid @ self.c_u.conj().T)
        )
        tr = np.trace(out).real
        if tr <= 0.0:
            raise ValueError("record outcome has zero probability under the filter")
        out = out / tr
        return 0.5 * (out + out.conj().T), math.log(tr)

    def effect_step_backward(self, effect: np.ndarray, obs_outcome) -> np.ndarray:
        """Pull the effect operator one step back through the filtering map.

        Applies the Hilbert-Schmidt adjoint of the map used in
        :meth:`alice_filter_step`; the result is unnormalized and the caller
        is expected to rescale.  Pairing is exact: Tr[E(t) rho(t)] along an
        unnormalized filtered trajectory does not depend on t.
        """
        mid = (
            self.base_u.conj().T @ effect @ self.base_u
            + self.dt * (self.c_u.conj().T @ effect @ self.c_u)
        )
        k_o, scale = self._kraus(True, obs_outcome)
        return scale * (k_o.conj().T @ mid @ k_o)

    # batched helpers, states shaped (batch, 2, 2) ------------------------

    def apply_observed_shared(self, states: np.ndarray, outcome) -> np.ndarray:
        """Observed-channel map with one outcome shared by the whole batch."""
        k, scale = self._kraus(True, outcome)
        out = k @ states @ k.conj().T
        return out if scale == 1.0 else out * scale

    def apply_observed_each(self, states: np.ndarray, outcomes: np.ndarray) -> np.ndarray:
        """Observed-channel map with one outcome per batch member."""
        return self._apply_each(states, outcomes, self.det_o, self.c_o, self.base_o,
                                self.click_rate_o)

    def apply_unobserved_each(self, states: np.ndarray, outcomes: np.ndarray) -> np.ndarray:
        """Unobserved-channel map with one outcome per batch member."""
        return self._apply_each(states, outcomes, self.det_u, self.c_u, self.base_u,
                                self.click_rate_u)

    def _apply_each(self, states, outcomes, det, c, base, lam):
        if det.diffusive:
            ks = base[None, :, :] + outcomes[:, None, None] * c[None, :, :]
            return ks @ states @ ks.conj().transpose(0, 2, 1)
        out = (base @ states @ base.conj().T) / (1.0 - lam * self.dt)
        clicked = np.nonzero(outcomes)[0]
        if clicked.size:
            out[clicked] = (c @ states[clicked] @ c.conj().T) / lam
        return out

    def apply_unobserved_mean(self, states: np.ndarray) -> np.ndarray:
        """Unobserved channel averaged over its reference outcomes.

        Equals the exact mixture of the scaled outcome maps for both channel
        kinds, so filtering never depends on the unobserved detector kind.
        """
        return (
            self.base_u @ states @ self.base_u.conj().T
            + self.dt * (self.c_u @ states @ self.c_u.conj().T)
        )

    def adjoint_unobserved_mean(self, effects: np.ndarray) -> np.ndarray:
        return (
            self.base_u.conj().T @ effects @ self.base_u
            + self.dt * (self.c_u.conj().T @ effects @ self.c_u)
        )

    def adjoint_observed_each(self, effects: np.ndarray, outcomes: np.ndarray) -> np.ndarray:
        if self.det_o.diffusive:
            ks = self.base_o[None, :, :] + outcomes[:, None, None] * self.c_o[None, :, :]
            return ks.conj().transpose(0, 2, 1) @ effects @ ks
        out = (self.base_o.conj().T @ effects @ self.base_o) / (
            1.0 - self.click_rate_o * self.dt
        )
        clicked = np.nonzero(outcomes)[0]
        if clicked.size:
            out[clicked] = (self.c_o.conj().T @ effects[clicked] @ self.c_o) / self.click_rate_o
        return out


def true_step(rho, obs_outcome, unobs_outcome, ctx: StepContext):
    return ctx.true_step(rho, obs_outcome, unobs_outcome)


def alice_filter_step(rho, obs_outcome, ctx: StepContext):
    return ctx.alice_filter_step(rho, obs_outcome)


def effect_step_backward(effect, obs_outcome, ctx: StepContext):
    return ctx.effect_step_backward(effect, obs_outcome)


# ---------------------------------------------------------------------------
# batched trajectory drivers


def _batch_traces(states: np.ndarray) -> np.ndarray:
    return states[:, 0, 0].real + states[:, 1, 1].real


def _batch_bloch(states: np.ndarray) -> np.ndarray:
    """Bloch coordinates of a normalized (batch, 2, 2) stack."""
    x = 2.0 * states[:, 1, 0].real
    y = 2.0 * states[:, 1, 0].imag
    z = states[:, 0, 0].real - states[:, 1, 1].real
    return np.stack([x, y, z], axis=-1)


def _hermitize_batch(states: np.ndarray) -> np.ndarray:
    return 0.5 * (states + states.conj().transpose(0, 2, 1))


@dataclasses.dataclass
class TrueRun:
    """One fully conditioned trajectory with both of its records."""

    run_index: int
    times: np.ndarray
    bloch: np.ndarray
    record_observed: Record
    record_unobserved: Record

    @property
    def purity(self) -> np.ndarray:
        return 0.5 * (1.0 + np.einsum("ij,ij->i", self.bloch, self.bloch))


def _true_draws(config: SimConfig, run_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Pregenerated record randomness for one run (observed, unobserved)."""
    rng = make_stream(config.seed, combination_index(config.combination), run_index, TAG_TRUE)
    draws = []
    for det in (config.detector_observed, config.detector_unobserved):
        if det.diffusive:
            draws.append(rng.standard_normal(config.n_steps))
        else:
            draws.append(rng.random(config.n_steps))
    return draws[0], draws[1]


def simulate_true_runs(config: SimConfig, run_indices) -> list[TrueRun]:
    """Generate fully conditioned trajectories for a batch of run indices.

    The per-run randomness comes from per-run substreams, so the content of
    any run does not depend on which other runs share the batch.
    """
    run_indices = list(run_indices)
    n_runs = len(run_indices)
    n_steps = config.n_steps
    ctx = StepContext(config)
    dt, root_dt = config.dt, math.sqrt(config.dt)

    draws_o = np.empty((n_runs, n_steps))
    draws_u = np.empty((n_runs, n_steps))
    for i, run in enumerate(run_indices):
        draws_o[i], draws_u[i] = _true_draws(config, run)

    values_o = np.empty((n_runs, n_steps), dtype=np.float64)
    values_u = np.empty((n_runs, n_steps), dtype=np.float64)

    states = np.repeat(config.initial_rho()[None, :, :], n_runs, axis=0)
    bloch = np.empty((n_runs, config.n_stored, 3))
    bloch[:, 0] = _batch_bloch(states)

    quad_op_o = ctx.c_o + ctx.c_o.conj().T
    quad_op_u = ctx.c_u + ctx.c_u.conj().T

    for t in range(n_steps):
        # outcomes for both channels are drawn from the pre-update state
        if ctx.det_o.diffusive:
            mean = np.einsum("ij,bji->b", quad_op_o, states).real
            values_o[:, t] = mean * dt + root_dt * draws_o[:, t]
        else:
            p_click = ctx.det_o.rate * states[:, 0, 0].real * dt
            values_o[:, t] = draws_o[:, t] < p_click
        if ctx.det_u.diffusive:
            mean = np.einsum("ij,bji->b", quad_op_u, states).real
            values_u[:, t] = mean * dt + root_dt * draws_u[:, t]
        else:
            p_click = ctx.det_u.rate * states[:, 0, 0].real * dt
            values_u[:, t] = draws_u[:, t] < p_click

        states = ctx.apply_observed_each(states, values_o[:, t])
        states = ctx.apply_unobserved_each(states, values_u[:, t])
        traces = _batch_traces(states)
        if np.any(traces <= 0.0):
            raise ValueError("record outcome has zero probability from this state")
        states = states / traces[:, None, None]
        if (t + 1) % config.store_every == 0:
            states = _hermitize_batch(states)
            bloch[:, (t + 1) // config.store_every] = _batch_bloch(states)

    times = config.stored_times()
    combo = combination_index(config.combination)
    out = []
    for i, run in enumerate(run_indices):
        key = (config.seed, combo, run, TAG_TRUE)
        rec_o = Record(ctx.det_o, dt, _record_values(values_o[i], ctx.det_o), key)
        rec_u = Record(ctx.det_u, dt, _record_values(values_u[i], ctx.det_u), key)
        out.append(TrueRun(run, times, bloch[i].copy(), rec_o, rec_u))
    return out


def _record_values(row: np.ndarray, det: DetectorConfig) -> np.ndarray:
    return row.astype(np.uint8) if not det.diffusive else row.copy()


def generate_run(config: SimConfig, run_index: int) -> TrueRun:
    """Single-run convenience wrapper around :func:`simulate_true_runs`."""
    return simulate_true_runs(config, [run_index])[0]


def filter_trajectories(records, config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Filtered states for a batch of observed records.

    Args:
        records: sequence of observed-channel :class:`Record` objects.
        config: run configuration (must match the records' detector).

    Returns:
        (stored times, Bloch array of shape (n_records, n_stored, 3)).
    """
    ctx = StepContext(config)
    records = list(records)
    for rec in records:
        if rec.detector != ctx.det_o or abs(rec.dt - config.dt) > 1e-15:
            raise ValueError("record does not match the configured observed channel")
        if rec.n_steps != config.n_steps:
            raise ValueError("record length does not match the configured grid")
    values = np.stack([rec.values.astype(np.float64) for rec in records])
    n_runs = len(records)

    states = np.repeat(config.initial_rho()[None, :, :], n_runs, axis=0)
    bloch = np.empty((n_runs, config.n_stored, 3))
    bloch[:, 0] = _batch_bloch(states)
    for t in range(config.n_steps):
        states = ctx.apply_observed_each(states, values[:, t])
        states = ctx.apply_unobserved_mean(states)
        traces = _batch_traces(states)
        if np.any(traces <= 0.0):
            raise ValueError("record outcome has zero probability under the filter")
        states = states / traces[:, None, None]
        if (t + 1) % config.store_every == 0:
            states = _hermitize_batch(states)
            bloch[:, (t + 1) // config.store_every] = _batch_bloch(states)
    return config.stored_times(), bloch


def filter_trajectory(record, config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Filtered Bloch trajectory for a single observed record."""
    times, bloch = filter_trajectories([record], config)
    return times, bloch[0]
