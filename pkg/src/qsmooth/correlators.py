"""Analytic record correlators and the recovery-level prediction.

A detection record acts on the state through a linear map: an event record
through a jump conjugation, a quadrature record through the measured
operator acting symmetrically.  Multi-time averages of record increments in
steady state then follow from the regression recipe: apply a record map,
evolve for the lag, apply the next one, trace.

Two structural facts drive everything here.  The drive-axis Pauli component
evolves in isolation (the generator never mixes it into the other three
components), and the quadrature map at local-oscillator phase zero swaps
that component with the rest while the event map and the other quadrature
never populate it.  Chasing components through a correlator chain therefore
tells which correlators vanish identically; the numeric classifier below
just measures the magnitudes on a lag grid and checks them against two
widely separated thresholds, so a conclusive answer never rests on a tuned
cutoff.

Normalization: each event-record appearance divides by the square root of
the steady click rate, quadrature appearances carry no factor.  Increment
denominators (the per-step dt of actual records) are already divided out,
so sampled estimates converge to these curves as dt shrinks.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import qubit
from .config import DetectorConfig, SimConfig
from .unravelling import channel_operator, lindblad_liouvillian

__all__ = [
    "CorrelatorModel",
    "RecoveryPrediction",
    "record_superoperator",
    "default_tau_grid",
    "predict_level",
    "LEVEL_BY_FLAGS",
    "VANISH_BELOW",
    "NONVANISH_ABOVE",
]

# magnitudes below the first threshold count as identically zero, above the
# second as structurally nonzero; the four decades in between are a
# no-man's-land that raises instead of guessing
VANISH_BELOW = 1e-10
NONVANISH_ABOVE = 1e-3

# (cross two-time, three-time with observed record twice, three-time with
# unobserved record twice) -> how much of the missing information the
# observed record carries about the unobserved channel
LEVEL_BY_FLAGS = {
    (True, True, True): 4,
    (True, False, False): 3,
    (False, True, False): 2,
    (False, False, True): 1,
}


def record_superoperator(det: DetectorConfig) -> np.ndarray:
    """Map applied to the state when one record increment is read out."""
    c = channel_operator(det)
    if det.diffusive:
        return qubit.spre(c) + qubit.spost(c.conj().T)
    return qubit.conjugation(c)


def default_tau_grid(omega: float, periods: float = 3.0, n: int = 300) -> np.ndarray:
    """Lag grid covering a few drive periods, zero excluded."""
    if omega <= 0.0:
        raise ValueError("lag grid needs a positive drive frequency")
    t_drive = 2.0 * math.pi / omega
    return np.linspace(0.0, periods * t_drive, n + 1)[1:]


class CorrelatorModel:
    """Steady-state record correlators for one detector combination."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.liou = lindblad_liouvillian(config)
        self.rho_ss = qubit.steady_state(self.liou)
        self.prop = qubit.Propagator(self.liou)
        self._super = {
            "observed": record_superoperator(config.detector_observed),
            "unobserved": record_superoperator(config.detector_unobserved),
        }
        self._norm = {
            "observed": self._norm_factor(config.detector_observed),
            "unobserved": self._norm_factor(config.detector_unobserved),
        }
        # trace functional composed with a record map, as a row vector
        eye = qubit.vec(np.eye(2))
        self._row = {k: eye.conj() @ s for k, s in self._super.items()}
        self._mean = {
            k: (self._row[k] @ qubit.vec(self.rho_ss)).real for k in self._super
        }

    def _norm_factor(self, det: DetectorConfig) -> float:
        if det.diffusive:
            return 1.0
        c = channel_operator(det)
        rate = np.trace(c.conj().T @ c @ self.rho_ss).real
        if rate <= 0.0:
            raise ValueError("event record has zero steady click rate")
        return math.sqrt(rate)

    def _apply(self, which: str, rho: np.ndarray) -> np.ndarray:
        return qubit.unvec(self._super[which] @ qubit.vec(rho))

    def record_mean(self, which: str) -> float:
        """Steady per-time mean of the record increment."""
        return float(self._mean[which])

    def c2(self, taus, leading: str = "observed", trailing: str = "unobserved"):
        """Two-time record correlator, leading record later by tau."""
        taus = np.asarray(taus, dtype=float)
        seed = self._apply(trailing, self.rho_ss)
        row = self._row[leading]
        base = self._mean[leading] * self._mean[trailing]
        out = np.empty(taus.shape)
        for i, tau in np.ndenumerate(taus):
            evolved = qubit.propagate(self.prop, seed, float(tau))
            out[i] = (row @ qubit.vec(evolved)).real - base
        return out / (self._norm[leading] * self._norm[trailing])

    def c3(self, taus, big_t: float, twice: str = "observed"):
        """Three-time correlator with one record read at 0 and big_t.

        The twice-read record brackets the other one, which is read at tau
        strictly inside (0, big_t).  Subtracted is the product of the
        middle record's mean with the bracket record's bare two-time
        average over the full span.
        """
        other = "unobserved" if twice == "observed" else "observed"
        taus = np.asarray(taus, dtype=float)
        if np.any(taus <= 0.0) or np.any(taus >= big_t):
            raise ValueError("three-time lags must lie strictly inside (0, big_t)")
        seed = self._apply(twice, self.rho_ss)
        row = self._row[twice]
        span = qubit.propagate(self.prop, seed, big_t)
        bracket = (row @ qubit.vec(span)).real
        base = self._mean[other] * bracket
        out = np.empty(taus.shape)
        for i, tau in np.ndenumerate(taus):
            mid = self._apply(other, qubit.propagate(self.prop, seed, float(tau)))
            late = qubit.propagate(self.prop, mid, big_t - float(tau))
            out[i] = (row @ qubit.vec(late)).real - base
        return out / (self._norm[twice] ** 2 * self._norm[other])


@dataclasses.dataclass
class RecoveryPrediction:
    """Classified correlator structure of one detector combination."""

    combination: str
    c2_magnitude: float
    c3_observed_twice_magnitude: float
    c3_unobserved_twice_magnitude: float
    flags: tuple[bool, bool, bool]
    level: int | None

    def as_dict(self) -> dict:
        return {
            "combination": self.combination,
            "c2_magnitude": self.c2_magnitude,
            "c3_observed_twice_magnitude": self.c3_observed_twice_magnitude,
            "c3_unobserved_twice_magnitude": self.c3_unobserved_twice_magnitude,
            "flags": list(self.flags),
            "level": self.level,
        }


def _conclusive(magnitude: float, what: str) -> bool:
    if magnitude < VANISH_BELOW:
        return False
    if magnitude > NONVANISH_ABOVE:
        return True
    raise RuntimeError(
        f"{what} magnitude {magnitude:.3e} falls between the vanishing and "
        "non-vanishing thresholds; the classification would be a guess"
    )


def predict_level(config: SimConfig, n_tau: int = 300) -> RecoveryPrediction:
    """Classify a combination by which record correlators survive.

    Uses cross correlators over three drive periods and three-time
    correlators across one period.  The level says how much the observed
    record can know about the unobserved channel: combinations whose cross
    correlator survives recover the most, ones where only the three-time
    correlator with the unobserved record read twice survives recover the
    least.
    """
    model = CorrelatorModel(config)
    taus2 = default_tau_grid(config.omega, periods=3.0, n=n_tau)
    t_drive = 2.0 * math.pi / config.omega
    taus3 = np.linspace(0.0, t_drive, n_tau + 2)[1:-1]

    m2 = max(
        np.max(np.abs(model.c2(taus2, "observed", "unobserved"))),
        np.max(np.abs(model.c2(taus2, "unobserved", "observed"))),
    )
    m3o = np.max(np.abs(model.c3(taus3, t_drive, twice="observed")))
    m3u = np.max(np.abs(model.c3(taus3, t_drive, twice="unobserved")))

    flags = (
        _conclusive(float(m2), "cross correlator"),
        _conclusive(float(m3o), "observed-twice correlator"),
        _conclusive(float(m3u), "unobserved-twice correlator"),
    )
    return RecoveryPrediction(
        combination=config.combination,
        c2_magnitude=float(m2),
        c3_observed_twice_magnitude=float(m3o),
        c3_unobserved_twice_magnitude=float(m3u),
        flags=flags,
        level=LEVEL_BY_FLAGS.get(flags),
    )
