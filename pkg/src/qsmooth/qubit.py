"""Dense two-level algebra: Bloch coordinates, Liouvillians, propagators.

Conventions used throughout the package:

* basis index 0 is the excited state, index 1 the ground state, so the
  lowering operator maps |e> to |g> and the ground state sits at Bloch
  coordinates (0, 0, -1),
* operators are plain complex ``numpy`` arrays, density matrices are
  (2, 2) and superoperators (4, 4),
* superoperators act on column-stacked matrices, ``vec(A X B) =
  kron(B.T, A) vec(X)``,
* rates carry units of inverse time, drive amplitudes radians per time.

Everything here is a pure function of its arguments; nothing mutates its
inputs.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "IDENTITY",
    "SIGMA_X",
    "SIGMA_Y",
    "SIGMA_Z",
    "SIGMA_MINUS",
    "SIGMA_PLUS",
    "EXCITED",
    "GROUND",
    "vec",
    "unvec",
    "spre",
    "spost",
    "conjugation",
    "dissipator",
    "hamiltonian_superop",
    "bloch_from_rho",
    "rho_from_bloch",
    "purity",
    "fidelity_pure",
    "trace_distance",
    "check_density_matrix",
    "liouvillian",
    "steady_state",
    "Propagator",
    "propagate",
]

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
SIGMA_MINUS = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T.copy()

EXCITED = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
GROUND = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)

_PAULIS = (SIGMA_X, SIGMA_Y, SIGMA_Z)


def vec(a: np.ndarray) -> np.ndarray:
    """Column-stack a (2, 2) matrix into a length-4 vector."""
    return np.asarray(a, dtype=complex).reshape(4, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vec`."""
    return np.asarray(v, dtype=complex).reshape((2, 2), order="F")


def spre(a: np.ndarray) -> np.ndarray:
    """Superoperator for left multiplication, X -> A X."""
    return np.kron(IDENTITY, a)


def spost(a: np.ndarray) -> np.ndarray:
    """Superoperator for right multiplication, X -> X A."""
    return np.kron(np.asarray(a).T, IDENTITY)


def conjugation(a: np.ndarray) -> np.ndarray:
    """Superoperator for the sandwich X -> A X A^dag."""
    a = np.asarray(a)
    return np.kron(a.conj(), a)


def dissipator(c: np.ndarray) -> np.ndarray:
    """Lindblad dissipator D[c] X = c X c^dag - (c^dag c X + X c^dag c) / 2."""
    cdc = np.asarray(c).conj().T @ c
    return conjugation(c) - 0.5 * (spre(cdc) + spost(cdc))


def hamiltonian_superop(h: np.ndarray) -> np.ndarray:
    """Superoperator for the commutator part, X -> -i [H, X]."""
    return -1.0j * (spre(h) - spost(h))


def check_density_matrix(rho: np.ndarray, atol: float = 1e-8) -> None:
    """Raise ValueError unless rho is a Hermitian unit-trace (2, 2) matrix.

    Positivity is checked through the Bloch norm, which for a qubit is
    equivalent to nonnegative eigenvalues.
    """
    rho = np.asarray(rho)
    if rho.shape != (2, 2):
        raise ValueError(f"expected a (2, 2) matrix, got shape {rho.shape}")
    if not np.allclose(rho, rho.conj().T, atol=atol):
        raise ValueError("density matrix is not Hermitian")
    if abs(rho[0, 0].real + rho[1, 1].real - 1.0) > atol:
        raise ValueError(f"density matrix trace {np.trace(rho):+.6g} is not 1")
    b = np.array([np.trace(rho @ s).real for s in _PAULIS])
    if np.dot(b, b) > 1.0 + 10.0 * atol:
        raise ValueError("density matrix has a negative eigenvalue")


def bloch_from_rho(rho: np.ndarray, atol: float = 1e-8) -> np.ndarray:
    """Bloch vector (x, y, z) of a normalized density matrix.

    Args:
        rho: (2, 2) Hermitian matrix with unit trace.
        atol: tolerance for the normalization check.

    Returns:
        float array (x, y, z) with x = Tr[rho sigma_x] and so on.
    """
    rho = np.asarray(rho)
    tr = np.trace(rho)
    if abs(tr - 1.0) > atol:
        raise ValueError(f"expected a normalized state, trace is {tr:.6g}")
    return np.array([np.trace(rho @ s).real for s in _PAULIS])


def rho_from_bloch(b) -> np.ndarray:
    """Density matrix (I + b . sigma) / 2 for a Bloch vector of norm <= 1."""
    b = np.asarray(b, dtype=float)
    if b.shape != (3,):
        raise ValueError("Bloch vector must have three components")
    if np.dot(b, b) > 1.0 + 1e-10:
        raise ValueError(f"Bloch norm {np.linalg.norm(b):.6g} exceeds 1")
    out = 0.5 * (IDENTITY + b[0] * SIGMA_X + b[1] * SIGMA_Y + b[2] * SIGMA_Z)
    return out


def purity(rho: np.ndarray) -> float:
    """Tr[rho^2] of a normalized state, between 1/2 and 1 for a qubit."""
    rho = np.asarray(rho)
    return float(np.einsum("ij,ji->", rho, rho).real)


def fidelity_pure(rho_reference: np.ndarray, rho: np.ndarray, atol: float = 1e-8) -> float:
    """Fidelity Tr[rho_reference rho] against a pure reference state.

    The reference must be pure; for mixed references this overlap formula
    would not be the Uhlmann fidelity, so such inputs are rejected.
    """
    rho_reference = np.asarray(rho_reference)
    if abs(purity(rho_reference) - 1.0) > atol:
        raise ValueError("reference state is not pure")
    return float(np.einsum("ij,ji->", rho_reference, np.asarray(rho)).real)


def trace_distance(rho_a: np.ndarray, rho_b: np.ndarray) -> float:
    """Trace distance, half the sum of absolute eigenvalues of the difference."""
    diff = np.asarray(rho_a) - np.asarray(rho_b)
    ev = np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))
    return 0.5 * float(np.abs(ev).sum())


def liouvillian(omega: float, channels) -> np.ndarray:
    """Generator of the unconditioned master equation as a (4, 4) matrix.

    Args:
        omega: Rabi drive amplitude; the Hamiltonian is (omega / 2) sigma_x.
        channels: iterable of (rate, operator) pairs, each contributing
            rate * D[operator].

    Returns:
        Superoperator L with d vec(rho) / dt = L vec(rho).
    """
    liou = hamiltonian_superop(0.5 * omega * SIGMA_X)
    for rate, op in channels:
        if rate < 0.0:
            raise ValueError(f"negative channel rate {rate}")
        liou = liou + rate * dissipator(op)
    return liou


def steady_state(liou: np.ndarray, degeneracy_tol: float = 1e-9) -> np.ndarray:
    """Stationary state of a Liouvillian, solved as a least-squares problem.

    The linear system stacks L vec(rho) = 0 with the trace constraint.
    A Liouvillian whose kernel is more than one dimensional has no unique
    stationary state and is rejected.

    Returns:
        Hermitian (2, 2) density matrix with exactly unit trace.
    """
    liou = np.asarray(liou, dtype=complex)
    sv = np.linalg.svd(liou, compute_uv=False)
    null_dim = int(np.sum(sv < degeneracy_tol * max(sv[0], 1.0)))
    if null_dim > 1:
        raise ValueError(
            f"stationary state is degenerate, kernel dimension {null_dim}"
        )
    trace_row = vec(IDENTITY).conj()
    a = np.vstack([liou, trace_row])
    b = np.zeros(5, dtype=complex)
    b[4] = 1.0
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    rho = unvec(sol)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    residual = np.linalg.norm(liou @ vec(rho))
    if residual > 1e-8 * max(np.linalg.norm(liou), 1.0):
        raise ValueError(f"stationary-state residual too large: {residual:.3g}")
    return rho


class Propagator:
    """Cache for exp(L tau) over a fixed Liouvillian.

    Diagonalizes L once and exponentiates eigenvalues per call.  When the
    eigenvector matrix is ill conditioned (condition number above 1e8) the
    cache falls back to scaling-and-squaring for every call.
    """

    _COND_LIMIT = 1e8

    def __init__(self, liou: np.ndarray):
        self.liou = np.asarray(liou, dtype=complex)
        if self.liou.shape != (4, 4):
            raise ValueError("expected a (4, 4) superoperator")
        evals, vecs = np.linalg.eig(self.liou)
        cond = np.linalg.cond(vecs)
        if np.isfinite(cond) and cond < self._COND_LIMIT:
            self._evals = evals
            self._vecs = vecs
            self._vecs_inv = np.linalg.inv(vecs)
        else:
            self._evals = None

    @property
    def diagonalizable(self) -> bool:
        return self._evals is not None

    def __call__(self, tau: float) -> np.ndarray:
        if tau < 0.0:
            raise ValueError(f"propagation time must be nonnegative, got {tau}")
        if self._evals is None:
            return scipy.linalg.expm(self.liou * tau)
        return (self._vecs * np.exp(self._evals * tau)) @ self._vecs_inv


def propagate(liou, rho: np.ndarray, tau: float) -> np.ndarray:
    """Evolve a state for time tau under a fixed Liouvillian.

    Args:
        liou: (4, 4) generator or a prebuilt :class:`Propagator`.
        rho: (2, 2) initial state.
        tau: nonnegative evolution time.

    Returns:
        The evolved state, re-symmetrized to suppress Hermiticity drift.
    """
    prop = liou if isinstance(liou, Propagator) else Propagator(liou)
    out = unvec(prop(tau) @ vec(rho))
    return 0.5 * (out + out.conj().T)
