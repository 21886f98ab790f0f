"""Algebra-layer checks against independent small-matrix oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsmooth import qubit as qb


def _direct_master_rhs(omega, channels, rho):
    """Master-equation right-hand side written out in plain 2x2 arithmetic."""
    h = 0.5 * omega * qb.SIGMA_X
    out = -1.0j * (h @ rho - rho @ h)
    for rate, c in channels:
        cdc = c.conj().T @ c
        out = out + rate * (c @ rho @ c.conj().T - 0.5 * (cdc @ rho + rho @ cdc))
    return out


def _random_rho(rng):
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


unit_ball = st.tuples(
    st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0)
).filter(lambda b: b[0] ** 2 + b[1] ** 2 + b[2] ** 2 <= 1.0)


def test_pauli_algebra():
    assert np.allclose(qb.SIGMA_X @ qb.SIGMA_Y - qb.SIGMA_Y @ qb.SIGMA_X, 2j * qb.SIGMA_Z)
    assert np.allclose(qb.SIGMA_MINUS @ qb.SIGMA_MINUS, 0.0)
    # lowering operator sends the excited state to the ground state
    assert np.allclose(qb.SIGMA_MINUS @ qb.EXCITED @ qb.SIGMA_PLUS, qb.GROUND)


def test_bloch_of_named_states():
    assert np.allclose(qb.bloch_from_rho(qb.EXCITED), [0.0, 0.0, 1.0])
    assert np.allclose(qb.bloch_from_rho(qb.GROUND), [0.0, 0.0, -1.0])
    plus = 0.5 * np.array([[1, 1], [1, 1]], dtype=complex)
    assert np.allclose(qb.bloch_from_rho(plus), [1.0, 0.0, 0.0])


def test_bloch_rejects_unnormalized():
    with pytest.raises(ValueError, match="normalized"):
        qb.bloch_from_rho(2.0 * qb.EXCITED)


@given(unit_ball)
@settings(max_examples=200, deadline=None)
def test_bloch_round_trip(b):
    rho = qb.rho_from_bloch(np.array(b))
    qb.check_density_matrix(rho)
    assert np.allclose(qb.bloch_from_rho(rho), b, atol=1e-12)
    p = qb.purity(rho)
    assert 0.5 - 1e-12 <= p <= 1.0 + 1e-12


@given(unit_ball, unit_ball)
@settings(max_examples=100, deadline=None)
def test_trace_distance_is_half_bloch_distance(b1, b2):
    r1, r2 = qb.rho_from_bloch(np.array(b1)), qb.rho_from_bloch(np.array(b2))
    expect = 0.5 * np.linalg.norm(np.subtract(b1, b2))
    assert qb.trace_distance(r1, r2) == pytest.approx(expect, abs=1e-12)


def test_purity_examples():
    assert qb.purity(qb.EXCITED) == pytest.approx(1.0)
    assert qb.purity(0.5 * qb.IDENTITY) == pytest.approx(0.5)


def test_fidelity_pure():
    assert qb.fidelity_pure(qb.EXCITED, qb.EXCITED) == pytest.approx(1.0)
    assert qb.fidelity_pure(qb.EXCITED, qb.GROUND) == pytest.approx(0.0)
    mixed = 0.5 * qb.IDENTITY
    assert qb.fidelity_pure(qb.EXCITED, mixed) == pytest.approx(0.5)
    with pytest.raises(ValueError, match="pure"):
        qb.fidelity_pure(mixed, qb.EXCITED)


def test_vec_convention():
    a = np.arange(4.0).reshape(2, 2) + 1j
    b = np.arange(4.0, 8.0).reshape(2, 2)
    x = np.arange(8.0, 12.0).reshape(2, 2) * 1j
    lhs = qb.vec(a @ x @ b)
    rhs = np.kron(b.T, a) @ qb.vec(x)
    assert np.allclose(lhs, rhs)


def test_liouvillian_matches_direct_arithmetic():
    rng = np.random.default_rng(7)
    channels = [(0.5, qb.SIGMA_MINUS), (0.3, qb.SIGMA_MINUS)]
    liou = qb.liouvillian(5.0, channels)
    for _ in range(20):
        rho = _random_rho(rng)
        direct = _direct_master_rhs(5.0, channels, rho)
        assert np.allclose(qb.unvec(liou @ qb.vec(rho)), direct, atol=1e-12)


def test_liouvillian_preserves_trace():
    liou = qb.liouvillian(5.0, [(1.0, qb.SIGMA_MINUS)])
    assert np.allclose(qb.vec(qb.IDENTITY).conj() @ liou, 0.0, atol=1e-12)


def test_liouvillian_rejects_negative_rate():
    with pytest.raises(ValueError, match="negative"):
        qb.liouvillian(1.0, [(-0.1, qb.SIGMA_MINUS)])


def _bloch_fixed_point(omega, gamma):
    """Independent stationary solution of the driven-decay Bloch system.

    The three Bloch equations are
        dx/dt = -(gamma / 2) x
        dy/dt = -(gamma / 2) y - omega z
        dz/dt =  omega y - gamma (z + 1)
    and the fixed point solves the corresponding 3x3 linear system.
    """
    a = np.array(
        [
            [-gamma / 2.0, 0.0, 0.0],
            [0.0, -gamma / 2.0, -omega],
            [0.0, omega, -gamma],
        ]
    )
    rhs = np.array([0.0, 0.0, gamma])
    return np.linalg.solve(a, rhs)


def test_steady_state_matches_bloch_oracle():
    omega, gamma = 5.0, 1.0
    liou = qb.liouvillian(
        omega, [(gamma / 2, qb.SIGMA_MINUS), (gamma / 2, qb.SIGMA_MINUS)]
    )
    rho = qb.steady_state(liou)
    assert np.allclose(qb.bloch_from_rho(rho), _bloch_fixed_point(omega, gamma), atol=1e-10)
    # frozen exact values for the default working point
    assert np.allclose(qb.bloch_from_rho(rho), [0.0, 10.0 / 51.0, -1.0 / 51.0], atol=1e-10)
    assert qb.purity(rho) == pytest.approx(2702.0 / 5202.0, abs=1e-10)
    # stationarity and the pairwise fixed-point relations
    x, y, z = qb.bloch_from_rho(rho)
    assert np.allclose(liou @ qb.vec(rho), 0.0, atol=1e-10)
    assert -0.5 * gamma * y == pytest.approx(omega * z, abs=1e-10)
    assert omega * y == pytest.approx(gamma * (z + 1.0), abs=1e-10)


def test_steady_state_excited_population():
    # population feeding the stationary emission rate
    liou = qb.liouvillian(5.0, [(0.5, qb.SIGMA_MINUS), (0.5, qb.SIGMA_MINUS)])
    rho = qb.steady_state(liou)
    assert rho[0, 0].real == pytest.approx(25.0 / 51.0, abs=1e-10)


def test_steady_state_without_drive_is_ground():
    liou = qb.liouvillian(0.0, [(1.0, qb.SIGMA_MINUS)])
    assert qb.trace_distance(qb.steady_state(liou), qb.GROUND) < 1e-10


def test_steady_state_strong_drive_depolarizes():
    liou = qb.liouvillian(500.0, [(1.0, qb.SIGMA_MINUS)])
    rho = qb.steady_state(liou)
    assert qb.purity(rho) == pytest.approx(0.5, abs=1e-4)


def test_steady_state_degenerate_kernel_rejected():
    # pure dephasing without drive preserves every population split
    liou = qb.liouvillian(0.0, [(1.0, qb.SIGMA_Z)])
    with pytest.raises(ValueError, match="degenerate"):
        qb.steady_state(liou)


def test_propagate_identity_at_zero_time():
    liou = qb.liouvillian(5.0, [(1.0, qb.SIGMA_MINUS)])
    rho = qb.rho_from_bloch([0.3, -0.2, 0.4])
    assert np.allclose(qb.propagate(liou, rho, 0.0), rho, atol=1e-12)


def test_propagate_semigroup_and_trace():
    liou = qb.liouvillian(5.0, [(0.5, qb.SIGMA_MINUS), (0.5, qb.SIGMA_MINUS)])
    prop = qb.Propagator(liou)
    assert np.allclose(prop(0.7) @ prop(1.1), prop(1.8), atol=1e-10)
    rng = np.random.default_rng(11)
    for _ in range(10):
        rho = _random_rho(rng)
        tau = rng.uniform(0.0, 5.0)
        out = qb.propagate(prop, rho, tau)
        assert np.trace(out).real == pytest.approx(1.0, abs=1e-10)
        assert np.allclose(out, out.conj().T, atol=1e-10)
        assert np.linalg.eigvalsh(out).min() > -1e-10


def test_propagate_converges_to_steady_state():
    liou = qb.liouvillian(5.0, [(0.5, qb.SIGMA_MINUS), (0.5, qb.SIGMA_MINUS)])
    target = qb.steady_state(liou)
    out = qb.propagate(liou, qb.EXCITED, 40.0)
    assert qb.trace_distance(out, target) < 1e-10


def test_propagate_rejects_negative_time():
    liou = qb.liouvillian(1.0, [(1.0, qb.SIGMA_MINUS)])
    with pytest.raises(ValueError, match="nonnegative"):
        qb.propagate(liou, qb.EXCITED, -0.1)


def test_propagator_falls_back_on_defective_generator():
    # a Jordan block is not diagonalizable; the cache must still be exact
    liou = np.zeros((4, 4), dtype=complex)
    liou[0, 1] = 1.0
    prop = qb.Propagator(liou)
    assert not prop.diagonalizable
    assert np.allclose(prop(2.0), np.eye(4) + 2.0 * liou, atol=1e-12)
