import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from lanebreak.gains import (GainMatrix, SynthesisError, WeightSpec, conserved_basis, closed_loop,
                             lyapunov_certificate, mirror_stabilizing_gain, newton_kleinman, rate_constants,
                             reduced_spectral_abscissa, riccati_residual, synthesize_gain)
from lanebreak.ovm import OvmParams, equilibrium, linearize

import oracles

P = OvmParams()
W = WeightSpec()

# frozen from scipy's CARE solver on the reduced pair (independent route)
ABSCISSA_20 = -0.2519


@pytest.fixture(scope="module")
def sys20():
    return linearize(20, "controlled", P)


@pytest.fixture(scope="module")
def gain20(sys20):
    return synthesize_gain(sys20, W, eq=equilibrium(20, P))


@given(st.floats(-3, 3), st.floats(0.1, 3), st.floats(0.01, 5), st.floats(0.01, 5))
def test_scalar_riccati_matches_closed_form(a, b, q, r):
    A, B, Q = np.array([[a]]), np.array([[b]]), np.array([[q]])
    k0 = mirror_stabilizing_gain(A, B)
    p, k, _ = newton_kleinman(A, B, Q, r, k0)
    assert p[0, 0] == pytest.approx(oracles.scalar_lqr(a, b, q, r), rel=1e-8)


def test_toy_two_state_against_scipy():
    a = np.array([[0.0, 1.0], [2.0, -0.5]])
    b = np.array([[0.0], [1.0]])
    q = np.diag([1.0, 0.3])
    p, _, _ = newton_kleinman(a, b, q, 0.7, mirror_stabilizing_gain(a, b))
    np.testing.assert_allclose(p, sla.solve_continuous_are(a, b, q, np.array([[0.7]])), rtol=1e-9)


def test_conserved_direction_is_uncontrollable(sys20):
    w = np.tile([1.0, 0.0], 20)
    # w^T A = 0 and w^T B = 0: the headway sum is invariant under any feedback
    assert np.abs(w @ sys20.a_matrix).max() < 1e-12 and abs(w @ sys20.b_matrix).max() == 0
    v = conserved_basis(20)
    np.testing.assert_allclose(v.T @ v, np.eye(39), atol=1e-12)
    assert np.abs(w @ v).max() < 1e-12


def test_riccati_residual_and_agreement_with_scipy(sys20):
    v = conserved_basis(20)
    ar, br = v.T @ sys20.a_matrix @ v, v.T @ sys20.b_matrix
    qr = v.T @ W.state_weight(20) @ v
    p, k, _ = newton_kleinman(ar, br, qr, W.control_weight, mirror_stabilizing_gain(ar, br))
    assert np.linalg.norm(riccati_residual(ar, br, qr, W.control_weight, p)) <= 1e-8 * np.linalg.norm(qr)
    ref = sla.solve_continuous_are(ar, br, qr, np.array([[W.control_weight]]))
    np.testing.assert_allclose(p, ref, rtol=1e-8, atol=1e-10)
    assert np.linalg.norm(p - p.T) <= 1e-10 * np.linalg.norm(p)


def test_gain_stabilizes(sys20, gain20):
    assert reduced_spectral_abscissa(sys20, gain20) <= -1e-6
    assert reduced_spectral_abscissa(sys20, gain20) == pytest.approx(ABSCISSA_20, abs=5e-4)
    # the only non-negative full-space eigenvalue is the conserved zero mode
    ev = np.sort(np.linalg.eigvals(closed_loop(sys20, gain20)).real)
    assert abs(ev[-1]) < 1e-9 and ev[-2] < 0


@pytest.mark.parametrize("n", [12, 15, 19])
def test_gain_stabilizes_other_sizes(n):
    sys = linearize(n, "controlled", P)
    assert reduced_spectral_abscissa(sys, synthesize_gain(sys, W, eq=equilibrium(n, P))) < -1e-6


def test_free_flow_ring_is_not_stabilizable():
    # headway above s_go: HVs ignore spacing, so the headway modes are unreachable
    with pytest.raises(SynthesisError):
        synthesize_gain(linearize(6, "controlled", P), W, eq=equilibrium(6, P))


def test_certificate(sys20, gain20):
    cert = lyapunov_certificate(sys20, gain20)
    acl = cert.basis.T @ closed_loop(sys20, gain20) @ cert.basis
    res = acl.T @ cert.p_matrix + cert.p_matrix @ acl + cert.q_matrix
    assert np.linalg.norm(res) < 1e-8
    assert np.min(np.linalg.eigvalsh(cert.p_matrix)) > 0
    assert np.linalg.norm(cert.p_matrix - cert.p_matrix.T) <= 1e-10 * np.linalg.norm(cert.p_matrix)
    a2, b2 = rate_constants(cert, linearize(19, "uncontrolled", P))
    assert a2 > 0 and b2 > 0


def test_gain_json_round_trip(tmp_path, gain20):
    path = tmp_path / "k.json"
    gain20.save(path)
    back = GainMatrix.load(path)
    np.testing.assert_array_equal(back.k, gain20.k)
    assert back.n == 20 and back.source_equilibrium == gain20.source_equilibrium
    d = gain20.to_json()
    assert set(d) >= {"n", "equilibrium", "k"} and len(d["k"]) == 40


def test_synthesis_requires_controlled_system():
    with pytest.raises(ValueError):
        synthesize_gain(linearize(19, "uncontrolled", P), W, eq=equilibrium(19, P))


def test_unstabilizable_pair_raises():
    a = np.diag([1.0, 2.0])
    b = np.array([[1.0], [0.0]])
    with pytest.raises(SynthesisError):
        mirror_stabilizing_gain(a, b)


def test_weights_validate():
    with pytest.raises(ValueError):
        WeightSpec(gamma_s=0)
