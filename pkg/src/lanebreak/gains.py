"""State-feedback gain synthesis for the controlled lane and its Lyapunov certificate.

The H2 program with H = I is solved through its Riccati equivalent (LQR with
Q = diag(gamma_s^2, gamma_v^2, ...), R = gamma_u^2). On a ring the headway
errors always sum to zero, which makes the origin of that direction an
uncontrollable zero eigenvalue of A_c. All synthesis therefore happens on the
invariant subspace orthogonal to the headway-sum direction; the returned gain
acts on full error states and ignores that direction.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .ovm import Equilibrium, LinearSystem

log = logging.getLogger(__name__)


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeightSpec:
    gamma_s: float = 0.03
    gamma_v: float = 0.15
    gamma_u: float = 1.0

    def __post_init__(self):
        if min(self.gamma_s, self.gamma_v, self.gamma_u) <= 0:
            raise ValueError("all weights must be positive")

    def state_weight(self, n: int) -> np.ndarray:
        return np.diag(np.tile([self.gamma_s**2, self.gamma_v**2], n))

    @property
    def control_weight(self) -> float:
        return self.gamma_u**2


@dataclass(frozen=True)
class GainMatrix:
    """Row gain k (1 x 2n) regulating a lane towards ``target``.

    ``target`` is the interleaved equilibrium state [s_1, v_1, ..., s_n, v_n]
    the error state is measured against.
    """

    k: np.ndarray
    n: int
    source_equilibrium: Equilibrium
    target: np.ndarray = field(repr=False)

    def to_json(self) -> dict:
        eq = self.source_equilibrium
        return {
            "n": self.n,
            "equilibrium": {"n": eq.n, "s_star": eq.s_star, "v_star": eq.v_star},
            "k": [float(x) for x in np.ravel(self.k)],
            "target": [float(x) for x in self.target],
        }

    @classmethod
    def from_json(cls, data: dict) -> "GainMatrix":
        eq = Equilibrium(**data["equilibrium"])
        n = int(data["n"])
        k = np.asarray(data["k"], dtype=float).reshape(1, 2 * n)
        if "target" in data:
            target = np.asarray(data["target"], dtype=float)
        else:
            target = np.tile([eq.s_star, eq.v_star], n)
        return cls(k=k, n=n, source_equilibrium=eq, target=target)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "GainMatrix":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class LyapunovCertificate:
    """P, Q with A_cl^T P + P A_cl = -Q on the headway-sum-free subspace.

    ``p_matrix``/``q_matrix`` are expressed in the orthonormal ``basis`` of
    that subspace (columns span it inside R^{2n}).
    """

    p_matrix: np.ndarray
    q_matrix: np.ndarray
    basis: np.ndarray

    def full_p(self) -> np.ndarray:
        return self.basis @ self.p_matrix @ self.basis.T


def conserved_basis(n: int) -> np.ndarray:
    """Orthonormal basis of {x : sum of headway errors = 0} in R^{2n}."""
    w = np.tile([1.0, 0.0], n)[None, :]
    return sla.null_space(w)


def _reduce(sys: LinearSystem) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    v = conserved_basis(sys.n)
    b = sys.b_matrix if sys.b_matrix is not None else np.zeros((2 * sys.n, 1))
    return v.T @ sys.a_matrix @ v, v.T @ b, v


def mirror_stabilizing_gain(a: np.ndarray, b: np.ndarray, shift: float = 0.1) -> np.ndarray:
    """Seed gain that reflects every eigenvalue with Re > -shift/2 into the left half plane.

    Unstable and marginal modes are split off with an ordered Schur form; on
    that block the shifted, anti-stable Lyapunov solution X gives
    K = B^T X^{-1}, which maps eigenvalue lam to -conj(lam) - 2*shift.
    """
    m = a.shape[0]
    # stable modes first, so feedback on the trailing block keeps the form triangular
    t, u, n_stable = sla.schur(a, output="real", sort=lambda re, im: re <= -shift / 2)
    k_sel = m - n_stable
    if k_sel == 0:
        return np.zeros((b.shape[1], m))
    a2 = t[n_stable:, n_stable:] + shift * np.eye(k_sel)
    b2 = (u.T @ b)[n_stable:]
    x = sla.solve_continuous_lyapunov(a2, b2 @ b2.T)
    try:
        k2 = b2.T @ np.linalg.solve(x, np.eye(k_sel))
    except np.linalg.LinAlgError as exc:
        raise SynthesisError("unstable modes are not reachable from the input") from exc
    if not np.all(np.isfinite(k2)):
        raise SynthesisError("unstable modes are not reachable from the input")
    k = np.zeros((b.shape[1], m))
    k[:, n_stable:] = k2
    return k @ u.T


def riccati_residual(a, b, q, r, p) -> np.ndarray:
    return a.T @ p + p @ a - p @ b @ np.linalg.solve(np.atleast_2d(r), b.T @ p) + q


def newton_kleinman(a, b, q, r, k0, tol: float = 1e-10, max_iter: int = 200):
    """Solve A^T P + P A - P B R^-1 B^T P + Q = 0 from a stabilizing K0.

    Returns (P, K, iterations).
    """
    r = np.atleast_2d(r)
    k = k0
    qn = np.linalg.norm(q)
    for it in range(1, max_iter + 1):
        acl = a - b @ k
        if np.max(np.linalg.eigvals(acl).real) >= 0:
            raise SynthesisError("Newton-Kleinman iterate lost stability")
        p = sla.solve_continuous_lyapunov(acl.T, -(q + k.T @ r @ k))
        p = 0.5 * (p + p.T)
        k = np.linalg.solve(r, b.T @ p)
        res = np.linalg.norm(riccati_residual(a, b, q, r, p))
        if res <= tol * qn:
            return p, k, it
    raise SynthesisError(f"Riccati iteration did not converge (residual {res:.3e})")


def synthesize_gain(sys: LinearSystem, w: WeightSpec, eq: Equilibrium | None = None,
                    target: np.ndarray | None = None) -> GainMatrix:
    """H2-optimal state feedback for a controlled lane."""
    if sys.kind != "controlled":
        raise ValueError("gain synthesis needs a controlled lane system")
    ar, br, v = _reduce(sys)
    qr = v.T @ w.state_weight(sys.n) @ v
    k0 = mirror_stabilizing_gain(ar, br)
    if np.max(np.linalg.eigvals(ar - br @ k0).real) >= 0:
        raise SynthesisError("pair (A_c, B_c) is not stabilizable on the ring subspace")
    _, kr, iters = newton_kleinman(ar, br, qr, w.control_weight, k0)
    log.debug("Newton-Kleinman converged in %d iterations", iters)
    k = kr @ v.T
    if eq is None:
        raise ValueError("source equilibrium is required")
    if target is None:
        target = np.tile([eq.s_star, eq.v_star], sys.n)
    return GainMatrix(k=k, n=sys.n, source_equilibrium=eq, target=np.asarray(target, float))


def closed_loop(sys: LinearSystem, gain: GainMatrix) -> np.ndarray:
    return sys.a_matrix - sys.b_matrix @ gain.k


def reduced_spectral_abscissa(sys: LinearSystem, gain: GainMatrix) -> float:
    v = conserved_basis(sys.n)
    return float(np.max(np.linalg.eigvals(v.T @ closed_loop(sys, gain) @ v).real))


def lyapunov_certificate(sys: LinearSystem, gain: GainMatrix,
                         q_choice: np.ndarray | None = None) -> LyapunovCertificate:
    v = conserved_basis(sys.n)
    acl = v.T @ closed_loop(sys, gain) @ v
    if np.max(np.linalg.eigvals(acl).real) >= 0:
        raise SynthesisError("closed loop is not stable; no Lyapunov certificate")
    q = np.eye(acl.shape[0]) if q_choice is None else np.asarray(q_choice, float)
    p = sla.solve_continuous_lyapunov(acl.T, -q)
    p = 0.5 * (p + p.T)
    if np.min(np.linalg.eigvalsh(p)) <= 0:
        raise SynthesisError("Lyapunov solution is not positive definite")
    return LyapunovCertificate(p_matrix=p, q_matrix=q, basis=v)


def rate_constants(cert: LyapunovCertificate, sys_u: LinearSystem) -> tuple[float, float]:
    """Theoretical (decay, growth) rates lambda_min(Q)/lambda_max(P), lambda_max(A_u + A_u^T)."""
    alpha2 = np.min(np.linalg.eigvalsh(cert.q_matrix)) / np.max(np.linalg.eigvalsh(cert.p_matrix))
    beta2 = np.max(np.linalg.eigvalsh(sys_u.a_matrix + sys_u.a_matrix.T))
    if beta2 <= 0:
        warnings.warn("uncontrolled system has nonpositive growth rate; instability premise violated")
    return float(alpha2), float(beta2)
