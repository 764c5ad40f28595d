"""Optimal velocity car-following model, ring equilibria and linearization."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

Kind = Literal["controlled", "uncontrolled"]


@dataclass(frozen=True)
class OvmParams:
    """Car-following and road constants. Defaults are the two-lane ring setup."""

    circumference: float = 400.0
    alpha: float = 0.6
    beta: float = 0.9
    s_st: float = 5.0
    s_go: float = 35.0
    v_max: float = 30.0

    def __post_init__(self):
        if self.circumference <= 0:
            raise ValueError("circumference must be positive")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if not 0 < self.s_st < self.s_go:
            raise ValueError("need 0 < s_st < s_go")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")


@dataclass(frozen=True)
class Equilibrium:
    n: int
    s_star: float
    v_star: float


@dataclass(frozen=True)
class LinearSystem:
    """Error dynamics x' = A x (+ B u) of one ring lane around its equilibrium.

    State ordering is [s_1, v_1, ..., s_n, v_n]; vehicle i follows i-1 and
    vehicle 1 follows vehicle n. In a controlled lane the AV is vehicle n.
    """

    a_matrix: np.ndarray
    b_matrix: np.ndarray | None
    n: int
    kind: Kind
    a1: float
    a2: float
    a3: float


def optimal_velocity(s, p: OvmParams):
    """Clipped cosine optimal velocity V(s). Works on scalars and arrays."""
    s = np.asarray(s, dtype=float)
    frac = (s - p.s_st) / (p.s_go - p.s_st)
    v = 0.5 * p.v_max * (1.0 - np.cos(np.pi * np.clip(frac, 0.0, 1.0)))
    return v if v.ndim else float(v)


def optimal_velocity_slope(s, p: OvmParams):
    """Analytic derivative dV/ds; zero on the clipped branches."""
    s = np.asarray(s, dtype=float)
    width = p.s_go - p.s_st
    inside = (s > p.s_st) & (s < p.s_go)
    d = 0.5 * p.v_max * np.pi / width * np.sin(np.pi * (s - p.s_st) / width)
    d = np.where(inside, d, 0.0)
    return d if d.ndim else float(d)


def ovm_acceleration(s, s_dot, v, p: OvmParams):
    return p.alpha * (optimal_velocity(s, p) - v) + p.beta * s_dot


def equilibrium(n: int, p: OvmParams) -> Equilibrium:
    if n < 1:
        raise ValueError("a ring lane needs at least one vehicle")
    s_star = p.circumference / n
    return Equilibrium(n=n, s_star=s_star, v_star=optimal_velocity(s_star, p))


def ovm_coefficients(s_star: float, p: OvmParams) -> tuple[float, float, float]:
    """(a1, a2, a3) of the linearized OVM around headway ``s_star``.

    For a general car-following law a2 = dF/ds_dot - dF/dv; for OVM that is
    beta - (-alpha) = alpha + beta.
    """
    dF_ds = p.alpha * optimal_velocity_slope(s_star, p)
    dF_dsdot = p.beta
    dF_dv = -p.alpha
    return dF_ds, dF_dsdot - dF_dv, dF_dsdot


def _ring_matrix(m: int, a1: float, a2: float, a3: float) -> np.ndarray:
    d1 = np.array([[0.0, -1.0], [a1, -a2]])
    d2 = np.array([[0.0, 1.0], [0.0, a3]])
    a = np.zeros((2 * m, 2 * m))
    for i in range(m):
        lead = (i - 1) % m
        a[2 * i:2 * i + 2, 2 * i:2 * i + 2] = d1
        a[2 * i:2 * i + 2, 2 * lead:2 * lead + 2] = d2
    return a


def controlled_matrices(n: int, a1: float, a2: float, a3: float) -> tuple[np.ndarray, np.ndarray]:
    """Block-circulant (A_c, B_c) with the AV in the last block row."""
    a = _ring_matrix(n, a1, a2, a3)
    # AV row: s_n' = v_{n-1} - v_n, v_n' = u
    a[-2:, :] = 0.0
    a[-2, -3] = 1.0
    a[-2, -1] = -1.0
    b = np.zeros((2 * n, 1))
    b[-1, 0] = 1.0
    return a, b


def linearize(n: int, kind: Kind, p: OvmParams, s_star: float | None = None) -> LinearSystem:
    """Linear error dynamics of a lane with ``n`` vehicles.

    ``s_star`` overrides the HV linearization headway (used for the
    anticipatory equilibrium); by default it is C / n.
    """
    if n < 2:
        raise ValueError("linearization needs n >= 2")
    if s_star is None:
        s_star = p.circumference / n
    a1, a2, a3 = ovm_coefficients(s_star, p)
    if kind == "controlled":
        a, b = controlled_matrices(n, a1, a2, a3)
    elif kind == "uncontrolled":
        a, b = _ring_matrix(n, a1, a2, a3), None
    else:
        raise ValueError(f"unknown lane kind {kind!r}")
    return LinearSystem(a_matrix=a, b_matrix=b, n=n, kind=kind, a1=a1, a2=a2, a3=a3)


def string_instability_check(n: int, p: OvmParams) -> bool:
    """True when the uncontrolled ring of ``n`` vehicles is string unstable."""
    return p.alpha + 2 * p.beta < 2 * optimal_velocity_slope(p.circumference / n, p)
