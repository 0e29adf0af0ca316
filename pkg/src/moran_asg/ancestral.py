"""Ancestral and common-ancestor type distributions by three independent routes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import generators as gen
from .ctmc import DEFAULT_TOL, Dist, absorption_probs, stationary, transient
from .dualities import hf_matrix
from .params import ModelParams

L_LAW = "L_LAW"
RECURSION = "RECURSION"
YTILDE = "YTILDE"

DENSE_ROUTE_CAP = 2000
CLAMP_SLACK = 1e-12


@dataclass(frozen=True)
class AncestralResult:
    h: np.ndarray
    route: str
    r: float  # math.inf for the common-ancestor law


def _checked(h: np.ndarray, route: str, r: float) -> AncestralResult:
    h = np.asarray(h, dtype=float)
    if h.min() < -CLAMP_SLACK or h.max() > 1 + CLAMP_SLACK:
        raise ArithmeticError(f"{route} produced values outside [0,1]: [{h.min()}, {h.max()}]")
    h = np.clip(h, 0.0, 1.0)
    h.setflags(write=False)
    return AncestralResult(h, route, r)


def _cap(params: ModelParams) -> None:
    if params.N > DENSE_ROUTE_CAP:
        raise ValueError(f"this route is capped at N <= {DENSE_ROUTE_CAP}; use the recursion")


def selective_pressure(params: ModelParams, k: np.ndarray) -> np.ndarray:
    """s(k) = Σ_m s_m (1 − (k/N)^m)."""
    x = np.asarray(k, dtype=float) / params.N
    out = np.zeros_like(x)
    for m, r in params.s.items():
        out += r * (1.0 - x**m)
    return out


def h_r_via_L(params: ModelParams, r: float, tol: float = DEFAULT_TOL) -> AncestralResult:
    """h_r(k) = E_1[k^{↓L_r}/N^{↓L_r}] from the transient law of the line counter."""
    _cap(params)
    ql = gen.build_Q_L(params)
    p = transient(ql, Dist.delta(ql, 1), r, tol).p
    return _checked(hf_matrix(params.N, ql.states) @ p, L_LAW, r)


def h_inf_via_L(params: ModelParams) -> AncestralResult:
    """h_∞(k) = E[k^{↓L_∞}/N^{↓L_∞}] under the stationary law of the line counter."""
    _cap(params)
    ql = gen.build_Q_L(params)
    pi = stationary(ql).p
    return _checked(hf_matrix(params.N, ql.states) @ pi, L_LAW, math.inf)


def thomas_solve(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a tridiagonal system by forward elimination and back substitution.

    lower[i] multiplies x[i−1] (lower[0] unused), upper[i] multiplies x[i+1]
    (upper[−1] unused). No pivoting, so the matrix should be diagonally dominant.
    """
    n = diag.size
    c = np.empty(n)
    d = np.empty(n)
    if diag[0] == 0.0:
        raise ZeroDivisionError("zero pivot in row 0")
    c[0] = upper[0] / diag[0] if n > 1 else 0.0
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        piv = diag[i] - lower[i] * c[i - 1]
        if piv == 0.0:
            raise ZeroDivisionError(f"zero pivot in row {i}")
        c[i] = upper[i] / piv if i < n - 1 else 0.0
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / piv
    x = np.empty(n)
    x[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


def recursion_coefficients(params: ModelParams) -> tuple[np.ndarray, ...]:
    """Coefficients of the three-term recursion for h_∞ on k = 1..N−1.

    Row k reads a_k h(k−1) − d_k h(k) + c_k h(k+1) = −uν₀/(N−k+1).
    Returns (a, d, c, rhs).
    """
    N = params.N
    u, nu0, nu1 = params.u, params.nu0, params.nu1
    k = np.arange(1, N, dtype=float)
    w = 1.0 - k / N
    s = selective_pressure(params, k)
    d = 2 * w + (N - k) * u * nu1 / k + u * nu0 + s
    c = w + (N - k) * u * nu1 / (k + 1)
    a = w + (N - k) * u * nu0 / (N - k + 1) + s
    rhs = -u * nu0 / (N - k + 1)
    return a, d, c, rhs


def h_inf_via_recursion(params: ModelParams) -> AncestralResult:
    """Solve the three-term recursion with h(0) = 0, h(N) = 1 by the Thomas algorithm."""
    N = params.N
    if N == 1:
        return _checked(np.array([0.0, 1.0]), RECURSION, math.inf)
    a, d, c, rhs = recursion_coefficients(params)
    b = rhs.copy()
    b[-1] -= c[-1] * 1.0  # h(N) = 1 moved to the right-hand side
    inner = thomas_solve(a, -d, c, b)
    return _checked(np.concatenate(([0.0], inner, [1.0])), RECURSION, math.inf)


def recursion_residual(params: ModelParams, h: np.ndarray) -> float:
    a, d, c, rhs = recursion_coefficients(params)
    lhs = a * h[:-2] - d * h[1:-1] + c * h[2:]
    return float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0


def h_inf_via_Ytilde(params: ModelParams) -> AncestralResult:
    """h_∞(k) = P(Ỹ absorbed at N | Ỹ_0 = k)."""
    _cap(params)
    return _checked(absorption_probs(gen.build_Q_Ytilde(params), params.N), YTILDE, math.inf)


def tail_representation_check(params: ModelParams) -> float:
    """Max over k of |(1 − h_∞(k)) − ((N−k)/N) Σ_n P(L_∞ > n) k^{↓n}/(N−1)^{↓n}|."""
    _cap(params)
    N = params.N
    ql = gen.build_Q_L(params)
    pi = stationary(ql).p  # index n−1 ↔ n lines
    h = hf_matrix(N, ql.states) @ pi
    # P(L > n) for n = 0..N−1
    surv = np.concatenate(([1.0], 1.0 - np.cumsum(pi)[:-1]))
    ks = np.arange(N + 1, dtype=float)
    ratio = np.ones(N + 1)
    total = np.zeros(N + 1)
    for n in range(N):
        if n:
            ratio = ratio * (ks - (n - 1)) / (N - 1 - (n - 1))
        total += surv[n] * ratio
    rhs = (N - ks) / N * total
    return float(np.max(np.abs((1.0 - h) - rhs)))


def stationary_unfit_law(params: ModelParams) -> np.ndarray:
    """π_Y by the birth-death product formula (O(N))."""
    return stationary(gen.build_Q_Y_ftw(params)).p


def fig7_point(params: ModelParams) -> tuple[float, float]:
    """(mean unfit proportion, mean unfit-ancestor probability) at stationarity."""
    if params.u <= 0:
        raise ValueError("fig7_point needs u > 0")
    pi = stationary_unfit_law(params)
    k = np.arange(params.N + 1)
    h = h_inf_via_recursion(params).h
    return float(pi @ k / params.N), float(pi @ h)
