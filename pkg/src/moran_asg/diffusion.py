"""Diffusion-limit objects: truncated limit line counters, the stationary density and limit dualities."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from . import generators as gen
from .ctmc import DEFAULT_TOL, Dist, absorption_probs, stationary, transient
from .dualities import DualityReport, residual_report
from .generators import DELTA, Ctmc
from .params import DiffusionParams

REFLECT_REPORT = "REFLECT_REPORT"
ABSORB_REPORT = "ABSORB_REPORT"

DEFAULT_N_MAX = 200
N_MAX_CAP = 3200
HARMONIC = "harmonic"  # exponent Σ_{k≤m} y^k/k
FACTORIAL = "factorial"  # exponent Σ_{k≤m} y^k/k!


@dataclass(frozen=True)
class TruncatedChain:
    chain: Ctmc
    n_max: int
    boundary_policy: str
    leaked_mass_bound: float


def _overflow_target(target: int, n_max: int, policy: str) -> int | None:
    if target <= n_max:
        return target
    return n_max if policy in (REFLECT_REPORT, ABSORB_REPORT) else None


def _rcal_ctmc(dp: DiffusionParams, n_max: int, policy: str) -> Ctmc:
    th, nu0, nu1 = dp.theta, dp.nu0, dp.nu1
    delta = n_max + 1
    trip = []
    for n in range(1, n_max + 1):
        if policy == ABSORB_REPORT and n == n_max:
            continue
        trip.append((n, n - 1, n * (n - 1) + n * th * nu1))
        trip.append((n, delta, n * th * nu0))
        for m, sig in dp.sigma.items():
            trip.append((n, _overflow_target(n + m, n_max, policy), n * sig))
    return gen._assemble(list(range(n_max + 1)) + [DELTA], trip, "Rcal")


def _lcal_ctmc(dp: DiffusionParams, n_max: int, policy: str) -> Ctmc:
    th, nu0, nu1 = dp.theta, dp.nu0, dp.nu1
    trip = []
    for n in range(1, n_max + 1):
        i = n - 1
        if policy == ABSORB_REPORT and n == n_max:
            continue
        if n > 1:
            trip.append((i, i - 1, n * (n - 1) + (n - 1) * th * nu1))
            for j in range(1, n):
                trip.append((i, j - 1, th * nu0))
        for m, sig in dp.sigma.items():
            trip.append((i, _overflow_target(n + m, n_max, policy) - 1, n * sig))
    return gen._assemble(list(range(1, n_max + 1)), trip, "Lcal")


def _check_n_max(dp: DiffusionParams, n_max: int) -> None:
    top = max(dp.sigma) if dp.sigma else 0
    if n_max < top + 2:
        raise ValueError(f"n_max must be at least max order + 2 = {top + 2}")


def absorption_at_zero(tc: TruncatedChain) -> np.ndarray:
    """P(𝓡 absorbed at 0 | 𝓡_0 = n) for n = 0..n_max (Δ dropped)."""
    return absorption_probs(tc.chain, 0)[:-1]


def _stationary_L(tc: TruncatedChain) -> np.ndarray:
    if tc.boundary_policy == ABSORB_REPORT:
        return stationary(tc.chain, closed_class=[tc.n_max]).p
    return stationary(tc.chain).p


def build_Q_Rcal(dp: DiffusionParams, n_max: int = DEFAULT_N_MAX,
                 boundary_policy: str = REFLECT_REPORT) -> TruncatedChain:
    """Truncated limit killed line counter on {0..n_max} ∪ {Δ}.

    The leak bound is the largest change of the absorption-at-0 probabilities
    over n ≤ n_max/2 when n_max is doubled.
    """
    _check_n_max(dp, n_max)
    chain = _rcal_ctmc(dp, n_max, boundary_policy)
    if dp.theta > 0:
        a = absorption_probs(chain, 0)[: n_max // 2 + 1]
        b = absorption_probs(_rcal_ctmc(dp, 2 * n_max, boundary_policy), 0)[: n_max // 2 + 1]
        leak = float(np.max(np.abs(a - b)))
    else:
        leak = 0.0
    return TruncatedChain(chain, n_max, boundary_policy, leak)


def build_Q_Lcal(dp: DiffusionParams, n_max: int = DEFAULT_N_MAX,
                 boundary_policy: str = REFLECT_REPORT) -> TruncatedChain:
    """Truncated limit pruned-lookdown line counter on {1..n_max}.

    The leak bound is the total-variation change of the stationary law when
    n_max is doubled.
    """
    _check_n_max(dp, n_max)
    chain = _lcal_ctmc(dp, n_max, boundary_policy)
    tc = TruncatedChain(chain, n_max, boundary_policy, math.nan)
    if boundary_policy == ABSORB_REPORT:
        return TruncatedChain(chain, n_max, boundary_policy, math.inf)
    pa = _stationary_L(tc)
    pb = _stationary_L(TruncatedChain(_lcal_ctmc(dp, 2 * n_max, boundary_policy), 2 * n_max, boundary_policy, 0))
    leak = 0.5 * float(np.abs(pa - pb[:n_max]).sum() + pb[n_max:].sum())
    return TruncatedChain(chain, n_max, boundary_policy, leak)


def self_consistent(fn: Callable[[int], np.ndarray], n_max: int, tol: float,
                    cap: int = N_MAX_CAP) -> tuple[np.ndarray, int, float]:
    """Double n_max until fn(n_max) and fn(2·n_max) differ by at most tol.

    Returns (value at the accepted n_max, that n_max, observed difference).
    """
    cur = fn(n_max)
    while True:
        if 2 * n_max > cap:
            raise ArithmeticError(f"truncation did not self-stabilise below n_max cap {cap}")
        nxt = fn(2 * n_max)
        diff = float(np.max(np.abs(np.asarray(cur) - np.asarray(nxt))))
        if diff <= tol:
            return cur, n_max, diff
        n_max, cur = 2 * n_max, nxt


# ---------------------------------------------------------------------------
# Stationary density of the diffusion


def _log_selection_weight(y: np.ndarray | float, sigma: dict, form: str):
    out = 0.0
    for m, sig in sigma.items():
        acc = 0.0
        for k in range(1, m + 1):
            acc = acc + y**k / (k if form == HARMONIC else math.factorial(k))
        out = out - sig * acc
    return out


def _moment_integral(dp: DiffusionParams, n: int, form: str) -> float:
    """∫_0^1 y^n·w(y) dy with both endpoint singularities removed by substitution.

    Near 0 put y = z^{1/a} (a = θν₁) so y^{a−1} dy = dz/a; near 1 put
    1 − y = z^{1/c} (c = θν₀) likewise.
    """
    a = dp.theta * dp.nu1
    c = dp.theta * dp.nu0

    def smooth(y):
        return y**n * math.exp(_log_selection_weight(y, dp.sigma, form))

    def left(z):
        y = z ** (1.0 / a)
        return smooth(y) * (1.0 - y) ** (c - 1.0) / a

    def right(z):
        w = z ** (1.0 / c)
        y = 1.0 - w
        return smooth(y) * y ** (a - 1.0) / c

    half = 0.5
    lo, _ = integrate.quad(left, 0.0, half**a, epsabs=0.0, epsrel=1e-13, limit=200)
    hi, _ = integrate.quad(right, 0.0, half**c, epsabs=0.0, epsrel=1e-13, limit=200)
    return lo + hi


def pi_Y_moments(dp: DiffusionParams, n: int, form: str = HARMONIC) -> float:
    """E[𝒴_∞^n] under the stationary density with the chosen selection exponent."""
    if not (dp.theta * dp.nu0 > 0 and dp.theta * dp.nu1 > 0):
        raise ValueError("stationary density is not integrable unless θν₀ > 0 and θν₁ > 0")
    if n == 0:
        return 1.0
    return _moment_integral(dp, n, form) / _moment_integral(dp, 0, form)


def finite_N_moment(dp: DiffusionParams, N: int, n: int) -> float:
    """E[(Y_∞/N)^n] for the rescaled Moran chain (u = θ/N, s_m = σ_m/N)."""
    pi = stationary(gen.build_Q_Y_ftw(dp.moran(N))).p
    return float(pi @ (np.arange(N + 1) / N) ** n)


# ---------------------------------------------------------------------------
# Limit dualities and curves


def check_diffusion_duality(dp: DiffusionParams, n_max: int = DEFAULT_N_MAX,
                            n_top: int = 20) -> DualityReport:
    """P(𝓡 absorbed at 0 | n) against E[𝒴_∞^n] for n = 0..n_top."""
    if dp.theta <= 0:
        raise ValueError("diffusion duality needs θ > 0")
    tc = build_Q_Rcal(dp, n_max)
    lhs = absorption_at_zero(tc)[: n_top + 1]
    rhs = np.array([pi_Y_moments(dp, n) for n in range(n_top + 1)])
    rep = residual_report("diffusion", lhs, rhs, list(range(n_top + 1)), ["absorb0"], n_max,
                          dp.to_json(), None, f"n in 0..{n_top}, n_max={n_max}")
    rep.extra["leaked_mass_bound"] = tc.leaked_mass_bound
    rep.extra["rows"] = [[n, float(lhs[n]), float(rhs[n])] for n in range(n_top + 1)]
    return rep


def h_inf_diffusion(dp: DiffusionParams, y_grid: Sequence[float], n_max: int = DEFAULT_N_MAX) -> np.ndarray:
    """𝔥_∞(y) = Σ_n π_𝓛(n) y^n on a grid of y."""
    y = np.asarray(y_grid, dtype=float)
    if y.size and (y.min() < 0 or y.max() > 1):
        raise ValueError("y_grid must lie in [0,1]")
    tc = build_Q_Lcal(dp, n_max)
    pi = _stationary_L(tc)
    ns = np.arange(1, tc.n_max + 1)
    return np.array([float(pi @ yy**ns) for yy in y])


def h_r_diffusion(dp: DiffusionParams, y_grid: Sequence[float], r: float,
                  n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> np.ndarray:
    """𝔥_r(y) = E_1[y^{𝓛_r}]."""
    tc = build_Q_Lcal(dp, n_max)
    p = transient(tc.chain, Dist.delta(tc.chain, 1), r, tol).p
    ns = np.arange(1, tc.n_max + 1)
    return np.array([float(p @ yy**ns) for yy in np.asarray(y_grid, dtype=float)])


def moment_dual_rhs(dp: DiffusionParams, y: float, n_list: Sequence[int], t: float,
                    n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL) -> np.ndarray:
    """E[y^{𝓡_t} | 𝓡_0 = n] with y^Δ = 0."""
    tc = build_Q_Rcal(dp, n_max)
    ch = tc.chain
    f = np.array([0.0 if s is DELTA else y**s for s in ch.states])
    P0 = np.zeros((len(n_list), len(ch)))
    for i, n in enumerate(n_list):
        P0[i, ch.index(n)] = 1.0
    return transient(ch, P0, t, tol) @ f


def moran_moments(dp: DiffusionParams, N: int, y0: float, t: float, n_list: Sequence[int],
                  tol: float = DEFAULT_TOL) -> np.ndarray:
    """E[(Y_{Nt}/N)^n | Y_0 = round(y0·N)] for the rescaled Moran chain."""
    qy = gen.build_Q_Y_ftw(dp.moran(N))
    p = transient(qy, Dist.delta(qy, int(round(y0 * N))), N * t, tol).p
    x = np.arange(N + 1) / N
    return np.array([float(p @ x**n) for n in n_list])


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    moment_distance: float


def convergence_diagnostic(dp: DiffusionParams, N_list: Sequence[int], t: float,
                           y0: float = 0.5, n_moments: int = 5,
                           tol: float = DEFAULT_TOL) -> list[ConvergenceRow]:
    """Moment distance of each rescaled Moran law at time N·t to the finest N in the list."""
    if any(b < a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be increasing")
    ns = list(range(1, n_moments + 1))
    table = {N: moran_moments(dp, N, y0, t, ns, tol) for N in dict.fromkeys(N_list)}
    proxy = table[N_list[-1]]
    return [ConvergenceRow(N, float(np.max(np.abs(table[N] - proxy)))) for N in N_list]
