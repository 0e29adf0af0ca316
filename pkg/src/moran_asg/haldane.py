"""Fixation probability under moderate selection and the stationary line count."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import generators as gen
from .ctmc import stationary
from .params import FTW, ModelParams, SelectionSpec


def _log_q(N: int, sigma: float, m: int, alpha: float) -> np.ndarray:
    """log q_k for k = 1..N−1, with (1 − x^m)/(1 − x) = Σ_{i<m} x^i."""
    x = np.arange(1, N, dtype=float) / N
    geo = np.zeros_like(x)
    for i in range(m):
        geo += x**i
    return -np.log1p(sigma / float(N) ** alpha * geo)


def fixation_prob_exact(N: int, sigma: float, m: int, alpha: float) -> float:
    """P(fit type fixes | one fit individual) with u = 0 and s_m = σ/N^α.

    p = 1/Σ_{ℓ=1}^{N} Π_{k=ℓ}^{N−1} q_k, with the products taken as exponentials
    of suffix sums of log q.
    """
    if N < 1:
        raise ValueError("N must be positive")
    if N == 1:
        return 1.0
    lq = _log_q(N, sigma, m, alpha)
    suffix = np.cumsum(lq[::-1])[::-1]  # suffix[ℓ−1] = Σ_{k=ℓ}^{N−1} log q_k
    top = max(0.0, float(suffix.max()))
    total = np.exp(-top) + np.sum(np.exp(suffix - top))  # ℓ = N contributes the empty product
    return float(np.exp(-top) / total)


def fixation_prob_direct(N: int, sigma: float, m: int, alpha: float) -> float:
    """Same quantity by the plain recurrence S ← 1 + q_ℓ S (ℓ ascending)."""
    if N == 1:
        return 1.0
    q = np.exp(_log_q(N, sigma, m, alpha))
    S = 1.0
    for qk in q:
        S = 1.0 + qk * S
    return 1.0 / S


def haldane_params(N: int, sigma: float, m: int, alpha: float) -> ModelParams:
    return ModelParams(N, 0.0, 0.5, SelectionSpec(FTW, {m: sigma / float(N) ** alpha}))


@dataclass(frozen=True)
class HaldaneRow:
    N: int
    p_fix: float
    haldane_prediction: float

    @property
    def ratio(self) -> float:
        return self.p_fix / self.haldane_prediction


def haldane_scan(sigma: float, m: int, alpha: float, N_list: Sequence[int]) -> list[HaldaneRow]:
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be increasing")
    return [
        HaldaneRow(int(N), fixation_prob_exact(int(N), sigma, m, alpha), m * sigma / float(N) ** alpha)
        for N in N_list
    ]


def expected_R_inf(N: int, sigma: float, m: int, alpha: float) -> float:
    """E[R_∞] = N·p_fix, from the absorption identity at k = N−1."""
    return N * fixation_prob_exact(N, sigma, m, alpha)


def expected_R_inf_direct(N: int, sigma: float, m: int, alpha: float) -> float:
    """Σ_n n·π_R(n) from the stationary law of the line counter on [N] (u = 0)."""
    qr = gen.build_Q_R(haldane_params(N, sigma, m, alpha))
    pi = stationary(qr, closed_class=range(1, N + 1))
    return float(sum(n * pi.p[qr.index(n)] for n in range(1, N + 1)))
