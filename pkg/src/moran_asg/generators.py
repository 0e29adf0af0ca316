"""Sparse generator matrices for the forward and ancestral chains.

Every builder assembles off-diagonal rates as triplets and sets the diagonal
so rows sum to zero. Builders that feed the Siegmund conjugation accept
``exact=True`` and then return dense matrices of ``Fraction`` entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .params import ModelParams


class _Cemetery:
    """The absorbing cemetery state Δ. A singleton, so it cannot be forged from an int."""

    _instance: _Cemetery | None = None

    def __new__(cls) -> _Cemetery:
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "DELTA"

    def __reduce__(self) -> str:
        return "DELTA"


DELTA = _Cemetery()
StateLabel = Union[int, _Cemetery, tuple]

DESCENDANT_CAP = 20


def label_str(x: StateLabel) -> str:
    if x is DELTA:
        return "DELTA"
    if isinstance(x, tuple):
        return "(" + ";".join(str(v) for v in x) + ")"
    return str(x)


@dataclass(frozen=True)
class Ctmc:
    """Labelled finite state space plus a CSR generator with materialised diagonal."""

    states: tuple
    Q: sp.csr_matrix
    name: str = ""
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        n = len(self.states)
        if self.Q.shape != (n, n):
            raise ValueError(f"generator shape {self.Q.shape} does not match {n} states")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.states)})

    def __len__(self) -> int:
        return len(self.states)

    def index(self, label: StateLabel) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"state {label!r} not in {self.name or 'chain'}") from None

    def dense(self) -> np.ndarray:
        return self.Q.toarray()

    def row_sum_error(self) -> float:
        return float(np.max(np.abs(np.asarray(self.Q.sum(axis=1)).ravel()))) if len(self) else 0.0

    def min_off_diagonal(self) -> float:
        coo = self.Q.tocoo()
        off = coo.data[coo.row != coo.col]
        return float(off.min()) if off.size else 0.0

    def to_matrix_market(self) -> str:
        coo = self.Q.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [f"%%MatrixMarket matrix coordinate real general index-base=0 {self.Q.shape[0]} {self.Q.shape[1]} {coo.nnz}"]
        for i in order:
            lines.append(f"{coo.row[i]} {coo.col[i]} {float(coo.data[i])!r}")
        return "\n".join(lines) + "\n"


def _assemble(states: Sequence, triplets: Iterable[tuple[int, int, float]], name: str) -> Ctmc:
    n = len(states)
    rows, cols, vals = [], [], []
    out = np.zeros(n)
    for i, j, r in triplets:
        if i == j:
            continue
        r = float(r)
        if r == 0.0:
            continue
        if r < 0.0:
            raise ValueError(f"negative rate {r} from state {states[i]!r} to {states[j]!r}")
        rows.append(i)
        cols.append(j)
        vals.append(r)
    # Accumulate duplicates before forming the diagonal.
    off = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    off.sum_duplicates()
    out = np.asarray(off.sum(axis=1)).ravel()
    Q = (off - sp.diags(out, format="csr")).tocsr()
    Q.sort_indices()
    return Ctmc(tuple(states), Q, name)


def _assemble_exact(n: int, triplets: Iterable[tuple[int, int, Fraction]]) -> np.ndarray:
    Q = np.empty((n, n), dtype=object)
    Q[:] = Fraction(0)
    for i, j, r in triplets:
        if i != j and r != 0:
            Q[i, j] += r
    for i in range(n):
        Q[i, i] = -sum(Q[i, j] for j in range(n) if j != i)
    return Q


# ---------------------------------------------------------------------------
# Combinatorics


@lru_cache(maxsize=None)
def stirling2(l: int, j: int) -> int:
    """Stirling number of the second kind via S(l,j) = j·S(l−1,j) + S(l−1,j−1).

    Python integers are arbitrary precision, so there is no silent wraparound.
    """
    if l < 0 or j < 0:
        raise ValueError("stirling2 needs non-negative arguments")
    if l == 0 and j == 0:
        return 1
    if l == 0 or j == 0 or j > l:
        return 0
    row = [1] + [0] * j
    for ll in range(1, l + 1):
        new = [0] * (j + 1)
        for jj in range(1, min(ll, j) + 1):
            new[jj] = jj * row[jj] + row[jj - 1]
        row = new
    return row[j]


@lru_cache(maxsize=None)
def branching_coeff(n: int, m: int, j: int) -> int:
    """C^n_{mj} = Σ_{ℓ=j}^{m} binom(m,ℓ)·S(ℓ,j)·n^{m−ℓ}."""
    if not 1 <= j <= m:
        raise ValueError(f"branching_coeff needs 1 <= j <= m, got j={j}, m={m}")
    return sum(math.comb(m, l) * stirling2(l, j) * n ** (m - l) for l in range(j, m + 1))


def falling(x: int, j: int) -> int:
    """Falling factorial x^{↓j} in exact integers."""
    out = 1
    for i in range(j):
        out *= x - i
    return out


# ---------------------------------------------------------------------------
# Rate helpers shared by float and exact assembly


def _numerics(params: ModelParams, exact: bool):
    conv: Callable = Fraction if exact else float
    s = {m: conv(r) for m, r in params.s.items()}
    return conv, conv(params.N), conv(params.u), conv(params.nu0), conv(1) - conv(params.nu0), s


def _selective_loss(k: int, N, s: dict) -> object:
    """Σ_m s_m·k·(1 − (k/N)^m): unfit-to-fit flow through selection."""
    x = k / N
    return sum((r * k * (1 - x**m) for m, r in s.items()), 0 * N)


def _y_rates(params: ModelParams, exact: bool):
    conv, N, u, nu0, nu1, s = _numerics(params, exact)
    n = params.N
    lam = [k * (n - k) / N + (n - k) * u * nu1 for k in range(n + 1)]
    mu = [k * (n - k) / N + k * u * nu0 + _selective_loss(k, N, s) for k in range(n + 1)]
    return lam, mu


def _bd_triplets(lam: Sequence, mu: Sequence) -> list:
    trip = []
    for k in range(len(lam)):
        if k + 1 < len(lam):
            trip.append((k, k + 1, lam[k]))
        if k > 0:
            trip.append((k, k - 1, mu[k]))
    return trip


def build_Q_Y_ftw(params: ModelParams, exact: bool = False):
    """Forward unfit-count chain on [N]_0 under fittest-type-wins selection."""
    lam, mu = _y_rates(params, exact)
    trip = _bd_triplets(lam, mu)
    if exact:
        return _assemble_exact(params.N + 1, trip)
    return _assemble(range(params.N + 1), trip, "Y")


def build_Q_Y_dom(params: ModelParams) -> Ctmc:
    """Forward unfit-count chain with selective death rate Σ_m ŝ_m (N−k)(k/N)^m."""
    n = params.N
    N = float(n)
    u, nu0, nu1 = params.u, params.nu0, params.nu1
    sh = params.selection.dom_rates()
    lam = [k * (n - k) / N + (n - k) * u * nu1 for k in range(n + 1)]
    mu = [
        k * (n - k) / N + k * u * nu0 + sum(r * (n - k) * (k / N) ** m for m, r in sh.items())
        for k in range(n + 1)
    ]
    return _assemble(range(n + 1), _bd_triplets(lam, mu), "Y_dom")


def _upward_triplets(n_lines: int, N_int: int, N, s: dict, exact: bool):
    """Branching n → n+j at Σ_{m≥j} s_m (n/N^m)(N−n)^{↓j} C^n_{mj}."""
    out = []
    n = n_lines
    free = N_int - n
    for m, r in s.items():
        denom = N_int**m
        for j in range(1, min(m, free) + 1):
            count = n * falling(free, j) * branching_coeff(n, m, j)
            frac = Fraction(count, denom) if exact else count / denom
            out.append((n + j, r * frac))
    return out


def _r_triplets(params: ModelParams, exact: bool):
    conv, N, u, nu0, nu1, s = _numerics(params, exact)
    n_int = params.N
    delta = n_int + 1
    trip = []
    for n in range(1, n_int + 1):
        trip.append((n, n - 1, n * (n - 1) / N + n * u * nu1))
        trip.append((n, delta, n * u * nu0))
        for target, rate in _upward_triplets(n, n_int, N, s, exact):
            trip.append((n, target, rate))
    return trip


def build_Q_R(params: ModelParams, exact: bool = False):
    """Killed-ASG line counter on [0, 1, …, N, Δ] with Δ last."""
    trip = _r_triplets(params, exact)
    if exact:
        return _assemble_exact(params.N + 2, trip)
    return _assemble(list(range(params.N + 1)) + [DELTA], trip, "R")


def build_Q_L(params: ModelParams) -> Ctmc:
    """Pruned-lookdown-ASG line counter on [N] (state n at index n−1)."""
    n_int = params.N
    N = float(n_int)
    u, nu0, nu1 = params.u, params.nu0, params.nu1
    s = params.s
    trip = []
    for n in range(1, n_int + 1):
        i = n - 1
        if n > 1:
            trip.append((i, i - 1, n * (n - 1) / N + u * nu1 * (n - 1)))
            for j in range(1, n):
                trip.append((i, j - 1, u * nu0))
        for target, rate in _upward_triplets(n, n_int, N, s, False):
            trip.append((i, target - 1, rate))
    return _assemble(range(1, n_int + 1), trip, "L")


def build_Q_Ytilde(params: ModelParams) -> Ctmc:
    """Forward chain whose absorption at N gives the common-ancestor type."""
    n = params.N
    N = float(n)
    u, nu0, nu1 = params.u, params.nu0, params.nu1
    s = params.s
    trip = []
    for k in range(1, n):
        neutral = k * (n - k) / N
        trip.append((k, k + 1, neutral + (n - k) * u * nu1 * k / (k + 1)))
        trip.append((k, k - 1, neutral + _selective_loss(k, N, s) + k * u * nu0 * (n - k) / (n - k + 1)))
        trip.append((k, n, k * u * nu0 / (n - k + 1)))
        trip.append((k, 0, (n - k) * u * nu1 / (k + 1)))
    return _assemble(range(n + 1), trip, "Ytilde")


def _siegmund_triplets(params: ModelParams, exact: bool):
    conv, N, u, nu0, nu1, s = _numerics(params, exact)
    n = params.N
    trip = []
    for k in range(1, n + 1):
        x = k / N
        birth = k * ((n - k) / N + u * nu0 + sum((r * (1 - x**m) for m, r in s.items()), 0 * N))
        trip.append((k, k + 1, birth))
        trip.append((k, k - 1, (n - k + 1) * ((k - 1) / N + u * nu1)))
    return trip


def build_Q_siegmund(params: ModelParams, exact: bool = False):
    """Siegmund dual of the forward chain on [0, …, N+1]; N+1 plays the role of Δ."""
    trip = _siegmund_triplets(params, exact)
    if exact:
        return _assemble_exact(params.N + 2, trip)
    return _assemble(range(params.N + 2), trip, "Y_siegmund")


def siegmund_dual_of_birth_death(chain: Ctmc) -> Ctmc:
    """Generic Siegmund dual of a birth-death chain on {0..K}: λ*_x = μ_x, μ*_x = λ_{x−1}."""
    Q = chain.Q.toarray()
    K = Q.shape[0] - 1
    trip = []
    for x in range(K + 2):
        if 1 <= x <= K:
            trip.append((x, x + 1, Q[x, x - 1]))
        if 1 <= x <= K + 1:
            trip.append((x, x - 1, Q[x - 1, x] if x <= K else 0.0))
    return _assemble(range(K + 2), trip, "siegmund")


def descendant_states(N: int) -> list[tuple[int, int, int]]:
    """Θ = {(k,d,b): d ≤ k, b ≤ N−k} in lexicographic order."""
    return [(k, d, b) for k in range(N + 1) for d in range(k + 1) for b in range(N - k + 1)]


def build_Q_descendant(params: ModelParams, cap: int = DESCENDANT_CAP) -> Ctmc:
    """Joint chain (Y, D, B) of unfit count and unfit/fit descendants of a starting set.

    Any transition in which a fit individual replaces another one proceeds at
    the neutral rate times 1 + Σ_m s_m Σ_{i<m} (k/N)^i.
    """
    n = params.N
    if n > cap:
        raise ValueError(f"descendant space capped at N <= {cap}, got N = {n}")
    N = float(n)
    u, nu0, nu1 = params.u, params.nu0, params.nu1
    s = params.s
    states = descendant_states(n)
    idx = {st: i for i, st in enumerate(states)}
    trip = []

    def add(src, dst, rate):
        if rate > 0.0:
            trip.append((idx[src], idx[dst], rate))

    for k, d, b in states:
        x = k / N
        boost = 1.0 + sum(r * sum(x**i for i in range(m)) for m, r in s.items())
        a_u, a_f = d, b  # unfit and fit descendants
        o_u, o_f = k - d, n - k - b  # unfit and fit others
        st = (k, d, b)
        add(st, (k, d + 1, b), a_u * o_u / N)
        add(st, (k, d - 1, b), o_u * a_u / N)
        add(st, (k, d, b + 1), a_f * o_f / N * boost)
        add(st, (k, d, b - 1), o_f * a_f / N * boost)
        add(st, (k + 1, d, b), o_u * o_f / N)
        add(st, (k - 1, d, b), o_f * o_u / N * boost)
        add(st, (k + 1, d + 1, b - 1), a_u * a_f / N)
        add(st, (k - 1, d - 1, b + 1), a_f * a_u / N * boost)
        add(st, (k + 1, d + 1, b), a_u * o_f / N)
        add(st, (k - 1, d - 1, b), o_f * a_u / N * boost)
        add(st, (k - 1, d, b + 1), a_f * o_u / N * boost)
        add(st, (k + 1, d, b - 1), o_u * a_f / N)
        add(st, (k - 1, d - 1, b + 1), a_u * u * nu0)
        add(st, (k - 1, d, b), o_u * u * nu0)
        add(st, (k + 1, d + 1, b - 1), a_f * u * nu1)
        add(st, (k + 1, d, b), o_f * u * nu1)
    return _assemble(states, trip, "descendant")


# ---------------------------------------------------------------------------
# Siegmund transformation matrices on [0, 1, …, N, Δ]


def build_T(N: int, exact: bool = False) -> np.ndarray:
    """T(j,k) = binom(k−1, j−1)/binom(N, j) on [N]; 1 at 0 and Δ."""
    T = np.empty((N + 2, N + 2), dtype=object)
    T[:] = Fraction(0)
    T[0, 0] = Fraction(1)
    T[N + 1, N + 1] = Fraction(1)
    for j in range(1, N + 1):
        c = math.comb(N, j)
        for k in range(j, N + 1):
            T[j, k] = Fraction(math.comb(k - 1, j - 1), c)
    return T if exact else T.astype(float)


def build_T_inv(N: int, exact: bool = False) -> np.ndarray:
    """T⁻¹(j,k) = (−1)^{j+k} binom(N,k) binom(k−1, j−1) on [N]; 1 at 0 and Δ."""
    T = np.empty((N + 2, N + 2), dtype=object)
    T[:] = Fraction(0)
    T[0, 0] = Fraction(1)
    T[N + 1, N + 1] = Fraction(1)
    for j in range(1, N + 1):
        for k in range(j, N + 1):
            T[j, k] = Fraction((-1) ** (j + k) * math.comb(N, k) * math.comb(k - 1, j - 1))
    return T if exact else T.astype(float)


def conjugate(Q, T: np.ndarray, T_inv: np.ndarray) -> np.ndarray:
    """Return T⁻¹ Q T.

    If either transform is a Fraction array the product is formed in exact
    rational arithmetic (float entries of Q are converted exactly), which
    sidesteps the cancellation in the alternating signs of T⁻¹.
    """
    if sp.issparse(Q):
        Q = Q.toarray()
    Q = np.asarray(Q)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"Q must be square, got shape {Q.shape}")
    if T.shape != Q.shape or T_inv.shape != Q.shape:
        raise ValueError(f"dimension mismatch: Q {Q.shape}, T {T.shape}, T_inv {T_inv.shape}")
    if T.dtype == object or T_inv.dtype == object:
        to_frac = np.vectorize(Fraction, otypes=[object])
        Q, T, T_inv = to_frac(Q), to_frac(T), to_frac(T_inv)
    return T_inv.dot(Q).dot(T)
