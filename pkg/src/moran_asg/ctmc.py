"""Finite-CTMC engine: stationary laws, absorption, transient laws and simulation."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components
from scipy.stats import poisson

from .generators import Ctmc, StateLabel, label_str

NEG_CLAMP = 1e-14
DEFAULT_TOL = 1e-12
DENSE_LIMIT = 400

T = TypeVar("T")
R = TypeVar("R")


# ---------------------------------------------------------------------------
# Randomness and parallelism


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by (master seed, replicate index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def default_threads() -> int:
    env = os.environ.get("MORAN_ASG_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int | None = None) -> list[R]:
    """Map in a thread pool; results come back in input order."""
    threads = default_threads() if threads is None else max(1, threads)
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Value types


@dataclass(frozen=True)
class Dist:
    states: tuple
    p: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=float)
        if p.shape != (len(self.states),):
            raise ValueError(f"probability vector of shape {p.shape} for {len(self.states)} states")
        if p.size and p.min() < -NEG_CLAMP:
            raise ValueError(f"negative probability {p.min()} beyond roundoff")
        p = np.where(p < 0.0, 0.0, p)
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @classmethod
    def delta(cls, chain: Ctmc, label: StateLabel) -> Dist:
        p = np.zeros(len(chain))
        p[chain.index(label)] = 1.0
        return cls(chain.states, p)

    def __getitem__(self, label: StateLabel) -> float:
        return float(self.p[self.states.index(label)])

    def to_csv(self) -> str:
        rows = ["state,probability"]
        rows += [f"{label_str(s)},{float(x)!r}" for s, x in zip(self.states, self.p)]
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class PathSample:
    times: np.ndarray
    states: tuple
    seed: int | None = None


def expect(dist: Dist, f: Callable[[StateLabel], float]) -> float:
    return float(sum(f(x) * px for x, px in zip(dist.states, dist.p) if px != 0.0))


# ---------------------------------------------------------------------------
# Class structure


def closed_classes(chain: Ctmc) -> list[list[int]]:
    """Closed communicating classes (index lists), via strongly connected components."""
    n = len(chain)
    coo = chain.Q.tocoo()
    mask = (coo.row != coo.col) & (coo.data > 0.0)
    graph = sp.csr_matrix((np.ones(mask.sum()), (coo.row[mask], coo.col[mask])), shape=(n, n))
    ncomp, labels = connected_components(graph, directed=True, connection="strong")
    leaks = np.zeros(ncomp, dtype=bool)
    cross = labels[coo.row[mask]] != labels[coo.col[mask]]
    leaks[labels[coo.row[mask]][cross]] = True
    out = [np.flatnonzero(labels == c).tolist() for c in range(ncomp) if not leaks[c]]
    return sorted(out, key=lambda c: c[0])


def _resolve_class(chain: Ctmc, closed_class: Iterable[StateLabel] | None) -> np.ndarray:
    if closed_class is not None:
        return np.array(sorted(chain.index(x) for x in closed_class), dtype=int)
    classes = closed_classes(chain)
    if len(classes) != 1:
        shown = [[label_str(chain.states[i]) for i in c[:5]] for c in classes]
        raise ValueError(f"{len(classes)} closed classes {shown}; pass closed_class to choose one")
    return np.array(classes[0], dtype=int)


def _is_birth_death(Q: sp.csr_matrix) -> bool:
    coo = Q.tocoo()
    return bool(np.all(np.abs(coo.row - coo.col) <= 1))


# ---------------------------------------------------------------------------
# Stationary law


def _birth_death_stationary(Qc: sp.csr_matrix) -> np.ndarray:
    """Detailed balance π_k ∝ Π_{j≤k} λ_{j−1}/μ_j, accumulated in logs."""
    n = Qc.shape[0]
    if n == 1:
        return np.ones(1)
    up = Qc.diagonal(1)
    down = Qc.diagonal(-1)
    if np.any(up <= 0.0) or np.any(down <= 0.0):
        raise ValueError("birth-death class is not irreducible")
    logp = np.concatenate(([0.0], np.cumsum(np.log(up) - np.log(down))))
    p = np.exp(logp - logp.max())
    return p / p.sum()


def _linear_stationary(Qc: sp.csr_matrix) -> np.ndarray:
    n = Qc.shape[0]
    if n == 1:
        return np.ones(1)
    A = Qc.T.tolil()
    A[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[-1] = 1.0
    if n <= DENSE_LIMIT * 5:
        p = np.linalg.solve(A.toarray(), b)
    else:
        p = spla.spsolve(A.tocsc(), b)
    if not np.all(np.isfinite(p)):
        raise ArithmeticError("stationary solve did not converge")
    return p


def stationary(chain: Ctmc, closed_class: Iterable[StateLabel] | None = None) -> Dist:
    """Stationary law supported on the unique (or caller-chosen) closed class."""
    idx = _resolve_class(chain, closed_class)
    Qc = chain.Q[idx][:, idx].tocsr()
    contiguous = idx.size == 0 or np.all(np.diff(idx) == 1)
    if contiguous and _is_birth_death(Qc):
        pc = _birth_death_stationary(Qc)
    else:
        pc = _linear_stationary(Qc)
    if pc.min() < -1e-12:
        raise ArithmeticError(f"stationary solve produced negative mass {pc.min()}")
    p = np.zeros(len(chain))
    p[idx] = np.clip(pc, 0.0, None)
    p /= p.sum()
    return Dist(chain.states, p)


def stationary_residual(chain: Ctmc, dist: Dist) -> float:
    return float(np.max(np.abs(chain.Q.T @ dist.p)))


# ---------------------------------------------------------------------------
# Absorption


def absorption_probs(chain: Ctmc, target: StateLabel) -> np.ndarray:
    """P(absorbed at target | start) for every state of the chain.

    Solves Q_TT h = −Q_T,target on the transient states; states in other
    closed classes get 0 and the target gets 1.
    """
    t = chain.index(target)
    row = chain.Q.getrow(t)
    if row.nnz and np.any(row.data[row.indices != t] != 0.0):
        raise ValueError(f"target {target!r} is not absorbing")
    recurrent = set()
    for c in closed_classes(chain):
        recurrent.update(c)
    transient_idx = np.array([i for i in range(len(chain)) if i not in recurrent], dtype=int)
    h = np.zeros(len(chain))
    h[t] = 1.0
    if transient_idx.size:
        Q = chain.Q.tocsr()
        A = Q[transient_idx][:, transient_idx]
        b = -np.asarray(Q[transient_idx][:, [t]].toarray()).ravel()
        if transient_idx.size <= DENSE_LIMIT * 5:
            x = np.linalg.solve(A.toarray(), b)
        else:
            x = spla.spsolve(A.tocsc(), b)
        h[transient_idx] = x
    return h


# ---------------------------------------------------------------------------
# Transient law by uniformization


def _poisson_window(mean: float, tol: float) -> tuple[int, np.ndarray]:
    lo = int(poisson.ppf(tol / 4, mean)) if mean > 0 else 0
    lo = max(lo - 1, 0)
    hi = int(poisson.isf(tol / 4, mean)) + 1
    ks = np.arange(lo, hi + 1)
    return lo, poisson.pmf(ks, mean)


def transient(chain: Ctmc, p0, t: float, tol: float = DEFAULT_TOL):
    """p0·exp(Qt) by uniformization with discarded Poisson mass below tol.

    p0 may be a Dist, a probability vector, or a 2-D array whose rows are
    initial laws. The return type mirrors the input.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    as_dist = isinstance(p0, Dist)
    V = np.array(p0.p if as_dist else p0, dtype=float)
    single = V.ndim == 1
    V = np.atleast_2d(V)
    lam = float(np.max(np.abs(chain.Q.diagonal()))) if len(chain) else 0.0
    if t == 0.0 or lam == 0.0:
        out = V
    else:
        n = len(chain)
        P = sp.identity(n, format="csr") + chain.Q / lam
        step = P.toarray() if n <= DENSE_LIMIT else P.tocsr()
        lo, w = _poisson_window(lam * t, tol)
        out = np.zeros_like(V)
        cur = V
        for _ in range(lo):
            cur = cur @ step if n <= DENSE_LIMIT else (step.T @ cur.T).T
        for k, wk in enumerate(w):
            if k:
                cur = cur @ step if n <= DENSE_LIMIT else (step.T @ cur.T).T
            out += wk * cur
    if out.size and out.min() < -NEG_CLAMP:
        raise ArithmeticError(f"uniformization produced negative mass {out.min()}")
    out = np.where(out < 0.0, 0.0, out)
    if single:
        out = out[0]
        return Dist(chain.states, out) if as_dist else out
    return out


def transition_matrix(chain: Ctmc, t: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """exp(Qt) as a dense matrix (rows are transient laws from each state)."""
    return transient(chain, np.eye(len(chain)), t, tol)


# ---------------------------------------------------------------------------
# Simulation


def _row(chain: Ctmc, i: int) -> tuple[np.ndarray, np.ndarray]:
    Q = chain.Q
    lo, hi = Q.indptr[i], Q.indptr[i + 1]
    cols = Q.indices[lo:hi]
    vals = Q.data[lo:hi]
    keep = (cols != i) & (vals > 0.0)
    return cols[keep], vals[keep]


def simulate(chain: Ctmc, x0: StateLabel, horizon: float, rng: np.random.Generator,
             seed: int | None = None) -> PathSample:
    """Exact jump-chain sample: exponential holding, next state ∝ off-diagonal row."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    i = chain.index(x0)
    times = [0.0]
    states = [x0]
    t = 0.0
    rows: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    while True:
        if i not in rows:
            cols, vals = _row(chain, i)
            rows[i] = (cols, np.cumsum(vals))
        cols, cum = rows[i]
        if cols.size == 0:
            break
        total = cum[-1]
        t += rng.exponential(1.0 / total)
        if t > horizon:
            break
        j = int(np.searchsorted(cum, rng.random() * total, side="right"))
        i = int(cols[min(j, cols.size - 1)])
        times.append(t)
        states.append(chain.states[i])
    return PathSample(np.array(times), tuple(states), seed)


def jump_law(chain: Ctmc, x0: StateLabel) -> dict:
    """Distribution of the first jump target from x0 (empty for absorbing states)."""
    cols, vals = _row(chain, chain.index(x0))
    tot = vals.sum()
    return {chain.states[c]: v / tot for c, v in zip(cols, vals)}


def sample_first_jumps(chain: Ctmc, x0: StateLabel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of n independent first-jump targets from x0 (vectorised jump-chain step)."""
    cols, vals = _row(chain, chain.index(x0))
    if cols.size == 0:
        return np.full(n, chain.index(x0))
    return cols[rng.choice(cols.size, size=n, p=vals / vals.sum())]
