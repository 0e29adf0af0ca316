"""Duality functions and residual reports for the duality identities."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any, Sequence

import numpy as np

from . import generators as gen
from .ctmc import DEFAULT_TOL, transient, transition_matrix
from .generators import DELTA, StateLabel
from .params import ModelParams


def H_F(k: int, n: StateLabel, N: int) -> float:
    """k^{↓n}/N^{↓n} as a running product; 1 at n = 0 and 0 at n = Δ."""
    if n is DELTA:
        return 0.0
    if not isinstance(n, int) or n < 0 or n > N:
        raise ValueError(f"n must be in [0, {N}] or DELTA, got {n!r}")
    out = 1.0
    for i in range(n):
        out *= (k - i) / (N - i)
        if out == 0.0:
            break
    return out


def H_S(x: int, x_star: int) -> int:
    return 1 if x >= x_star else 0


def H_moment(y: float, n: StateLabel) -> float:
    if n is DELTA:
        return 0.0
    return float(y) ** int(n)


def hf_matrix(N: int, labels: Sequence[StateLabel]) -> np.ndarray:
    """H[k, j] = H_F(k, labels[j]) for k ∈ [N]_0."""
    H = np.zeros((N + 1, len(labels)))
    ks = np.arange(N + 1, dtype=float)
    for j, n in enumerate(labels):
        if n is DELTA:
            continue
        col = np.ones(N + 1)
        for i in range(n):
            col *= (ks - i) / (N - i)
        H[:, j] = col
    return H


@dataclass
class DualityReport:
    identity: str
    N: int
    params: dict[str, Any]
    t: float | None
    max_abs_residual: float
    argmax: list
    mean_abs_residual: float
    grid: str = ""
    extra: dict[str, Any] = field(default_factory=dict)

    def passed(self, tol: float) -> bool:
        return self.max_abs_residual <= tol

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, default=_json_default)


def _json_default(o: Any) -> Any:
    if o is DELTA:
        return "DELTA"
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, Fraction):
        return str(o)
    raise TypeError(type(o))


def residual_report(identity: str, lhs: np.ndarray, rhs: np.ndarray, rows: Sequence,
                    cols: Sequence, N: int, params: dict, t: float | None, grid: str) -> DualityReport:
    res = np.abs(np.asarray(lhs, dtype=float) - np.asarray(rhs, dtype=float))
    if res.ndim == 1:
        res = res[:, None]
    i, j = np.unravel_index(int(np.argmax(res)), res.shape)
    return DualityReport(
        identity=identity,
        N=N,
        params=params,
        t=t,
        max_abs_residual=float(res.max()),
        argmax=[rows[i], cols[j]],
        mean_abs_residual=float(res.mean()),
        grid=grid,
    )


def check_factorial_duality(params: ModelParams, t: float, tol: float = DEFAULT_TOL) -> DualityReport:
    """E_k[H_F(Y_t, n)] against E_n[H_F(k, R_t)] over [N]_0 × [N]_{0,Δ}."""
    N = params.N
    qy = gen.build_Q_Y_ftw(params)
    qr = gen.build_Q_R(params)
    H = hf_matrix(N, qr.states)
    if t == 0:
        lhs = rhs = H
    else:
        lhs = transition_matrix(qy, t, tol) @ H
        rhs = (transition_matrix(qr, t, tol) @ H.T).T
    return residual_report("factorial", lhs, rhs, list(qy.states), list(qr.states), N,
                           params.to_json(), t, "k in [N]_0, n in [N]_{0,Delta}")


def check_ytilde_L_duality(params: ModelParams, t: float, tol: float = DEFAULT_TOL) -> DualityReport:
    """E_k[H_F(Ỹ_t, n)] against E_n[H_F(k, L_t)] over [N]_0 × [N].

    The report's extra field carries the residual of h_t(k) = E_k[Ỹ_t]/N.
    """
    N = params.N
    qt = gen.build_Q_Ytilde(params)
    ql = gen.build_Q_L(params)
    H = hf_matrix(N, ql.states)
    if t == 0:
        lhs = rhs = H
        Pt = np.eye(N + 1)
        Pl = np.eye(N)
    else:
        Pt = transition_matrix(qt, t, tol)
        Pl = transition_matrix(ql, t, tol)
        lhs = Pt @ H
        rhs = (Pl @ H.T).T
    rep = residual_report("ytilde_L", lhs, rhs, list(qt.states), list(ql.states), N,
                          params.to_json(), t, "k in [N]_0, n in [N]")
    h_t = H @ Pl[0]
    mean_ytilde = Pt @ np.arange(N + 1) / N
    rep.extra["h_representation_max_abs_residual"] = float(np.max(np.abs(h_t - mean_ytilde)))
    return rep


def check_siegmund_duality(params: ModelParams, t: float, tol: float = DEFAULT_TOL) -> DualityReport:
    """P(Y_t ≥ x* | x) against P(x ≥ Y^S_t | x*) over [N]_0 × [N+1]_0."""
    N = params.N
    qy = gen.build_Q_Y_ftw(params)
    qs = gen.build_Q_siegmund(params)
    if t == 0:
        Py = np.eye(N + 1)
        Ps = np.eye(N + 2)
    else:
        Py = transition_matrix(qy, t, tol)
        Ps = transition_matrix(qs, t, tol)
    # lhs[x, x*] = Σ_{y ≥ x*} Py[x, y]; rhs[x, x*] = Σ_{z ≤ x} Ps[x*, z]
    tail = np.concatenate((np.cumsum(Py[:, ::-1], axis=1)[:, ::-1], np.zeros((N + 1, 1))), axis=1)
    head = np.cumsum(Ps, axis=1)[:, : N + 1].T
    return residual_report("siegmund", tail, head, list(range(N + 1)), list(range(N + 2)), N,
                           params.to_json(), t, "x in [N]_0, x* in [N+1]_0")


def check_conjugation(params: ModelParams, exact: bool = False) -> DualityReport:
    """T⁻¹ Q_R T against the Siegmund generator, and T Q_S T⁻¹ against Q_R.

    The transforms are always applied in rational arithmetic. With exact=True
    the generators are rational too and the residual is exactly zero.
    """
    N = params.N
    if N > 25:
        raise ValueError("conjugation checks are only meaningful for N <= 25")
    T = gen.build_T(N, exact=True)
    Ti = gen.build_T_inv(N, exact=True)
    qr = gen.build_Q_R(params, exact=exact)
    qs = gen.build_Q_siegmund(params, exact=exact)
    if not exact:
        qr, qs = qr.dense(), qs.dense()
    fwd = gen.conjugate(qr, T, Ti) - qs
    back = gen.conjugate(qs, Ti, T) - qr
    res = np.maximum(np.abs(fwd.astype(float)), np.abs(back.astype(float)))
    labels = list(range(N + 1)) + [DELTA]
    rep = residual_report("conjugation", res, np.zeros_like(res), labels, labels, N,
                          params.to_json(), None,
                          "entrywise on [N]_{0,Delta}, both directions" + (", rational" if exact else ""))
    if exact:
        rep.extra["exact_zero"] = bool(all(x == 0 for x in fwd.ravel()) and all(x == 0 for x in back.ravel()))
    return rep


def check_descendant_equality(params: ModelParams, t: float, tol: float = DEFAULT_TOL) -> DualityReport:
    """E[D_t + B_t | (k, k, 0)] against E_k[Ỹ_t] for every k."""
    N = params.N
    qd = gen.build_Q_descendant(params)
    qt = gen.build_Q_Ytilde(params)
    starts = [qd.index((k, k, 0)) for k in range(N + 1)]
    total = np.array([d + b for (_, d, b) in qd.states], dtype=float)
    if t == 0:
        lhs = total[starts]
        rhs = np.arange(N + 1, dtype=float)
    else:
        lhs = transient(qd, np.eye(len(qd))[starts], t, tol) @ total
        rhs = transition_matrix(qt, t, tol) @ np.arange(N + 1)
    return residual_report("descendant", lhs, rhs, list(range(N + 1)), ["D+B"], N,
                           params.to_json(), t, "k in [N]_0 from (k,k,0)")
