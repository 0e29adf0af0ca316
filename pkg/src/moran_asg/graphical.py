"""Poissonian graphical representation: event logs, forward type and ancestry
propagation, and backward extraction of the killed and pruned-lookdown ASGs.

Logs are stored as flat arrays so that many realisations can be swept by
compiled kernels. A batch concatenates logs and keeps per-log offsets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from numba import njit

from .ctmc import replicate_rng
from .generators import DELTA, StateLabel
from .params import ModelParams

NEUTRAL = 0
SELECTIVE = 1
MUT_DEL = 2
MUT_BEN = 3
KIND_NAMES = ("neutral", "selective", "mut_del", "mut_ben")

LOG_FORMAT = "moran-asg-eventlog"
LOG_VERSION = 1

R_DELTA = -1  # Δ in compiled R paths


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    dst: int
    src: int | None = None
    J: tuple[int, ...] = ()


@dataclass(frozen=True)
class LogBatch:
    """Several event logs in flat arrays; log i spans events offsets[i]:offsets[i+1]."""

    N: int
    horizon: float
    seed: int | None
    offsets: np.ndarray
    t: np.ndarray
    kind: np.ndarray
    dst: np.ndarray
    src: np.ndarray
    order: np.ndarray
    J: np.ndarray

    def __len__(self) -> int:
        return self.offsets.size - 1

    def log(self, i: int) -> EventLog:
        a, b = int(self.offsets[i]), int(self.offsets[i + 1])
        return EventLog(self.N, self.horizon, self.seed, self.t[a:b], self.kind[a:b], self.dst[a:b],
                        self.src[a:b], self.order[a:b], self.J[a:b])


@dataclass(frozen=True)
class EventLog:
    N: int
    horizon: float
    seed: int | None
    t: np.ndarray
    kind: np.ndarray
    dst: np.ndarray
    src: np.ndarray
    order: np.ndarray
    J: np.ndarray

    def __len__(self) -> int:
        return self.t.size

    def events(self) -> Iterator[Event]:
        for e in range(len(self)):
            k = int(self.kind[e])
            if k == NEUTRAL:
                yield Event(float(self.t[e]), "neutral", int(self.dst[e]), int(self.src[e]))
            elif k == SELECTIVE:
                J = tuple(int(x) for x in self.J[e, : self.order[e]])
                yield Event(float(self.t[e]), "selective", int(self.dst[e]), None, J)
            else:
                yield Event(float(self.t[e]), KIND_NAMES[k], int(self.dst[e]))

    @classmethod
    def from_events(cls, N: int, horizon: float, events: Sequence[Event], seed: int | None = None) -> EventLog:
        """Build a log from explicit events (times must be strictly increasing)."""
        n = len(events)
        width = max([len(ev.J) for ev in events] + [1])
        t = np.array([ev.time for ev in events], dtype=float)
        if n and (np.any(np.diff(t) <= 0) or t[0] < 0 or t[-1] > horizon):
            raise ValueError("event times must be strictly increasing within [0, horizon]")
        kind = np.array([KIND_NAMES.index(ev.kind) for ev in events], dtype=np.int8)
        dst = np.array([ev.dst for ev in events], dtype=np.int64)
        src = np.array([-1 if ev.src is None else ev.src for ev in events], dtype=np.int64)
        order = np.array([len(ev.J) for ev in events], dtype=np.int64)
        J = np.full((n, width), -1, dtype=np.int64)
        for e, ev in enumerate(events):
            J[e, : len(ev.J)] = ev.J
        sites = np.concatenate((dst, src[src >= 0], J[J >= 0]))
        if sites.size and (sites.min() < 0 or sites.max() >= N):
            raise ValueError(f"sites must lie in [0, {N})")
        return cls(N, float(horizon), seed, t, kind, dst, src, order, J)

    def without_mutations(self) -> EventLog:
        keep = (self.kind == NEUTRAL) | (self.kind == SELECTIVE)
        return EventLog(self.N, self.horizon, self.seed, self.t[keep], self.kind[keep], self.dst[keep],
                        self.src[keep], self.order[keep], self.J[keep])

    def as_batch(self) -> LogBatch:
        return LogBatch(self.N, self.horizon, self.seed, np.array([0, len(self)]), self.t, self.kind,
                        self.dst, self.src, self.order, self.J)

    def to_jsonl(self) -> str:
        head = {"format": LOG_FORMAT, "version": LOG_VERSION, "N": self.N,
                "horizon": self.horizon, "seed": self.seed, "width": int(self.J.shape[1])}
        lines = [json.dumps(head)]
        for ev in self.events():
            rec = {"t": ev.time, "kind": ev.kind, "dst": ev.dst}
            if ev.src is not None:
                rec["src"] = ev.src
            if ev.J:
                rec["J"] = list(ev.J)
            lines.append(json.dumps(rec))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> EventLog:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = json.loads(lines[0])
        if head.get("format") != LOG_FORMAT or head.get("version") != LOG_VERSION:
            raise ValueError(f"unsupported event log header {head}")
        recs = [json.loads(ln) for ln in lines[1:]]
        n = len(recs)
        width = max(int(head.get("width", 1)), 1)
        J = np.full((n, width), -1, dtype=np.int64)
        kind = np.empty(n, dtype=np.int8)
        src = np.full(n, -1, dtype=np.int64)
        order = np.zeros(n, dtype=np.int64)
        for e, r in enumerate(recs):
            kind[e] = KIND_NAMES.index(r["kind"])
            if "src" in r:
                src[e] = r["src"]
            if "J" in r:
                order[e] = len(r["J"])
                J[e, : order[e]] = r["J"]
        return cls(int(head["N"]), float(head["horizon"]), head.get("seed"),
                   np.array([r["t"] for r in recs], dtype=float), kind,
                   np.array([r["dst"] for r in recs], dtype=np.int64), src, order, J)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())


# ---------------------------------------------------------------------------
# Sampling


def event_rates(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Component rates (neutral, deleterious, beneficial, selective by order) and their orders."""
    N = params.N
    s = params.s
    rates = [float(N), N * params.u * params.nu1, N * params.u * params.nu0]
    orders = [0, 0, 0]
    for m, r in s.items():
        rates.append(N * r)
        orders.append(m)
    return np.array(rates), np.array(orders)


def total_event_rate(params: ModelParams) -> float:
    """N(1 + u + Σ s_m)."""
    return float(event_rates(params)[0].sum())


def sample_event_logs(params: ModelParams, horizon: float, n_logs: int,
                      rng: np.random.Generator, seed: int | None = None,
                      width: int | None = None) -> LogBatch:
    """Sample n_logs independent realisations on [0, horizon] from one stream.

    A single Poisson clock of rate N(1 + u + Σ s_m) is thinned into components
    by their rates; sites are uniform and selective tuples J are uniform in [N]^m.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    N = params.N
    rates, orders = event_rates(params)
    total = rates.sum()
    width = max(int(orders.max()), 1) if width is None else width
    counts = rng.poisson(total * horizon, size=n_logs)
    n = int(counts.sum())
    offsets = np.concatenate(([0], np.cumsum(counts)))
    u = rng.random(n)
    comp = rng.choice(rates.size, size=n, p=rates / total)
    dst = rng.integers(0, N, size=n)
    src = rng.integers(0, N, size=n)
    J = rng.integers(0, N, size=(n, width))
    log_id = np.repeat(np.arange(n_logs), counts)
    perm = np.lexsort((u, log_id))
    t = u[perm] * horizon
    comp = comp[perm]
    kind = np.where(comp == 0, NEUTRAL, np.where(comp == 1, MUT_DEL, np.where(comp == 2, MUT_BEN, SELECTIVE)))
    order = orders[comp]
    src = np.where(kind == NEUTRAL, src, -1)
    J = np.where(np.arange(width)[None, :] < order[:, None], J, -1)
    return LogBatch(N, float(horizon), seed, offsets, t, kind.astype(np.int8), dst.astype(np.int64),
                    src.astype(np.int64), order.astype(np.int64), J.astype(np.int64))


def sample_event_log(params: ModelParams, horizon: float, rng: np.random.Generator,
                     seed: int | None = None) -> EventLog:
    return sample_event_logs(params, horizon, 1, rng, seed).log(0)


def with_selection_order(log: EventLog, m: int) -> EventLog:
    """Coupled log in which every selective event uses the first m entries of its tuple."""
    if m > log.J.shape[1]:
        raise ValueError(f"log carries tuples of width {log.J.shape[1]} < {m}")
    sel = log.kind == SELECTIVE
    order = np.where(sel, m, 0)
    J = np.where((np.arange(log.J.shape[1])[None, :] < m) & sel[:, None], log.J, -1)
    return EventLog(log.N, log.horizon, log.seed, log.t, log.kind, log.dst, log.src, order, J)


# ---------------------------------------------------------------------------
# Compiled sweeps


@njit(cache=True, nogil=True)
def _types_sweep(kind, dst, src, order, J, colour):
    c = colour.copy()
    for e in range(kind.size):
        k = kind[e]
        d = dst[e]
        if k == NEUTRAL:
            c[d] = c[src[e]]
        elif k == SELECTIVE:
            if c[d] == 1:
                for i in range(order[e]):
                    if c[J[e, i]] == 0:
                        c[d] = 0
                        break
        elif k == MUT_DEL:
            c[d] = 1
        else:
            c[d] = 0
    return c


@njit(cache=True, nogil=True)
def _ancestry_sweep(kind, dst, src, order, J, colour):
    c = colour.copy()
    anc = np.arange(c.size)
    for e in range(kind.size):
        k = kind[e]
        d = dst[e]
        if k == NEUTRAL:
            s = src[e]
            c[d] = c[s]
            anc[d] = anc[s]
        elif k == SELECTIVE:
            for i in range(order[e]):
                j = J[e, i]
                if c[j] == 0:
                    c[d] = 0
                    anc[d] = anc[j]
                    break
        elif k == MUT_DEL:
            c[d] = 1
        else:
            c[d] = 0
    return c, anc


@njit(cache=True, nogil=True)
def _r_sweep(t, kind, dst, src, order, J, horizon, inset, out_t, out_v):
    """Backward kASG sweep. Returns the number of recorded jumps (capped by out size)."""
    cap = out_t.size
    cnt = 0
    for i in range(inset.size):
        if inset[i]:
            cnt += 1
    nj = 0
    if cnt == 0:
        return 0
    for e in range(kind.size - 1, -1, -1):
        d = dst[e]
        if not inset[d]:
            continue
        k = kind[e]
        prev = cnt
        if k == NEUTRAL:
            s = src[e]
            if s == d:
                continue
            inset[d] = False
            if inset[s]:
                cnt -= 1
            else:
                inset[s] = True
        elif k == SELECTIVE:
            for i in range(order[e]):
                j = J[e, i]
                if not inset[j]:
                    inset[j] = True
                    cnt += 1
        elif k == MUT_DEL:
            inset[d] = False
            cnt -= 1
        else:
            if nj < cap:
                out_t[nj] = horizon - t[e]
                out_v[nj] = R_DELTA
            return nj + 1 if nj < cap else nj
        if cnt != prev:
            if nj >= cap:
                return nj
            out_t[nj] = horizon - t[e]
            out_v[nj] = cnt
            nj += 1
            if cnt == 0:
                return nj
    return nj


@njit(cache=True, nogil=True)
def _pld_sweep(t, kind, dst, src, order, J, horizon, start, N, out_t, out_l, snap, out_levels, out_imm,
               final_levels):
    """Backward pruned-lookdown sweep from a single site.

    Records (time, L) at every change of L, or, with snap set, a full state
    snapshot (levels and immune level) at every change of the state.
    Returns (number of records, final L, final immune site); the final level
    list is written to final_levels.
    """
    cap = out_t.size
    levels = np.full(N, -1, np.int64)
    pos = np.full(N, -1, np.int64)
    tmp = np.empty(N, np.int64)
    stamp = np.zeros(N, np.int64)
    L = 1
    levels[0] = start
    pos[start] = 0
    immune = start
    nrec = 0
    mark = 0
    for e in range(kind.size - 1, -1, -1):
        k = kind[e]
        d = dst[e]
        if pos[d] < 0:
            continue
        prevL = L
        changed = True
        if k == NEUTRAL:
            s = src[e]
            if s == d:
                continue
            li = pos[d]
            if pos[s] >= 0:
                lj = pos[s]
                lo = li if li < lj else lj
                hi = li if li > lj else lj
                for x in range(hi, L - 1):
                    levels[x] = levels[x + 1]
                    pos[levels[x]] = x
                L -= 1
                levels[lo] = s
                pos[s] = lo
                pos[d] = -1
                levels[L] = -1
            else:
                levels[li] = s
                pos[s] = li
                pos[d] = -1
            if immune == d:
                immune = s
        elif k == SELECTIVE:
            ld = pos[d]
            mark += 1
            n = ld
            for x in range(ld):
                tmp[x] = levels[x]
            for i in range(order[e]):
                j = J[e, i]
                if stamp[j] == mark:
                    continue
                if pos[j] >= 0 and pos[j] < ld:
                    continue
                stamp[j] = mark
                tmp[n] = j
                n += 1
            for x in range(ld, L):
                site = levels[x]
                if stamp[site] != mark:
                    tmp[n] = site
                    n += 1
            same = n == L
            if same:
                for x in range(L):
                    if tmp[x] != levels[x]:
                        same = False
                        break
            changed = not same
            for x in range(n):
                levels[x] = tmp[x]
                pos[tmp[x]] = x
            L = n
        elif k == MUT_DEL:
            x0 = pos[d]
            if d == immune:
                changed = x0 != L - 1
                for x in range(x0, L - 1):
                    levels[x] = levels[x + 1]
                    pos[levels[x]] = x
                levels[L - 1] = d
                pos[d] = L - 1
            else:
                for x in range(x0, L - 1):
                    levels[x] = levels[x + 1]
                    pos[levels[x]] = x
                L -= 1
                levels[L] = -1
                pos[d] = -1
        else:
            x0 = pos[d]
            changed = (x0 != L - 1) or (immune != d)
            for x in range(x0 + 1, L):
                pos[levels[x]] = -1
                levels[x] = -1
            L = x0 + 1
            immune = d
        if snap:
            if changed and nrec < cap:
                out_t[nrec] = horizon - t[e]
                out_l[nrec] = L
                out_imm[nrec] = pos[immune]
                for x in range(N):
                    out_levels[nrec, x] = levels[x]
                nrec += 1
        elif L != prevL:
            if nrec >= cap:
                break
            out_t[nrec] = horizon - t[e]
            out_l[nrec] = L
            nrec += 1
    for x in range(N):
        final_levels[x] = levels[x]
    return nrec, L, immune


@njit(cache=True, nogil=True)
def _descendant_sweep(t, kind, dst, src, order, J, colour, inA, out_t, out_y, out_d, out_b):
    cap = out_t.size
    c = colour.copy()
    a = inA.copy()
    Y = 0
    D = 0
    B = 0
    for i in range(c.size):
        if c[i] == 1:
            Y += 1
            if a[i]:
                D += 1
        elif a[i]:
            B += 1
    nrec = 0
    for e in range(kind.size):
        k = kind[e]
        d = dst[e]
        oc = c[d]
        oa = a[d]
        if k == NEUTRAL:
            s = src[e]
            c[d] = c[s]
            a[d] = a[s]
        elif k == SELECTIVE:
            for i in range(order[e]):
                j = J[e, i]
                if c[j] == 0:
                    c[d] = 0
                    a[d] = a[j]
                    break
        elif k == MUT_DEL:
            c[d] = 1
        else:
            c[d] = 0
        if oc == c[d] and oa == a[d]:
            continue
        Y += c[d] - oc
        D += (1 if (c[d] == 1 and a[d]) else 0) - (1 if (oc == 1 and oa) else 0)
        B += (1 if (c[d] == 0 and a[d]) else 0) - (1 if (oc == 0 and oa) else 0)
        if nrec >= cap:
            break
        out_t[nrec] = t[e]
        out_y[nrec] = Y
        out_d[nrec] = D
        out_b[nrec] = B
        nrec += 1
    return nrec


@njit(cache=True, nogil=True)
def _batch_r_first(offsets, t, kind, dst, src, order, J, horizon, N, n_start, out):
    """First-jump target of the kASG counter started from sites 0..n_start−1 (−2 if none)."""
    inset = np.zeros(N, np.bool_)
    bt = np.empty(1)
    bv = np.empty(1, np.int64)
    for i in range(offsets.size - 1):
        a, b = offsets[i], offsets[i + 1]
        inset[:] = False
        inset[:n_start] = True
        nj = _r_sweep(t[a:b], kind[a:b], dst[a:b], src[a:b], order[a:b], J[a:b], horizon, inset, bt, bv)
        out[i] = bv[0] if nj > 0 else -2


@njit(cache=True, nogil=True)
def _batch_r_final(offsets, t, kind, dst, src, order, J, horizon, N, n_start, out):
    """R at backward time horizon (−1 for Δ) for every log."""
    inset = np.zeros(N, np.bool_)
    cap = 4 * N + 64
    bt = np.empty(cap)
    bv = np.empty(cap, np.int64)
    for i in range(offsets.size - 1):
        a, b = offsets[i], offsets[i + 1]
        inset[:] = False
        inset[:n_start] = True
        nj = _r_sweep(t[a:b], kind[a:b], dst[a:b], src[a:b], order[a:b], J[a:b], horizon, inset, bt, bv)
        if nj == 0:
            out[i] = n_start
        elif bv[nj - 1] == R_DELTA or bv[nj - 1] == 0:
            out[i] = bv[nj - 1]
        else:
            cnt = 0
            for x in range(N):
                if inset[x]:
                    cnt += 1
            out[i] = cnt


@njit(cache=True, nogil=True)
def _batch_r_max(offsets, t, kind, dst, src, order, J, horizon, N, starts, out):
    """Largest site index (1-based) of the kASG set at backward time horizon; 0 if empty, −1 if Δ."""
    inset = np.zeros(N, np.bool_)
    bt = np.empty(4 * N + 64)
    bv = np.empty(4 * N + 64, np.int64)
    for i in range(offsets.size - 1):
        a, b = offsets[i], offsets[i + 1]
        inset[:] = False
        for x in range(N):
            inset[x] = starts[i, x]
        killed = False
        # Run to completion: the recording buffer only caps what is written.
        for e in range(b - 1, a - 1, -1):
            d = dst[e]
            if not inset[d]:
                continue
            k = kind[e]
            if k == NEUTRAL:
                s = src[e]
                if s != d:
                    inset[d] = False
                    inset[s] = True
            elif k == SELECTIVE:
                for q in range(order[e]):
                    inset[J[e, q]] = True
            elif k == MUT_DEL:
                inset[d] = False
            else:
                killed = True
                break
        if killed:
            out[i] = -1
        else:
            m = 0
            for x in range(N):
                if inset[x]:
                    m = x + 1
            out[i] = m


@njit(cache=True, nogil=True)
def _batch_pld_next(offsets, t, kind, dst, src, order, J, horizon, N, target, out):
    """L value after the first jump out of L = target (−2 if not observed)."""
    cap = 8 * N + 64
    bt = np.empty(cap)
    bl = np.empty(cap, np.int64)
    lev = np.empty((1, N), np.int64)
    imm = np.empty(1, np.int64)
    fin = np.empty(N, np.int64)
    for i in range(offsets.size - 1):
        a, b = offsets[i], offsets[i + 1]
        nrec, _, _ = _pld_sweep(t[a:b], kind[a:b], dst[a:b], src[a:b], order[a:b], J[a:b], horizon, 0, N,
                                bt, bl, False, lev, imm, fin)
        out[i] = -2
        cur = 1
        for r in range(nrec):
            if cur == target:
                out[i] = bl[r]
                break
            cur = bl[r]


@njit(cache=True, nogil=True)
def _batch_pld_final(offsets, t, kind, dst, src, order, J, horizon, N, out_levels):
    cap = 1
    bt = np.empty(cap)
    bl = np.empty(cap, np.int64)
    lev = np.empty((1, N), np.int64)
    imm = np.empty(1, np.int64)
    fin = np.empty(N, np.int64)
    for i in range(offsets.size - 1):
        a, b = offsets[i], offsets[i + 1]
        _pld_sweep(t[a:b], kind[a:b], dst[a:b], src[a:b], order[a:b], J[a:b], horizon, 0, N,
                   bt, bl, False, lev, imm, fin)
        for x in range(N):
            out_levels[i, x] = fin[x]


@njit(cache=True, nogil=True)
def _batch_desc_first(offsets, t, kind, dst, src, order, J, colour, inA, out):
    bt = np.empty(1)
    by = np.empty(1, np.int64)
    bd = np.empty(1, np.int64)
    bb = np.empty(1, np.int64)
    for i in range(offsets.size - 1):
        a, b = offsets[i], offsets[i + 1]
        n = _descendant_sweep(t[a:b], kind[a:b], dst[a:b], src[a:b], order[a:b], J[a:b], colour, inA,
                              bt, by, bd, bb)
        if n:
            out[i, 0] = by[0]
            out[i, 1] = bd[0]
            out[i, 2] = bb[0]
        else:
            out[i, 0] = -2


@njit(cache=True, nogil=True)
def _batch_types_final(offsets, kind, dst, src, order, J, colour, out):
    for i in range(offsets.size - 1):
        a, b = offsets[i], offsets[i + 1]
        c = _types_sweep(kind[a:b], dst[a:b], src[a:b], order[a:b], J[a:b], colour)
        out[i] = c.sum()


def _arrays(log: EventLog | LogBatch):
    return log.t, log.kind, log.dst, log.src, log.order, log.J


# ---------------------------------------------------------------------------
# Public single-log operations


def _colour_array(N: int, colouring) -> np.ndarray:
    c = np.asarray(colouring, dtype=np.int64)
    if c.shape != (N,) or np.any((c != 0) & (c != 1)):
        raise ValueError(f"colouring must be a 0/1 vector over {N} sites")
    return c


def propagate_types(log: EventLog, colouring) -> np.ndarray:
    """Colouring at the horizon after a forward sweep of the FTW typing rules."""
    t, kind, dst, src, order, J = _arrays(log)
    return _types_sweep(kind, dst, src, order, J, _colour_array(log.N, colouring))


def propagate_ancestry(log: EventLog, colouring, sample: Iterable[int] | None = None) -> dict[int, int]:
    """Ancestral site at the log start of each sampled site at the horizon.

    The parent at a selective event is its first fit tuple member, else the
    continuing line; hence the colouring at the log start is required.
    """
    t, kind, dst, src, order, J = _arrays(log)
    _, anc = _ancestry_sweep(kind, dst, src, order, J, _colour_array(log.N, colouring))
    sites = range(log.N) if sample is None else sample
    return {int(i): int(anc[i]) for i in sites}


def _sample_mask(N: int, sample: Iterable[int]) -> np.ndarray:
    mask = np.zeros(N, dtype=np.bool_)
    for i in sample:
        if not 0 <= i < N:
            raise ValueError(f"site {i} outside [0, {N})")
        mask[i] = True
    return mask


@dataclass(frozen=True)
class CountPath:
    """Piecewise-constant path in backward time r (or forward time for descendants)."""

    times: np.ndarray
    values: tuple

    def at(self, r: float) -> StateLabel:
        idx = int(np.searchsorted(self.times, r, side="right")) - 1
        return self.values[max(idx, 0)]


def extract_R_path(log: EventLog, sample: Iterable[int]) -> CountPath:
    """Line count of the killed ASG traced backwards from the horizon."""
    inset = _sample_mask(log.N, sample)
    n0 = int(inset.sum())
    cap = max(len(log), 1) + 1
    bt = np.empty(cap)
    bv = np.empty(cap, dtype=np.int64)
    nj = _r_sweep(*_arrays(log), log.horizon, inset, bt, bv)
    vals = [n0] + [DELTA if v == R_DELTA else int(v) for v in bv[:nj]]
    return CountPath(np.concatenate(([0.0], bt[:nj])), tuple(vals))


def asg_sites(log: EventLog, sample: Iterable[int]) -> frozenset[int]:
    """Sites of the unpruned ASG at backward time horizon (mutations ignored)."""
    bare = log.without_mutations()
    inset = _sample_mask(log.N, sample)
    cap = len(bare) + 1
    _r_sweep(*_arrays(bare), bare.horizon, inset, np.empty(cap), np.empty(cap, dtype=np.int64))
    return frozenset(int(i) for i in np.flatnonzero(inset))


@dataclass(frozen=True)
class PldState:
    """Sites at finite levels (index 0 is level 1) and the level of the immune line (1-based)."""

    levels: tuple[int, ...]
    immune: int


@dataclass(frozen=True)
class PldPath:
    times: np.ndarray
    states: tuple[PldState, ...]

    @property
    def L(self) -> CountPath:
        times, vals = [self.times[0]], [len(self.states[0].levels)]
        for tt, st in zip(self.times[1:], self.states[1:]):
            if len(st.levels) != vals[-1]:
                times.append(tt)
                vals.append(len(st.levels))
        return CountPath(np.array(times), tuple(vals))

    @property
    def final(self) -> PldState:
        return self.states[-1]


def extract_pld_path(log: EventLog, sample: Iterable[int] = (0,)) -> PldPath:
    """Pruned lookdown ASG traced backwards from a single sampled site."""
    sample = list(sample)
    if len(sample) != 1:
        raise ValueError("the pruned lookdown ASG is only defined from a single sampled site")
    start = int(sample[0])
    N = log.N
    cap = len(log) + 1
    bt = np.empty(cap)
    bl = np.empty(cap, dtype=np.int64)
    lev = np.empty((cap, N), dtype=np.int64)
    imm = np.empty(cap, dtype=np.int64)
    fin = np.empty(N, dtype=np.int64)
    nrec, _, _ = _pld_sweep(*_arrays(log), log.horizon, start, N, bt, bl, True, lev, imm, fin)
    states = [PldState((start,), 1)]
    for r in range(nrec):
        L = int(bl[r])
        states.append(PldState(tuple(int(x) for x in lev[r, :L]), int(imm[r]) + 1))
    return PldPath(np.concatenate(([0.0], bt[:nrec])), tuple(states))


def ancestral_site_from_levels(state: PldState, colouring) -> int:
    """Lowest finite-level site of type 0, else the immune line."""
    for site in state.levels:
        if colouring[site] == 0:
            return site
    return state.levels[state.immune - 1]


def empirical_ancestral_type(log: EventLog, k: int, rng: np.random.Generator, site: int = 0) -> int:
    """1 iff every finite-level site is unfit under a uniform colouring with k unfit sites."""
    N = log.N
    if not 0 <= k <= N:
        raise ValueError(f"k must be in [0, {N}]")
    state = extract_pld_path(log, (site,)).final
    unfit = np.zeros(N, dtype=np.int64)
    unfit[rng.permutation(N)[:k]] = 1
    return int(all(unfit[s] == 1 for s in state.levels))


@dataclass(frozen=True)
class DescendantPath:
    times: np.ndarray
    values: tuple[tuple[int, int, int], ...]


def descendant_counts(log: EventLog, starting_set: Iterable[int], colouring) -> DescendantPath:
    """(unfit count, unfit descendants, fit descendants) of the starting set along the log."""
    N = log.N
    inA = _sample_mask(N, starting_set)
    c = _colour_array(N, colouring)
    cap = len(log) + 1
    bt = np.empty(cap)
    by = np.empty(cap, dtype=np.int64)
    bd = np.empty(cap, dtype=np.int64)
    bb = np.empty(cap, dtype=np.int64)
    n = _descendant_sweep(*_arrays(log), c, inA, bt, by, bd, bb)
    y0 = int(c.sum())
    d0 = int((c.astype(bool) & inA).sum())
    b0 = int((~c.astype(bool) & inA).sum())
    vals = [(y0, d0, b0)] + [(int(by[i]), int(bd[i]), int(bb[i])) for i in range(n)]
    return DescendantPath(np.concatenate(([0.0], bt[:n])), tuple(vals))


# ---------------------------------------------------------------------------
# Monte Carlo drivers over many logs (blocks of logs share one counter-based stream)

BLOCK = 20000


def _blocks(replicates: int, block: int) -> list[tuple[int, int]]:
    return [(b, min(block, replicates - b * block)) for b in range((replicates + block - 1) // block)]


def _run_blocks(params, horizon, replicates, seed, fn, block=BLOCK, threads=None):
    from .ctmc import parallel_map

    def one(job):
        idx, size = job
        rng = replicate_rng(seed, idx)
        batch = sample_event_logs(params, horizon, size, rng, seed)
        return fn(batch, rng)

    parts = parallel_map(one, _blocks(replicates, block), threads)
    return np.concatenate(parts) if parts else np.empty(0)


def first_jump_R(params: ModelParams, n: int, replicates: int, seed: int, horizon: float,
                 threads: int | None = None) -> np.ndarray:
    """First-jump targets of the kASG counter from n lines (−1 for Δ, −2 if none before horizon)."""
    def fn(batch, rng):
        out = np.empty(len(batch), dtype=np.int64)
        _batch_r_first(batch.offsets, *_arrays(batch), batch.horizon, batch.N, n, out)
        return out
    return _run_blocks(params, horizon, replicates, seed, fn, threads=threads)


def final_R(params: ModelParams, n: int, replicates: int, seed: int, horizon: float,
            threads: int | None = None) -> np.ndarray:
    """R at backward time horizon from n sampled lines (−1 for Δ)."""
    def fn(batch, rng):
        out = np.empty(len(batch), dtype=np.int64)
        _batch_r_final(batch.offsets, *_arrays(batch), batch.horizon, batch.N, n, out)
        return out
    return _run_blocks(params, horizon, replicates, seed, fn, threads=threads)


def next_jump_L(params: ModelParams, target: int, replicates: int, seed: int, horizon: float,
                threads: int | None = None) -> np.ndarray:
    """L after the first jump out of L = target, the pruned lookdown ASG started from one line."""
    def fn(batch, rng):
        out = np.empty(len(batch), dtype=np.int64)
        _batch_pld_next(batch.offsets, *_arrays(batch), batch.horizon, batch.N, target, out)
        return out
    return _run_blocks(params, horizon, replicates, seed, fn, threads=threads)


def final_levels(params: ModelParams, replicates: int, seed: int, horizon: float,
                 threads: int | None = None) -> np.ndarray:
    """Final finite-level site lists (padded with −1), one row per log."""
    def fn(batch, rng):
        out = np.empty((len(batch), batch.N), dtype=np.int64)
        _batch_pld_final(batch.offsets, *_arrays(batch), batch.horizon, batch.N, out)
        return out
    parts = _run_blocks(params, horizon, replicates, seed, fn, threads=threads)
    return parts.reshape(-1, params.N)


def ancestral_types(params: ModelParams, k: int, r: float, replicates: int, seed: int,
                    threads: int | None = None) -> np.ndarray:
    """Empirical ancestral types (0/1) at backward time r under uniform colourings with k unfit."""
    N = params.N
    if not 0 <= k <= N:
        raise ValueError(f"k must be in [0, {N}]")

    def fn(batch, rng):
        levels = np.empty((len(batch), N), dtype=np.int64)
        _batch_pld_final(batch.offsets, *_arrays(batch), batch.horizon, N, levels)
        keys = rng.random((len(batch), N))
        unfit = np.argsort(np.argsort(keys, axis=1), axis=1) < k
        finite = levels >= 0
        picked = np.take_along_axis(unfit, np.where(finite, levels, 0), axis=1)
        return np.all(picked | ~finite, axis=1).astype(np.int64)

    return _run_blocks(params, r, replicates, seed, fn, threads=threads)


def first_jump_descendant(params: ModelParams, state: tuple[int, int, int], replicates: int, seed: int,
                          horizon: float, threads: int | None = None) -> np.ndarray:
    """First change of (Y, D, B) from the given state; rows of −2 mark logs without a change."""
    N = params.N
    k, d, b = state
    colour = np.zeros(N, dtype=np.int64)
    colour[:k] = 1
    inA = np.zeros(N, dtype=np.bool_)
    inA[:d] = True
    inA[k:k + b] = True

    def fn(batch, rng):
        out = np.empty((len(batch), 3), dtype=np.int64)
        _batch_desc_first(batch.offsets, *_arrays(batch), colour, inA, out)
        return out
    return _run_blocks(params, horizon, replicates, seed, fn, threads=threads).reshape(-1, 3)


def unfit_counts(params: ModelParams, k: int, t: float, replicates: int, seed: int,
                 threads: int | None = None) -> np.ndarray:
    colour = np.zeros(params.N, dtype=np.int64)
    colour[:k] = 1

    def fn(batch, rng):
        out = np.empty(len(batch), dtype=np.int64)
        _batch_types_final(batch.offsets, batch.kind, batch.dst, batch.src, batch.order, batch.J, colour, out)
        return out
    return _run_blocks(params, t, replicates, seed, fn, threads=threads)


def max_line_law(params: ModelParams, p0: Sequence[float], r: float, replicates: int, seed: int,
                 threads: int | None = None) -> np.ndarray:
    """Largest (1-based) site of the kASG set at backward time r; 0 for ∅, −1 for Δ.

    Each replicate starts from a uniformly placed set whose size is drawn from p0 over 0..N.
    """
    N = params.N
    p0 = np.asarray(p0, dtype=float)

    def fn(batch, rng):
        size = rng.choice(N + 1, size=len(batch), p=p0)
        keys = rng.random((len(batch), N))
        rank = np.argsort(np.argsort(keys, axis=1), axis=1)
        starts = rank < size[:, None]
        out = np.empty(len(batch), dtype=np.int64)
        _batch_r_max(batch.offsets, *_arrays(batch), batch.horizon, N, starts, out)
        return out

    return _run_blocks(params, r, replicates, seed, fn, threads=threads)


# ---------------------------------------------------------------------------
# Comparison with generator rows


@dataclass(frozen=True)
class JumpRow:
    target: StateLabel
    count: int
    empirical: float
    generator: float
    z: float


def _label(v) -> StateLabel:
    if isinstance(v, tuple):
        return tuple(int(x) for x in v)
    return DELTA if v == R_DELTA else int(v)


def compare_jump_law(targets: Sequence, row: dict) -> list[JumpRow]:
    """Empirical first-jump frequencies against the normalised generator row.

    targets holds one observed jump target per replicate; z is the count
    deviation in binomial standard deviations (inf when an impossible target
    is observed).
    """
    n = len(targets)
    if n == 0:
        raise ValueError("no observed jumps")
    total = sum(row.values())
    probs = {k: v / total for k, v in row.items()}
    counts: dict = {}
    for v in targets:
        lab = _label(v)
        counts[lab] = counts.get(lab, 0) + 1
    labels = list(probs) + [k for k in counts if k not in probs]
    out = []
    for lab in labels:
        p = probs.get(lab, 0.0)
        c = counts.get(lab, 0)
        sd = np.sqrt(n * p * (1.0 - p))
        z = (c - n * p) / sd if sd > 0 else (0.0 if c == n * p else np.inf)
        out.append(JumpRow(lab, c, c / n, p, float(z)))
    return out


def generator_row(chain, label: StateLabel) -> dict:
    """Off-diagonal rates out of one state, keyed by target label."""
    i = chain.index(label)
    row = chain.Q.getrow(i).tocoo()
    return {chain.states[j]: float(v) for j, v in zip(row.col, row.data) if j != i and v > 0}
