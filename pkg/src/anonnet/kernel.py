"""Array-encoded fast path for interval-averaging runs.

The generic engine in :mod:`anonnet.engine` steps arbitrary automata over
Python tuples; that is the reference semantics.  Sweeps and exhaustive
checks, however, spend essentially all their time in the averaging
transition, so this module re-expresses exactly that protocol over flat
integer arrays and runs the whole slot loop in one function that numba can
compile.  The python backend executes the very same function uncompiled,
so both backends produce bit-identical results; tests assert that either
one reproduces the generic engine's trace slot for slot.

Backend selection: the ``ANONNET_BACKEND`` environment variable may be set
to ``numba`` or ``python``; unset (or ``auto``) picks numba when it is
importable.  ``benchmarks/bench_backends.py`` compares the two.

Encoding
--------
Per-node state ``S[n, 10]``: pebbles, mode, rin, rout, then (estimate,
pointer, prev-input) for the max tracker and again for the min tracker.
Pointer sentinels: -1 self, -2 empty.  Per-edge messages ``M[n, dmax, 6]``:
(tag, value) triples for max part, min part, exchange part.  Tag 0 is the
empty message; tracking tags are 1 restart / 2 estimate; exchange tags are
1 request / 2 accept.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .network import PortLabeledGraph

try:  # pragma: no cover - exercised only when numba is absent
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    njit = None
    _HAVE_NUMBA = False

ENV_BACKEND = "ANONNET_BACKEND"

# S fields
F_U, F_MODE, F_RIN, F_ROUT, F_XM, F_XP, F_XUP, F_NM, F_NP, F_NUP = range(10)
# message fields: (tag, value) x (max, min, exchange)
TAG_NONE, TAG_RESTART, TAG_EST = 0, 1, 2
ETAG_NONE, ETAG_REQ, ETAG_ACC = 0, 1, 2
PTR_SELF, PTR_NONE = -1, -2
MODE_FREE, MODE_BLOCKED = 0, 1

STATUS_FIXED, STATUS_BUDGET = 0, 1


def _simulate(deg, nbr, back, x0, max_steps, record, trace_s, trace_m):
    n = deg.shape[0]
    dmax = nbr.shape[1]
    S = np.zeros((n, 10), np.int64)
    M = np.zeros((n, dmax, 6), np.int64)
    S2 = np.zeros((n, 10), np.int64)
    M2 = np.zeros((n, dmax, 6), np.int64)
    total = np.int64(0)
    for i in range(n):
        x = x0[i]
        S[i, F_U] = x
        S[i, F_MODE] = MODE_FREE
        S[i, F_RIN] = PTR_NONE
        S[i, F_ROUT] = PTR_NONE
        S[i, F_XM] = x
        S[i, F_XP] = PTR_SELF
        S[i, F_XUP] = x
        S[i, F_NM] = x
        S[i, F_NP] = PTR_SELF
        S[i, F_NUP] = x
        total += x

    uh = np.zeros(n, np.int64)
    mwin = np.zeros(n + 1, np.int64)

    fault = 0
    conservation_ok = 1
    variance_monotone = 1
    descent_ok = 1
    mprime_ok = 1
    accepts = np.int64(0)

    # virtual values and scaled variance at time 0 (no messages yet)
    v_prev = np.int64(0)
    for i in range(n):
        d0 = n * S[i, F_U] - total
        v_prev += d0 * d0
    v0 = v_prev

    gmax0 = S[0, F_XM]
    for i in range(n):
        if S[i, F_XM] > gmax0:
            gmax0 = S[i, F_XM]
    for j in range(n + 1):
        mwin[j] = gmax0
    m_prime = gmax0

    if record:
        for i in range(n):
            for f in range(10):
                trace_s[0, i, f] = S[i, f]
            for k in range(dmax):
                for f in range(6):
                    trace_m[0, i, k, f] = M[i, k, f]

    status = STATUS_BUDGET
    t = 0
    while t < max_steps:
        # ---- one synchronous slot: S,M -> S2,M2 --------------------------
        for i in range(n):
            d = deg[i]
            u = S[i, F_U]
            u_prev = S[i, F_XUP]
            # Both trackers; comp 0 = max (sign +1), comp 1 = min (sign -1).
            for comp in range(2):
                base = F_XM + 3 * comp
                moff = 2 * comp
                sign = 1 - 2 * comp
                m0 = S[i, base]
                p0 = S[i, base + 1]
                if u != S[i, base + 2]:
                    nm, npt, ot, ov = u, PTR_SELF, TAG_RESTART, 0
                else:
                    found = False
                    best = np.int64(0)
                    bestp = -1
                    for k in range(d):
                        src = nbr[i, k]
                        sl = back[i, k]
                        if M[src, sl, moff] == TAG_EST:
                            v = M[src, sl, moff + 1]
                            if sign * (v - m0) > 0 and (not found or sign * (v - best) > 0):
                                best, bestp, found = v, k, True
                    if found:
                        nm, npt, ot, ov = best, bestp, TAG_RESTART, 0
                    else:
                        from_parent = TAG_NONE
                        if p0 >= 0:
                            src = nbr[i, p0]
                            sl = back[i, p0]
                            tg = M[src, sl, moff]
                            if tg == TAG_RESTART:
                                from_parent = TAG_RESTART
                            elif tg == TAG_EST and M[src, sl, moff + 1] == m0:
                                from_parent = TAG_EST
                        if from_parent == TAG_RESTART:
                            nm, npt, ot, ov = u, PTR_SELF, TAG_RESTART, 0
                        elif p0 == PTR_SELF or from_parent == TAG_EST:
                            nm, npt, ot, ov = m0, p0, TAG_EST, m0
                        else:
                            nm, npt, ot, ov = m0, p0, TAG_NONE, 0
                S2[i, base] = nm
                S2[i, base + 1] = npt
                S2[i, base + 2] = u
                for k in range(d):
                    M2[i, k, moff] = ot
                    M2[i, k, moff + 1] = ov

            # Exchange part.
            for k in range(d):
                M2[i, k, 4] = ETAG_NONE
                M2[i, k, 5] = 0
            mode = S[i, F_MODE]
            u2 = u
            mode2 = mode
            rin2 = S[i, F_RIN]
            rout2 = S[i, F_ROUT]
            if mode == MODE_FREE:
                sel = -1
                sel_r = np.int64(0)
                for k in range(d):
                    src = nbr[i, k]
                    sl = back[i, k]
                    et = M[src, sl, 4]
                    if et == ETAG_ACC:
                        fault = 1  # acceptance while free
                    elif et == ETAG_REQ:
                        if sel < 0:
                            sel = k
                            sel_r = M[src, sl, 5]
                        else:
                            M2[i, k, 4] = ETAG_ACC  # deny non-selected
                            M2[i, k, 5] = 0
                m_est = S[i, F_XM]
                p_port = S[i, F_XP]
                if sel >= 0:
                    r = sel_r
                    can_forward = u == u_prev and u - 1 <= r and r < m_est - 1
                    if u - r >= 2:
                        w = (u - r) // 2
                        u2 = u - w
                        M2[i, sel, 4] = ETAG_ACC
                        M2[i, sel, 5] = w
                    elif can_forward and p_port >= 0 and M2[i, p_port, 4] == ETAG_NONE:
                        M2[i, p_port, 4] = ETAG_REQ
                        M2[i, p_port, 5] = r
                        mode2, rin2, rout2 = MODE_BLOCKED, sel, p_port
                    elif can_forward and p_port < 0:
                        fault = 2  # forward along a self pointer
                    else:
                        M2[i, sel, 4] = ETAG_ACC
                        M2[i, sel, 5] = 0
                else:
                    if u == u_prev and m_est >= u + 2:
                        if p_port < 0:
                            fault = 2
                        else:
                            M2[i, p_port, 4] = ETAG_REQ
                            M2[i, p_port, 5] = u
                            mode2, rin2, rout2 = MODE_BLOCKED, PTR_SELF, p_port
            else:  # blocked
                acc_port = -1
                acc_val = np.int64(0)
                for k in range(d):
                    src = nbr[i, k]
                    sl = back[i, k]
                    et = M[src, sl, 4]
                    if et == ETAG_REQ:
                        M2[i, k, 4] = ETAG_ACC
                        M2[i, k, 5] = 0
                    elif et == ETAG_ACC:
                        if acc_port >= 0:
                            fault = 3  # several answers at once
                        acc_port = k
                        acc_val = M[src, sl, 5]
                if acc_port >= 0:
                    if acc_port != S[i, F_ROUT]:
                        fault = 3
                    elif S[i, F_RIN] == PTR_SELF:
                        u2 = u + acc_val
                        mode2, rin2, rout2 = MODE_FREE, PTR_NONE, PTR_NONE
                    else:
                        rin = S[i, F_RIN]
                        if M2[i, rin, 4] != ETAG_NONE:
                            fault = 3
                        else:
                            M2[i, rin, 4] = ETAG_ACC
                            M2[i, rin, 5] = acc_val
                            mode2, rin2, rout2 = MODE_FREE, PTR_NONE, PTR_NONE
            S2[i, F_U] = u2
            S2[i, F_MODE] = mode2
            S2[i, F_RIN] = rin2
            S2[i, F_ROUT] = rout2

        # ---- observers on the new configuration --------------------------
        n_accepted = 0
        for i in range(n):
            if S2[i, F_U] < S[i, F_U]:
                n_accepted += 1
        accepts += n_accepted

        for i in range(n):
            uh[i] = S2[i, F_U]
        for s in range(n):
            e = S2[s, F_ROUT]
            if e >= 0:
                src = nbr[s, e]
                sl = back[s, e]
                if M2[src, sl, 4] == ETAG_ACC:
                    w = M2[src, sl, 5]
                    ell = s
                    hops = 0
                    while S2[ell, F_RIN] >= 0 and hops <= n:
                        ell = nbr[ell, S2[ell, F_RIN]]
                        hops += 1
                    if hops <= n and S2[ell, F_RIN] == PTR_SELF:
                        uh[ell] += w
                    else:
                        fault = 4  # broken answer path
        tot = np.int64(0)
        v_new = np.int64(0)
        for i in range(n):
            tot += uh[i]
            dv = n * uh[i] - total
            v_new += dv * dv
        if tot != total:
            conservation_ok = 0
        if v_new > v_prev:
            variance_monotone = 0
        if n_accepted > 0 and v_prev - v_new < 2 * n * n:
            descent_ok = 0
        v_prev = v_new

        gmax = S2[0, F_XM]
        for i in range(n):
            if S2[i, F_XM] > gmax:
                gmax = S2[i, F_XM]
        mwin[(t + 1) % (n + 1)] = gmax
        mp = mwin[0]
        for j in range(1, n + 1):
            if mwin[j] > mp:
                mp = mwin[j]
        if mp > m_prime:
            mprime_ok = 0
        m_prime = mp

        if record:
            for i in range(n):
                for f in range(10):
                    trace_s[t + 1, i, f] = S2[i, f]
                for k in range(dmax):
                    for f in range(6):
                        trace_m[t + 1, i, k, f] = M2[i, k, f]

        # ---- fixed point? -------------------------------------------------
        same = True
        for i in range(n):
            for f in range(10):
                if S[i, f] != S2[i, f]:
                    same = False
                    break
            if not same:
                break
        if same:
            for i in range(n):
                for k in range(dmax):
                    for f in range(6):
                        if M[i, k, f] != M2[i, k, f]:
                            same = False
                            break
                    if not same:
                        break
                if not same:
                    break
        if same:
            status = STATUS_FIXED
            break
        S, S2 = S2, S
        M, M2 = M2, M
        t += 1

    final_s = S2 if status == STATUS_FIXED else S
    final_m = M2 if status == STATUS_FIXED else M
    return (
        status,
        t,
        accepts,
        v0,
        v_prev,
        fault,
        conservation_ok,
        variance_monotone,
        descent_ok,
        mprime_ok,
        final_s,
        final_m,
    )


_simulate_jit = None
if _HAVE_NUMBA:
    _simulate_jit = njit(cache=True)(_simulate)


def have_numba() -> bool:
    return _HAVE_NUMBA


def active_backend(backend: str | None = None) -> str:
    """Resolve the backend name: explicit argument, else env var, else auto."""
    req = backend if backend is not None else os.environ.get(ENV_BACKEND, "auto")
    req = req.strip().lower() or "auto"
    if req == "auto":
        return "numba" if _HAVE_NUMBA else "python"
    if req == "numba":
        if not _HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        return "numba"
    if req in ("python", "numpy"):
        return "python"
    raise ValueError(f"unknown backend {req!r} (use 'numba' or 'python')")


@lru_cache(maxsize=256)
def graph_arrays(g: PortLabeledGraph):
    """(deg, nbr, back) arrays for a graph; nbr/back are -1-padded."""
    n = g.n
    dmax = max((g.degree(i) for i in range(n)), default=0)
    deg = np.zeros(n, np.int64)
    nbr = np.full((n, dmax), -1, np.int64)
    back = np.full((n, dmax), -1, np.int64)
    for i in range(n):
        deg[i] = g.degree(i)
        for k in range(g.degree(i)):
            j = g.neighbor(i, k)
            nbr[i, k] = j
            back[i, k] = g.slot_of(j, i)
    deg.setflags(write=False)
    nbr.setflags(write=False)
    back.setflags(write=False)
    return deg, nbr, back


@dataclass(frozen=True)
class KernelRunResult:
    status: str  # "fixed-point" | "budget"
    steps: int
    accept_count: int
    v0_scaled: int
    v_final_scaled: int
    fault: int
    conservation_ok: bool
    variance_monotone: bool
    descent_ok: bool
    mprime_monotone: bool
    final_state: np.ndarray  # S[n, 10]
    final_msgs: np.ndarray  # M[n, dmax, 6]
    trace_state: np.ndarray | None = None
    trace_msgs: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.status == "fixed-point"

    @property
    def pebbles(self) -> np.ndarray:
        return self.final_state[:, F_U]

    @property
    def max_estimates(self) -> np.ndarray:
        return self.final_state[:, F_XM]

    @property
    def min_estimates(self) -> np.ndarray:
        return self.final_state[:, F_NM]

    def all_checks_ok(self) -> bool:
        return (
            self.fault == 0
            and self.conservation_ok
            and self.variance_monotone
            and self.descent_ok
            and self.mprime_monotone
        )


def simulate_averaging(
    g: PortLabeledGraph,
    inputs,
    max_steps: int,
    backend: str | None = None,
    record: bool = False,
) -> KernelRunResult:
    """Run the averaging protocol to its configuration fixed point.

    ``record=True`` keeps the full per-slot state/message arrays (small runs
    only: the buffers are (max_steps+2) x n x ...).
    """
    chosen = active_backend(backend)
    fn = _simulate_jit if chosen == "numba" else _simulate
    deg, nbr, back = graph_arrays(g)
    x0 = np.asarray(list(inputs), np.int64)
    if x0.shape[0] != g.n:
        raise ValueError(f"expected {g.n} inputs, got {x0.shape[0]}")
    if np.any(x0 < 0):
        raise ValueError("pebble counts must be nonnegative")
    n, dmax = g.n, nbr.shape[1]
    if record:
        if (max_steps + 2) * n * (10 + 6 * max(dmax, 1)) > 50_000_000:
            raise ValueError("trace recording requested for an oversized run")
        trace_s = np.zeros((max_steps + 2, n, 10), np.int64)
        trace_m = np.zeros((max_steps + 2, n, max(dmax, 1), 6), np.int64)
    else:
        trace_s = np.zeros((1, 1, 10), np.int64)
        trace_m = np.zeros((1, 1, 1, 6), np.int64)
    (
        status,
        steps,
        accepts,
        v0,
        v_fin,
        fault,
        cons,
        vmono,
        desc,
        mpmono,
        final_s,
        final_m,
    ) = fn(deg, nbr, back, x0, max_steps, record, trace_s, trace_m)
    return KernelRunResult(
        status="fixed-point" if status == STATUS_FIXED else "budget",
        steps=int(steps),
        accept_count=int(accepts),
        v0_scaled=int(v0),
        v_final_scaled=int(v_fin),
        fault=int(fault),
        conservation_ok=bool(cons),
        variance_monotone=bool(vmono),
        descent_ok=bool(desc),
        mprime_monotone=bool(mpmono),
        final_state=np.array(final_s),
        final_msgs=np.array(final_m),
        trace_state=trace_s[: int(steps) + 1] if record else None,
        trace_msgs=trace_m[: int(steps) + 1] if record else None,
    )


# ---------------------------------------------------------------------------
# Codec between generic-engine configurations and the array encoding,
# used by the backend-equivalence tests.
# ---------------------------------------------------------------------------

_TRACK_TAGS = {None: (TAG_NONE, 0), "R": (TAG_RESTART, 0)}
_EX_TAGS = {None: (ETAG_NONE, 0)}


def _track_code(m):
    if type(m) is tuple and m[0] == "E":
        return TAG_EST, m[1]
    return _TRACK_TAGS[m]


def _ex_code(m):
    if type(m) is tuple:
        return (ETAG_REQ, m[1]) if m[0] == "Q" else (ETAG_ACC, m[1])
    return _EX_TAGS[m]


def config_to_arrays(g: PortLabeledGraph, config) -> tuple[np.ndarray, np.ndarray]:
    """Encode a generic averaging Configuration into (S, M) arrays."""
    n = g.n
    dmax = max((g.degree(i) for i in range(n)), default=0)
    S = np.zeros((n, 10), np.int64)
    M = np.zeros((n, dmax, 6), np.int64)
    for i, st in enumerate(config.zs):
        S[i] = (
            st.pebbles,
            st.mode,
            st.rin,
            st.rout,
            st.max_track.estimate,
            st.max_track.pointer,
            st.max_track.input_prev,
            st.min_track.estimate,
            st.min_track.pointer,
            st.min_track.input_prev,
        )
        for k in range(g.degree(i)):
            msg = config.msgs[i][k]
            mx, mn, ex = msg if msg is not None else (None, None, None)
            M[i, k, 0], M[i, k, 1] = _track_code(mx)
            M[i, k, 2], M[i, k, 3] = _track_code(mn)
            M[i, k, 4], M[i, k, 5] = _ex_code(ex)
    return S, M
