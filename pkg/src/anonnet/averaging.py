"""Interval-averaging by deterministic pebble exchange.

Each node starts with an integer number of pebbles in {0, ..., K} and the
protocol evens them out while conserving the total, so that eventually all
nodes hold either floor or ceil of the average.  Embedded max- and
min-tracking instances (fed the live pebble count) tell each node the
current extremes and a pointer toward a holder of the maximum.

A node holding u pebbles that believes a node with at least u+2 exists
sends a request carrying u along its max pointer.  A request travels along
pointers until some node either accepts it (it holds at least r+2 pebbles:
it gives away floor((u-r)/2) of them) or denies it (accept with amount 0).
The answer retraces the request path; the originator adds the granted
amount.  While a request it originated or forwarded is outstanding, a node
is blocked: it denies every incoming request and changes nothing else.

Message layout per port: (max-tracking part, min-tracking part, exchange
part).  The tracking parts are broadcast, identical on every port; the
exchange part is point-to-point: EMPTY, ("Q", r) for a request, or
("A", w) for an acceptance, with w = 0 encoding a denial.

A node's output is the interval-consensus decode of (u, max estimate, min
estimate), so at the configuration fixed point every node reports the
element of {{0}, (0,1), {1}, ..., {K}} containing the exact average.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

from .engine import EMPTY, AutomatonSpec, Configuration
from .network import PortLabeledGraph
from .tracking import SELF, TrackingState, min_tracking_transition, tracking_transition

__all__ = [
    "FREE",
    "BLOCKED",
    "NONE",
    "AveragingState",
    "averaging_transition",
    "averaging_automaton",
    "decode_output",
    "ExchangeView",
    "observe_exchange",
    "AveragingChecker",
    "ProtocolViolation",
    "termination_bound",
]

FREE = 0
BLOCKED = 1
NONE = -2  # empty pointer slot (SELF = -1 comes from the tracking module)


class ProtocolViolation(RuntimeError):
    """A message arrived that correct operation can never produce."""


class AveragingState(NamedTuple):
    pebbles: int  # current value u
    mode: int  # FREE or BLOCKED
    rin: int  # NONE | SELF | port that sent us the request we forwarded
    rout: int  # NONE | port we sent a request to and are waiting on
    max_track: TrackingState
    min_track: TrackingState


def decode_output(u: int, max_est: int, min_est: int):
    """Interval-consensus element from a value and the tracked extremes.

    Meaningful at convergence: equal extremes name the integer average
    {u}; extremes one apart name the open interval between them.  A wider
    spread only occurs mid-run and is flagged unstable.
    """
    if max_est == min_est:
        return ("point", u)
    if max_est == min_est + 1:
        return ("open", min_est, max_est)
    return ("unstable", min_est, max_est)


def render_interval(y) -> str:
    kind = y[0]
    if kind == "point":
        return "{%d}" % y[1]
    if kind == "open":
        return "(%d,%d)" % (y[1], y[2])
    return "unstable(%d,%d)" % (y[1], y[2])


def averaging_transition(state: AveragingState, incoming: Sequence):
    """One slot of the exchange protocol; returns (state', y', outgoing).

    The exchange logic reads the *current* tracking state (estimate and
    pointer as of this slot); the trackers themselves advance in parallel
    on the current pebble count.
    """
    d = len(incoming)
    parts = [m if m is not None else (EMPTY, EMPTY, EMPTY) for m in incoming]
    u = state.pebbles
    u_prev = state.max_track.input_prev
    max2, max_bc = tracking_transition(state.max_track, u, [p[0] for p in parts])
    min2, min_bc = min_tracking_transition(state.min_track, u, [p[1] for p in parts])

    ex_out: list = [EMPTY] * d
    u2, mode2, rin2, rout2 = u, state.mode, state.rin, state.rout
    requests = [(k, p[2][1]) for k, p in enumerate(parts) if type(p[2]) is tuple and p[2][0] == "Q"]
    accepts = [(k, p[2][1]) for k, p in enumerate(parts) if type(p[2]) is tuple and p[2][0] == "A"]

    if state.mode == FREE:
        if accepts:
            raise ProtocolViolation(f"acceptance received in free mode (port {accepts[0][0]})")
        if requests:
            k, r = requests[0]  # smallest port wins; the rest are denied
            for kk, _r in requests[1:]:
                ex_out[kk] = ("A", 0)
            m_est, p_port = state.max_track.estimate, state.max_track.pointer
            can_forward = u == u_prev and u - 1 <= r < m_est - 1
            if u - r >= 2:
                w = (u - r) // 2
                u2 = u - w
                ex_out[k] = ("A", w)
            elif can_forward and p_port != SELF and ex_out[p_port] is EMPTY:
                ex_out[p_port] = ("Q", r)
                mode2, rin2, rout2 = BLOCKED, k, p_port
            elif can_forward and p_port == SELF:
                raise ProtocolViolation("forwarding along a self pointer")
            else:
                # includes the case where the forward port is busy denying a
                # non-selected request: the selected one is denied instead
                ex_out[k] = ("A", 0)
        else:
            m_est, p_port = state.max_track.estimate, state.max_track.pointer
            if u == u_prev and m_est >= u + 2:
                if p_port == SELF:
                    raise ProtocolViolation("originating along a self pointer")
                ex_out[p_port] = ("Q", u)
                mode2, rin2, rout2 = BLOCKED, SELF, p_port
    else:  # BLOCKED: deny everything, react only to the awaited answer
        for k, _r in requests:
            ex_out[k] = ("A", 0)
        if accepts:
            if len(accepts) > 1:
                raise ProtocolViolation("multiple acceptances in one slot")
            k, w = accepts[0]
            if k != state.rout:
                raise ProtocolViolation(f"acceptance from port {k}, expected {state.rout}")
            if state.rin == SELF:
                u2 = u + w  # fulfil our own request
            else:
                if ex_out[state.rin] is not EMPTY:
                    raise ProtocolViolation("answer path port occupied")
                ex_out[state.rin] = ("A", w)  # pass the answer back (denials too)
            mode2, rin2, rout2 = FREE, NONE, NONE

    new_state = AveragingState(u2, mode2, rin2, rout2, max2, min2)
    y = decode_output(u2, max2.estimate, min2.estimate)
    out = tuple((max_bc, min_bc, ex_out[k]) for k in range(d))
    return new_state, y, out


def averaging_automaton() -> AutomatonSpec:
    """Engine automaton: x is the initial pebble count, never read again."""

    def init(x, d):
        st = AveragingState(x, FREE, NONE, NONE, TrackingState(x, SELF, x), TrackingState(x, SELF, x))
        return st, decode_output(x, x, x), ((EMPTY, EMPTY, EMPTY),) * d

    def transition(x, z, y, incoming):
        return averaging_transition(z, incoming)

    return AutomatonSpec("interval-avg", transition, init)


def termination_bound(n: int, k: int) -> int:
    """Guaranteed fixed-point deadline for alphabet {0..k} on n nodes."""
    return n * n * k * k + (6 * k + 4) * n


# ---------------------------------------------------------------------------
# Observer side
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExchangeView:
    """Request paths, in-flight grants and the variance bookkeeping.

    ``u_hat[i]`` is the node's virtual value: its pebbles plus any granted
    amount already traveling back toward it.  ``variance_scaled`` is
    sum((n*u_hat - total)^2), i.e. n^2 times the variance around the mean;
    kept scaled so all observer arithmetic stays in integers.
    """

    paths: tuple[tuple[int, ...], ...]
    inflight: tuple[tuple[int, int], ...]  # (originator, granted amount incl. 0)
    u_hat: tuple[int, ...]
    total: int
    variance_scaled: int

    def variance(self) -> Fraction:
        n = len(self.u_hat)
        return Fraction(self.variance_scaled, n * n)


def observe_exchange(g: PortLabeledGraph, config: Configuration) -> ExchangeView:
    """Reconstruct request paths and virtual values from a configuration."""
    states: list[AveragingState] = list(config.zs)
    n = g.n
    succ: list[int | None] = [None] * n
    origins = []
    for j, st in enumerate(states):
        if st.rin == SELF:
            origins.append(j)
        elif st.rin != NONE:
            i = g.neighbor(j, st.rin)
            if succ[i] is not None:
                raise ProtocolViolation(f"nodes {succ[i]} and {j} both claim a request from {i}")
            succ[i] = j
    paths = []
    on_path: set[int] = set()
    for ell in origins:
        path = [ell]
        node = ell
        while succ[node] is not None:
            node = succ[node]
            if node in on_path or node in path:
                raise ProtocolViolation("request chain revisits a node")
            path.append(node)
        if on_path & set(path):
            raise ProtocolViolation("request paths intersect")
        on_path |= set(path)
        paths.append(tuple(path))
    for j, st in enumerate(states):
        if st.rin != NONE and j not in on_path:
            raise ProtocolViolation(f"node {j} has a dangling request pointer")

    u_hat = [st.pebbles for st in states]
    inflight = []
    for path in paths:
        tail = path[-1]
        st = states[tail]
        if st.rout in (NONE, SELF):
            raise ProtocolViolation(f"path tail {tail} has no outgoing request pointer")
        src = g.neighbor(tail, st.rout)
        back = g.slot_of(src, tail)
        msg = config.msgs[src][back]
        ex = msg[2] if msg is not None else EMPTY
        if type(ex) is tuple and ex[0] == "A":
            u_hat[path[0]] += ex[1]
            inflight.append((path[0], ex[1]))
    total = sum(u_hat)
    var = sum((n * uh - total) ** 2 for uh in u_hat)
    return ExchangeView(tuple(paths), tuple(inflight), tuple(u_hat), total, var)


class AveragingChecker:
    """Every-slot invariant harness for an averaging run.

    Checks, raising InvariantViolation on the first failure:

    - mode/pointer coupling: free iff both request pointers empty;
    - pebble counts stay in {0..K};
    - conservation: sum of virtual values equals the initial total;
    - the scaled variance never increases, and drops by at least 2*n^2
      (variance by 2) in every slot some node granted a nonzero amount;
    - request paths are disjoint simple chains (observe_exchange);
    - an originated request is answered at the path tail within n slots
      and the originator is back in free mode within 2n+1;
    - both embedded trackers satisfy the full tracking invariant suite.
    """

    def __init__(self, g: PortLabeledGraph, inputs: Sequence[int], k: int):
        from .tracking import TrackingChecker

        self.g = g
        self.k = k
        self.total = sum(inputs)
        self.n = g.n
        self.v_initial: int | None = None
        self.prev_var: int | None = None
        self.prev_u: tuple[int, ...] | None = None
        self.max_checker = TrackingChecker(g, "max", windowed=True)
        self.min_checker = TrackingChecker(g, "min", windowed=True)
        self.open_since: dict[int, int] = {}
        self.answer_seen: set[int] = set()
        self.accept_slots: list[int] = []

    def _fail(self, t: int, msg: str):
        from .tracking import InvariantViolation

        raise InvariantViolation(f"[avg t={t}] {msg}")

    def on_step(self, t: int, config: Configuration) -> None:
        g, n = self.g, self.n
        states: list[AveragingState] = list(config.zs)
        for i, st in enumerate(states):
            if (st.mode == FREE) != (st.rin == NONE and st.rout == NONE):
                self._fail(t, f"node {i} mode/pointer mismatch: {st}")
            if not (0 <= st.pebbles <= self.k):
                self._fail(t, f"node {i} pebbles {st.pebbles} outside 0..{self.k}")
        view = observe_exchange(g, config)
        if self.v_initial is None:
            self.v_initial = view.variance_scaled
        if view.total != self.total:
            self._fail(t, f"virtual total {view.total} != initial total {self.total}")
        if self.prev_var is not None:
            if view.variance_scaled > self.prev_var:
                self._fail(t, f"variance rose {self.prev_var} -> {view.variance_scaled}")
        if self.prev_u is not None:
            accepted = any(st.pebbles < pu for st, pu in zip(states, self.prev_u))
            if accepted:
                self.accept_slots.append(t - 1)
                if self.prev_var - view.variance_scaled < 2 * n * n:
                    self._fail(t, "acceptance slot shrank variance by less than 2")
        self.prev_var = view.variance_scaled
        self.prev_u = tuple(st.pebbles for st in states)
        # Request lifecycle timing.
        answered = {ell for ell, _w in view.inflight}
        for ell, st in enumerate(states):
            if st.rin == SELF and ell not in self.open_since:
                self.open_since[ell] = t - 1  # originated during the previous slot
            if st.rin != SELF and ell in self.open_since and st.mode == FREE:
                del self.open_since[ell]
                self.answer_seen.discard(ell)
        for ell, t0 in self.open_since.items():
            if ell in answered:
                self.answer_seen.add(ell)
            if ell not in self.answer_seen and t > t0 + n:
                self._fail(t, f"request from {ell} (slot {t0}) unanswered after {n} slots")
            if t > t0 + 2 * n + 1:
                self._fail(t, f"request from {ell} (slot {t0}) not resolved after 2n+1 slots")
        self.max_checker.on_step(t, config)
        self.min_checker.on_step(t, config)
