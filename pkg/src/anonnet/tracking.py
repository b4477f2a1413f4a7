"""Extremum tracking of time-varying node inputs with restart invalidation.

Every node keeps an estimate M of the global maximum (dually: minimum) of
the node inputs, and a pointer P to the port through which it learned that
estimate (or to itself).  Two broadcast message kinds exist: a restart,
which invalidates downstream estimates, and an estimate announcement.
Restarts travel one hop per slot while estimates effectively travel one hop
per two slots: a node that adopts a better estimate broadcasts a restart
first, and re-announces the value only after its parent confirms it next
slot.  The speed gap is what lets restarts overtake stale estimates after
an input change.

Exactly one case fires per slot, in this priority order:

1. input changed        -> M := u, P := self, broadcast restart
2. strictly better      -> adopt the best offered estimate (smallest port
   estimate received       on ties), point at its sender, broadcast restart
3. restart from parent  -> M := u, P := self, broadcast restart
4. P = self             -> broadcast the estimate (every slot, so children
                           keep confirming and the converged state is a
                           period-1 fixed point)
5. parent re-announced  -> broadcast the estimate onward
   the same estimate
6. otherwise            -> broadcast nothing, keep state

The observer-side pointer graph has an edge (i, j) when node i points at
neighbor j and no restart from j is in flight toward i; on every reachable
configuration it is a forest with equal estimates along edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .engine import EMPTY, AutomatonSpec, Configuration
from .network import PortLabeledGraph

__all__ = [
    "SELF",
    "RESTART",
    "TrackingState",
    "tracking_transition",
    "min_tracking_transition",
    "max_tracking_automaton",
    "min_tracking_automaton",
    "PointerGraphView",
    "observe_pointer_graph",
    "TrackingChecker",
    "InvariantViolation",
]

SELF = -1
RESTART = "R"


def estimate(v: int) -> tuple[str, int]:
    return ("E", v)


class TrackingState(NamedTuple):
    estimate: int
    pointer: int  # SELF or a port slot index
    input_prev: int  # input value seen in the previous slot


class InvariantViolation(AssertionError):
    """An observer-checked protocol invariant failed."""


def _transition(state: TrackingState, u_now: int, incoming: Sequence, sign: int):
    m, p, u_prev = state
    if u_now != u_prev:
        return TrackingState(u_now, SELF, u_now), RESTART
    best_v = 0
    best_port = -1
    found = False
    for k, msg in enumerate(incoming):
        if type(msg) is tuple and msg[0] == "E":
            v = msg[1]
            if sign * (v - m) > 0 and (not found or sign * (v - best_v) > 0):
                best_v, best_port, found = v, k, True
    if found:
        return TrackingState(best_v, best_port, u_now), RESTART
    if p != SELF and incoming[p] == RESTART:
        return TrackingState(u_now, SELF, u_now), RESTART
    if p == SELF:
        return TrackingState(m, p, u_now), ("E", m)
    if incoming[p] == ("E", m):
        return TrackingState(m, p, u_now), ("E", m)
    return TrackingState(m, p, u_now), EMPTY


def tracking_transition(state: TrackingState, u_now: int, incoming: Sequence):
    """Maximum-tracking step: returns (new state, broadcast message)."""
    return _transition(state, u_now, incoming, +1)


def min_tracking_transition(state: TrackingState, u_now: int, incoming: Sequence):
    """Minimum-tracking dual: all comparisons reversed."""
    return _transition(state, u_now, incoming, -1)


def _automaton(sign: int, name: str) -> AutomatonSpec:
    def init(u, d):
        return TrackingState(u, SELF, u), u, (EMPTY,) * d

    def transition(u, z, y, incoming):
        z2, bc = _transition(z, u, incoming, sign)
        return z2, z2.estimate, (bc,) * len(incoming)

    return AutomatonSpec(name, transition, init)


def max_tracking_automaton() -> AutomatonSpec:
    """Standalone tracker whose time-varying input is the engine-level x."""
    return _automaton(+1, "maxtrack")


def min_tracking_automaton() -> AutomatonSpec:
    return _automaton(-1, "mintrack")


# ---------------------------------------------------------------------------
# Observer side
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointerGraphView:
    """Snapshot of the pointer graph at one time step.

    ``edges`` holds (i, j) node pairs; ``root_of`` maps every node to the
    end of its pointer chain when the graph is acyclic (None entries appear
    only when it is not).  ``valid`` flags, per node, whether its chain ends
    at a root r that points to itself with estimate equal to r's previous
    input.
    """

    edges: tuple[tuple[int, int], ...]
    acyclic: bool
    root_of: tuple[int | None, ...]
    valid: tuple[bool, ...]


def _tracking_parts(config: Configuration, component: str):
    """Extract per-node TrackingState and a broadcast-message accessor.

    Works both for standalone tracking runs and for runs whose state embeds
    max/min trackers (anything exposing .max_track / .min_track and
    triple messages).
    """
    zs = config.zs
    if zs and isinstance(zs[0], TrackingState):
        return list(zs), lambda i, k: config.msgs[i][k]
    idx = {"max": 0, "min": 1}[component]
    states = [getattr(z, ("max_track", "min_track")[idx]) for z in zs]

    def msg_at(i, k):
        m = config.msgs[i][k]
        return m[idx] if m is not None else EMPTY

    return states, msg_at


def observe_pointer_graph(
    g: PortLabeledGraph, config: Configuration, component: str = "max"
) -> PointerGraphView:
    """Build the pointer-graph view for the current configuration."""
    states, msg_at = _tracking_parts(config, component)
    target: list[int | None] = [None] * g.n
    edges = []
    for i in range(g.n):
        p = states[i].pointer
        if p == SELF:
            continue
        j = g.neighbor(i, p)
        back = g.slot_of(j, i)
        if msg_at(j, back) == RESTART:
            continue  # invalidated this slot: i is a root of its own tree
        target[i] = j
        edges.append((i, j))
    root_of: list[int | None] = [None] * g.n
    acyclic = True
    for i in range(g.n):
        seen = []
        node = i
        while target[node] is not None and len(seen) <= g.n:
            seen.append(node)
            node = target[node]
        if target[node] is not None:  # walked n+1 edges: cycle
            acyclic = False
            continue
        root_of[i] = node
    valid = []
    for i in range(g.n):
        r = root_of[i]
        ok = (
            r is not None
            and states[r].pointer == SELF
            and states[r].estimate == states[r].input_prev
        )
        valid.append(bool(ok))
    return PointerGraphView(tuple(edges), acyclic, tuple(root_of), tuple(valid))


class TrackingChecker:
    """Per-slot invariant checks for a tracking run.

    Feed it every configuration via on_step; it raises InvariantViolation
    with the offending time and fact otherwise.  Checks:

    - pointer graph is a forest (acyclic, out-degree <= 1 by construction);
    - estimates are equal along every pointer edge;
    - per node: P = self implies M = previous input, else M strictly beyond
      the previous input (direction given by the tracked extremum);
    - with ``windowed=True`` (used when the inputs are driven by the
      averaging protocol, whose transfers never exceed known estimates):
      the extremal estimate over the last n slots never moves past its
      previous value, input changes included.  Arbitrary scripted inputs
      can legitimately raise it, so scripted runs leave this off;
    - once inputs are static (from ``quiet_time`` on), the instantaneous
      extremal estimate is monotone from quiet_time + 1 onward, i.e. after
      the last change has been absorbed into the estimates.
    """

    def __init__(
        self,
        g: PortLabeledGraph,
        component: str = "max",
        quiet_time: int | None = None,
        windowed: bool = False,
    ):
        self.g = g
        self.sign = +1 if component == "max" else -1
        self.component = component
        self.quiet_time = quiet_time
        self.windowed = windowed
        self._window: list[int] = []
        self._m_prime: int | None = None
        self._prev_extreme: int | None = None

    def _fail(self, t: int, msg: str):
        raise InvariantViolation(f"[{self.component} t={t}] {msg}")

    def on_step(self, t: int, config: Configuration) -> None:
        g, sign = self.g, self.sign
        states, _msg_at = _tracking_parts(config, self.component)
        view = observe_pointer_graph(g, config, self.component)
        if not view.acyclic:
            self._fail(t, "pointer graph has a cycle")
        for i, j in view.edges:
            if states[i].estimate != states[j].estimate:
                self._fail(t, f"edge ({i},{j}) joins estimates {states[i].estimate} != {states[j].estimate}")
        for i, st in enumerate(states):
            if st.pointer == SELF:
                if st.estimate != st.input_prev:
                    self._fail(t, f"node {i} points to itself but M={st.estimate}, prev input {st.input_prev}")
            elif sign * (st.estimate - st.input_prev) <= 0:
                self._fail(t, f"node {i} points away but M={st.estimate} not beyond prev input {st.input_prev}")
        extreme = max(sign * st.estimate for st in states)
        if self.windowed:
            window_len = g.n + 1
            if not self._window:
                self._window = [extreme] * window_len
                self._m_prime = extreme
            self._window[t % window_len] = extreme
            m_prime = max(self._window)
            if m_prime > self._m_prime:
                self._fail(t, f"windowed extremal estimate rose from {self._m_prime} to {m_prime}")
            self._m_prime = m_prime
        if self.quiet_time is not None and t >= self.quiet_time + 1:
            if self._prev_extreme is not None and extreme > self._prev_extreme:
                self._fail(t, "extremal estimate increased after the schedule ended")
            self._prev_extreme = extreme


def pointer_chain_end(g: PortLabeledGraph, states: Sequence[TrackingState], i: int) -> int:
    """Follow pointers from node i for n hops and return where they land."""
    node = i
    for _ in range(g.n):
        p = states[node].pointer
        if p == SELF:
            break
        node = g.neighbor(node, p)
    return node
