"""Deterministic synchronous executor for families of identical automata.

Every node of degree d runs the same automaton.  A node's state is the tuple
``[x, z, y]`` (external input, internal memory, current output) plus the d
messages it most recently placed on its ports.  During slot t each node
consumes the messages its neighbors put on the ports leading to it at time
t, and produces its time-(t+1) state and outgoing messages.  The transition
function never sees a node id: it receives only ``(x, z, y, incoming)``,
where ``incoming[k]`` is the message that arrived through the node's k-th
port slot.

Termination is detected as a configuration fixed point: the first time t at
which a step maps the full configuration (states *and* in-flight messages)
to itself.  Output-only quiescence would fire early, because converged
protocols keep re-broadcasting identical estimates.  Programs that never
reach a fixed point can use :func:`run_to_stable_outputs`, which stops once
outputs have not changed for a caller-supplied window.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Any, Callable, Iterable, NamedTuple, Sequence

from .network import PortLabeledGraph

__all__ = [
    "EMPTY",
    "AutomatonSpec",
    "Configuration",
    "InputSchedule",
    "RunResult",
    "MalformedAutomatonError",
    "initial_configuration",
    "step",
    "run_to_fixed_point",
    "run_to_stable_outputs",
    "compose",
    "product",
    "map_input",
    "wrap_output",
    "detection_automaton",
    "identity_automaton",
    "dump_trace_csv",
]

# The distinguished empty symbol.
EMPTY = None

Transition = Callable[[Any, Any, Any, tuple], tuple[Any, Any, tuple]]
Init = Callable[[Any, int], tuple[Any, Any, tuple]]


class MalformedAutomatonError(RuntimeError):
    """A transition produced the wrong number of outgoing messages."""


def default_init(x: Any, degree: int) -> tuple[Any, Any, tuple]:
    return EMPTY, EMPTY, (EMPTY,) * degree


@dataclass(frozen=True)
class AutomatonSpec:
    """An automaton family, one instance per degree.

    ``transition(x, z, y, incoming) -> (z', y', outgoing)`` must return
    exactly one outgoing message per port slot and must not depend on x
    in any way that mutates it.  ``init(x, degree)`` supplies the memory,
    output and initially in-flight messages at time 0 (all EMPTY unless the
    automaton declares otherwise).
    """

    name: str
    transition: Transition
    init: Init = default_init


class Configuration(NamedTuple):
    """Global snapshot at one time step.

    ``msgs[i][k]`` is the message node i placed on its k-th port slot,
    currently in flight and consumed by the neighbor across that edge
    during the current slot.
    """

    xs: tuple
    zs: tuple
    ys: tuple
    msgs: tuple


# (time, node, new input value) entries; times strictly increasing per node.
InputSchedule = Sequence[tuple[int, int, Any]]


@dataclass(frozen=True)
class RunResult:
    status: str  # "fixed-point" | "stable" | "budget"
    config: Configuration
    steps: int
    trace: list[Configuration] | None = None

    @property
    def ok(self) -> bool:
        return self.status != "budget"


def routing_table(g: PortLabeledGraph) -> tuple[tuple[tuple[int, int], ...], ...]:
    """Per node and slot, the (source node, source slot) of the incoming edge."""
    pos: dict[tuple[int, int], int] = {}
    for i, row in enumerate(g.adj):
        for k, (j, _p) in enumerate(row):
            pos[(i, j)] = k
    return tuple(
        tuple((j, pos[(j, i)]) for j, _p in g.adj[i]) for i in range(g.n)
    )


def initial_configuration(g: PortLabeledGraph, spec: AutomatonSpec, inputs: Sequence) -> Configuration:
    if len(inputs) != g.n:
        raise ValueError(f"expected {g.n} inputs, got {len(inputs)}")
    zs, ys, msgs = [], [], []
    for i, x in enumerate(inputs):
        z0, y0, m0 = spec.init(x, g.degree(i))
        if len(m0) != g.degree(i):
            raise MalformedAutomatonError(
                f"{spec.name}: init produced {len(m0)} messages for degree {g.degree(i)}"
            )
        zs.append(z0)
        ys.append(y0)
        msgs.append(tuple(m0))
    return Configuration(tuple(inputs), tuple(zs), tuple(ys), tuple(msgs))


def step(
    g: PortLabeledGraph,
    spec: AutomatonSpec,
    config: Configuration,
    routes: tuple | None = None,
) -> Configuration:
    """One synchronous slot: every node transitions simultaneously."""
    if routes is None:
        routes = routing_table(g)
    zs, ys, msgs = [], [], []
    for i in range(g.n):
        incoming = tuple(config.msgs[j][k] for j, k in routes[i])
        z2, y2, out = spec.transition(config.xs[i], config.zs[i], config.ys[i], incoming)
        if len(out) != g.degree(i):
            raise MalformedAutomatonError(
                f"{spec.name}: transition produced {len(out)} messages for degree {g.degree(i)}"
            )
        zs.append(z2)
        ys.append(y2)
        msgs.append(tuple(out))
    return Configuration(config.xs, tuple(zs), tuple(ys), tuple(msgs))


def check_schedule(schedule: InputSchedule, n: int) -> list[tuple[int, int, Any]]:
    entries = sorted(schedule, key=lambda e: (e[0], e[1]))
    last: dict[int, int] = {}
    for t, node, _v in entries:
        if not (0 <= node < n):
            raise ValueError(f"schedule names node {node} outside 0..{n - 1}")
        if node in last and last[node] >= t:
            raise ValueError(f"schedule times for node {node} not strictly increasing")
        last[node] = t
    return entries


def run_to_fixed_point(
    g: PortLabeledGraph,
    spec: AutomatonSpec,
    inputs: Sequence,
    schedule: InputSchedule = (),
    max_steps: int = 100_000,
    record_trace: bool = False,
    on_step: Callable[[int, Configuration], None] | None = None,
) -> RunResult:
    """Run until the configuration is a fixed point of :func:`step`.

    ``steps`` in the result is the first t (after the schedule is exhausted)
    with step(config_t) == config_t.  Exceeding ``max_steps`` yields a
    "budget" result carrying the last configuration; it is a result, not an
    exception, so sweeps can record it and continue.
    """
    routes = routing_table(g)
    entries = check_schedule(schedule, g.n)
    sched_end = entries[-1][0] if entries else 0
    idx = 0
    config = initial_configuration(g, spec, inputs)
    trace: list[Configuration] | None = [] if record_trace else None
    t = 0
    while True:
        while idx < len(entries) and entries[idx][0] == t:
            _t, node, value = entries[idx]
            xs = list(config.xs)
            xs[node] = value
            config = Configuration(tuple(xs), config.zs, config.ys, config.msgs)
            idx += 1
        if trace is not None:
            trace.append(config)
        if on_step is not None:
            on_step(t, config)
        if t >= max_steps:
            return RunResult("budget", config, t, trace)
        nxt = step(g, spec, config, routes)
        if t >= sched_end and idx == len(entries) and nxt == config:
            return RunResult("fixed-point", config, t, trace)
        config = nxt
        t += 1


def run_to_stable_outputs(
    g: PortLabeledGraph,
    spec: AutomatonSpec,
    inputs: Sequence,
    window: int | None = None,
    max_steps: int = 100_000,
    on_step: Callable[[int, Configuration], None] | None = None,
) -> RunResult:
    """Alternate stop rule for programs with no configuration fixed point.

    Stops once the output vector has stayed unchanged for ``window``
    consecutive slots (default 4n); ``steps`` is the time of the last output
    change.  The window is a heuristic: programs whose outputs pause during
    long internal phases need a caller-supplied window scaled accordingly.
    """
    if window is None:
        window = 4 * g.n
    routes = routing_table(g)
    config = initial_configuration(g, spec, inputs)
    last_change = 0
    t = 0
    while t < max_steps:
        if on_step is not None:
            on_step(t, config)
        if t - last_change >= window:
            return RunResult("stable", config, last_change)
        nxt = step(g, spec, config, routes)
        if nxt.ys != config.ys:
            last_change = t + 1
        config = nxt
        t += 1
    return RunResult("budget", config, t)


# ---------------------------------------------------------------------------
# Combinators
# ---------------------------------------------------------------------------


def product(specs: Sequence[AutomatonSpec], name: str | None = None) -> AutomatonSpec:
    """Product automaton: components evolve independently, messages are tuples.

    An EMPTY incoming message splits into EMPTY for every component.
    """
    specs = tuple(specs)
    arity = len(specs)

    def init(x, degree):
        zs, ys, outs = [], [], []
        for s in specs:
            z0, y0, m0 = s.init(x, degree)
            zs.append(z0)
            ys.append(y0)
            outs.append(m0)
        return tuple(zs), tuple(ys), tuple(zip(*outs)) if degree else ()

    def transition(x, z, y, incoming):
        zs, ys, outs = [], [], []
        for c, s in enumerate(specs):
            inc = tuple(m[c] if m is not None else EMPTY for m in incoming)
            z2, y2, out = s.transition(x, z[c], y[c], inc)
            zs.append(z2)
            ys.append(y2)
            outs.append(out)
        return tuple(zs), tuple(ys), tuple(zip(*outs)) if incoming else ()

    label = name or "x".join(s.name for s in specs)
    return AutomatonSpec(label, transition, init)


def compose(a: AutomatonSpec, b: AutomatonSpec) -> AutomatonSpec:
    """Pairwise product: memory, output and messages become pairs."""
    return product((a, b), name=f"({a.name},{b.name})")


def map_input(spec: AutomatonSpec, f: Callable[[Any], Any], name: str | None = None) -> AutomatonSpec:
    """Same automaton, fed f(x) wherever it would read x."""
    return AutomatonSpec(
        name or f"{spec.name}@mapped",
        lambda x, z, y, inc: spec.transition(f(x), z, y, inc),
        lambda x, d: spec.init(f(x), d),
    )


def wrap_output(spec: AutomatonSpec, f: Callable[[Any], Any], name: str | None = None) -> AutomatonSpec:
    """Expose f(inner y) as the output; the inner output moves into memory."""

    def init(x, d):
        z0, y0, m0 = spec.init(x, d)
        return (z0, y0), f(y0), m0

    def transition(x, z, y, inc):
        z_in, y_in = z
        z2, y2, out = spec.transition(x, z_in, y_in, inc)
        return (z2, y2), f(y2), out

    return AutomatonSpec(name or f"{spec.name}@out", transition, init)


# ---------------------------------------------------------------------------
# Small built-in automata
# ---------------------------------------------------------------------------


def detection_automaton() -> AutomatonSpec:
    """Computes max of binary inputs: "has any node seen a 1?".

    Memory, output and messages are all initialized to 0 rather than EMPTY;
    a node turns (and stays) 1 as soon as its input, memory or any incoming
    message is 1.
    """

    def init(x, d):
        return 0, 0, (0,) * d

    def transition(x, z, y, incoming):
        fire = 1 if (x == 1 or z == 1 or any(m == 1 for m in incoming)) else 0
        return fire, fire, (fire,) * len(incoming)

    return AutomatonSpec("detect", transition, init)


def identity_automaton() -> AutomatonSpec:
    """Keeps its state and broadcasts EMPTY forever."""

    def transition(x, z, y, incoming):
        return z, y, (EMPTY,) * len(incoming)

    return AutomatonSpec("identity", transition)


# ---------------------------------------------------------------------------
# Trace dump
# ---------------------------------------------------------------------------


def render_value(v: Any) -> str:
    if v is EMPTY:
        return "~"
    if isinstance(v, tuple):
        return "(" + " ".join(render_value(e) for e in v) + ")"
    return str(v)


def dump_trace_csv(
    fh,
    g: PortLabeledGraph,
    trace: Iterable[Configuration],
    observer: Callable[[int, Configuration], str] | None = None,
) -> None:
    """Write one row per (t, node): t, node, x, y, z, outgoing messages.

    When an observer is supplied, its per-step rendering appears in the
    last column of each step's node-0 row.
    """
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", "node", "x", "y", "z", "out", "observer"])
    for t, config in enumerate(trace):
        note = observer(t, config) if observer is not None else ""
        for i in range(g.n):
            out = ";".join(
                f"p{g.port(i, k)}={render_value(m)}" for k, m in enumerate(config.msgs[i])
            )
            w.writerow(
                [
                    t,
                    i,
                    render_value(config.xs[i]),
                    render_value(config.ys[i]),
                    render_value(config.zs[i]),
                    out,
                    note if i == 0 else "",
                ]
            )
