"""Port-labeled graphs: the static world a simulation runs on.

A network is ``n`` nodes plus bidirectional edges, where each node privately
numbers its incident edges with distinct integer *ports*.  Automata address
neighbors only through ports; the node ids 0..n-1 exist for the harness and
observers, never for the automata themselves.

Ports at a node of degree d may take any d distinct values in ``{0, ..., d}``.
That range has one spare value, which is required to represent edge-labeled
rings: both endpoints of a ring edge use the edge's shared label, drawn from
{0, 1, 2}, as their port, even though every node has degree 2.  All builders
except the labeled ring use the minimal range ``{0, ..., d-1}``.

The module also provides the builders used by the experiment suite
(complete, line, labeled ring, replicated ring, dumbbell), a line-based text
format, and exhaustive/random small-graph generators for test oracles.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from itertools import combinations, permutations
from typing import Iterable, Sequence

from .rng import SplitMix64

__all__ = [
    "PortLabeledGraph",
    "ValidationReport",
    "GraphFormatError",
    "validate",
    "from_edges",
    "build_complete",
    "build_line",
    "build_labeled_ring",
    "replicate_ring",
    "build_dumbbell",
    "parse_graph",
    "serialize_graph",
    "connected_graphs_up_to_iso",
    "random_connected_graph",
]


class GraphFormatError(ValueError):
    """Raised when a graph document cannot be parsed into a valid graph."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass(frozen=True)
class PortLabeledGraph:
    """Immutable port-labeled graph.

    ``adj[i]`` lists ``(neighbor, port)`` pairs ordered by ascending port
    number.  The position of an entry in that list is the node's *port slot*:
    the index under which the engine delivers and collects messages.  Slot
    order therefore follows port order, so "smallest port" and "smallest
    slot" agree.

    Instances are immutable after construction and safe to share between
    concurrently executing runs.
    """

    n: int
    adj: tuple[tuple[tuple[int, int], ...], ...]

    def degree(self, i: int) -> int:
        return len(self.adj[i])

    def neighbor(self, i: int, slot: int) -> int:
        """Node at the other end of ``i``'s port slot."""
        return self.adj[i][slot][0]

    def port(self, i: int, slot: int) -> int:
        return self.adj[i][slot][1]

    def slot_of(self, i: int, j: int) -> int:
        """Port slot at ``i`` of the edge leading to ``j``."""
        for k, (nbr, _p) in enumerate(self.adj[i]):
            if nbr == j:
                return k
        raise KeyError(f"no edge {i} -> {j}")

    def edge_count(self) -> int:
        return sum(len(row) for row in self.adj) // 2

    def degrees(self) -> tuple[int, ...]:
        return tuple(len(row) for row in self.adj)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violation: str | None = None
    detail: str = ""

    def __bool__(self) -> bool:  # pragma: no cover - convenience
        return self.ok


OK = ValidationReport(True)


def from_edges(n: int, directed_edges: Iterable[tuple[int, int, int]]) -> PortLabeledGraph:
    """Assemble a graph from ``(i, j, port_at_i)`` triples.

    Purely structural; run :func:`validate` to check the graph invariants.
    """
    rows: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for i, j, p in directed_edges:
        rows[i].append((j, p))
    return PortLabeledGraph(n, tuple(tuple(sorted(row, key=lambda e: e[1])) for row in rows))


def validate(g: PortLabeledGraph) -> ValidationReport:
    """Check the three graph invariants, reporting the first violated one.

    Order: bidirectionality (including simplicity), connectivity, then the
    per-node port constraints.  Violations are the return value, never an
    exception.
    """
    if g.n < 1:
        return ValidationReport(False, "empty", "graph must have at least one node")
    # Bidirectional simple graph.
    for i, row in enumerate(g.adj):
        seen: set[int] = set()
        for j, _p in row:
            if not (0 <= j < g.n):
                return ValidationReport(False, "not-bidirectional", f"edge ({i},{j}) leaves the node range")
            if j == i:
                return ValidationReport(False, "not-bidirectional", f"self-loop at node {i}")
            if j in seen:
                return ValidationReport(False, "not-bidirectional", f"parallel edge ({i},{j})")
            seen.add(j)
            if not any(nbr == i for nbr, _q in g.adj[j]):
                return ValidationReport(False, "not-bidirectional", f"edge ({i},{j}) has no reverse edge")
    # Connectivity.
    reached = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j, _p in g.adj[i]:
            if j not in reached:
                reached.add(j)
                frontier.append(j)
    if len(reached) != g.n:
        missing = min(set(range(g.n)) - reached)
        return ValidationReport(False, "disconnected", f"node {missing} unreachable from node 0")
    # Ports: pairwise distinct, each in {0, ..., d(i)}.
    for i, row in enumerate(g.adj):
        d = len(row)
        ports = [p for _j, p in row]
        if len(set(ports)) != d:
            dup = next(p for p in ports if ports.count(p) > 1)
            return ValidationReport(False, "duplicate port", f"node {i} uses port {dup} twice")
        for p in ports:
            if not (0 <= p <= d):
                return ValidationReport(False, "port out of range", f"node {i} has port {p}, degree {d}")
    return OK


def _canonical_ports(n: int, undirected: Iterable[tuple[int, int]]) -> PortLabeledGraph:
    """Assign ports 0..d-1 per node in ascending-neighbor order."""
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for i, j in undirected:
        nbrs[i].append(j)
        nbrs[j].append(i)
    edges = []
    for i in range(n):
        for k, j in enumerate(sorted(nbrs[i])):
            edges.append((i, j, k))
    return from_edges(n, edges)


def build_complete(n: int) -> PortLabeledGraph:
    """Complete graph on n nodes.

    The port at node i for the edge to j starts from the symmetric value
    ``(i + j) mod n`` and is then remapped, order preserved, onto
    ``{0, ..., d(i)-1}`` so the assignment is valid at every node.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    edges = []
    for i in range(n):
        raw = sorted((((i + j) % n), j) for j in range(n) if j != i)
        for k, (_r, j) in enumerate(raw):
            edges.append((i, j, k))
    return from_edges(n, edges)


def build_line(n: int) -> PortLabeledGraph:
    """Path 0-1-...-(n-1); endpoints use port 0, interior nodes port 0 left
    and port 1 right."""
    if n < 1:
        raise ValueError("n must be >= 1")
    edges = []
    for i in range(n - 1):
        edges.append((i, i + 1, 0 if i == 0 else 1))
        edges.append((i + 1, i, 0))
    return from_edges(n, edges)


def _ring_labels(n: int) -> list[int]:
    # Edge k joins nodes k and k+1 (mod n), k = 0..n-1.
    # Label sequence 0, 1, 2, 1, 2, ... gives adjacent edges distinct labels,
    # including across the wrap-around.
    return [0 if k == 0 else (1 if k % 2 == 1 else 2) for k in range(n)]


def build_labeled_ring(n: int) -> PortLabeledGraph:
    """Cycle 0-1-...-(n-1)-0 where both endpoints of edge k use its shared
    label as their port; the label sequence is 0,1,2,1,2,..."""
    if n < 3:
        raise ValueError("ring needs n >= 3")
    labels = _ring_labels(n)
    edges = []
    for k in range(n):
        a, b = k, (k + 1) % n
        edges.append((a, b, labels[k]))
        edges.append((b, a, labels[k]))
    return from_edges(n, edges)


def ring_edge_labels(g: PortLabeledGraph) -> list[int]:
    """Recover the shared edge labels of a labeled ring, clockwise from node 0."""
    labels = []
    for k in range(g.n):
        a, b = k, (k + 1) % g.n
        labels.append(g.port(a, g.slot_of(a, b)))
    return labels


def replicate_ring(g: PortLabeledGraph, m: int) -> PortLabeledGraph:
    """Ring of m*n nodes whose edge-label sequence repeats g's labels m times.

    Node j of the result plays the role of node ``j mod n`` of ``g``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    n = g.n
    labels = ring_edge_labels(g) * m
    edges = []
    for k in range(m * n):
        a, b = k, (k + 1) % (m * n)
        edges.append((a, b, labels[k]))
        edges.append((b, a, labels[k]))
    return from_edges(m * n, edges)


def build_dumbbell(n: int) -> PortLabeledGraph:
    """Two complete graphs of n/3 nodes joined by a line of n/3 nodes.

    Nodes 0..q-1 and q..2q-1 are the cliques (q = n/3), nodes 2q..3q-1 the
    connecting line.  Each line endpoint attaches to the smallest-id node of
    its clique.  Ports are the canonical ascending-neighbor assignment.
    """
    if n % 3 != 0:
        raise ValueError("dumbbell size must be divisible by 3")
    if n < 9:
        raise ValueError("dumbbell needs n >= 9")
    q = n // 3
    und: list[tuple[int, int]] = []
    und += [(i, j) for i, j in combinations(range(q), 2)]
    und += [(i, j) for i, j in combinations(range(q, 2 * q), 2)]
    und += [(2 * q + i, 2 * q + i + 1) for i in range(q - 1)]
    und += [(2 * q, 0), (3 * q - 1, q)]
    return _canonical_ports(n, und)


# ---------------------------------------------------------------------------
# Text format: "n <count>" header, one "edge <i> <j> <port-at-i>" line per
# directed edge, '#' comments, whitespace-insensitive fields.
# ---------------------------------------------------------------------------


def parse_graph(text: str) -> PortLabeledGraph:
    """Parse a graph document; errors carry the offending line number."""
    n: int | None = None
    directed: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int]] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if fields[0] == "n":
            if n is not None:
                raise GraphFormatError("duplicate 'n' header", lineno)
            if len(fields) != 2 or not fields[1].isdigit():
                raise GraphFormatError("expected 'n <count>'", lineno)
            n = int(fields[1])
            if n < 1:
                raise GraphFormatError("node count must be >= 1", lineno)
        elif fields[0] == "edge":
            if n is None:
                raise GraphFormatError("'edge' before 'n' header", lineno)
            if len(fields) != 4:
                raise GraphFormatError("expected 'edge <i> <j> <port-at-i>'", lineno)
            try:
                i, j, p = (int(f) for f in fields[1:])
            except ValueError:
                raise GraphFormatError("edge fields must be integers", lineno) from None
            if not (0 <= i < n and 0 <= j < n):
                raise GraphFormatError(f"edge ({i},{j}) outside 0..{n - 1}", lineno)
            if (i, j) in seen:
                raise GraphFormatError(f"duplicate directed edge ({i},{j})", lineno)
            seen.add((i, j))
            directed.append((i, j, p))
        else:
            raise GraphFormatError(f"unknown directive {fields[0]!r}", lineno)
    if n is None:
        raise GraphFormatError("missing 'n' header")
    g = from_edges(n, directed)
    report = validate(g)
    if not report.ok:
        raise GraphFormatError(f"invalid graph: {report.violation} ({report.detail})")
    return g


def serialize_graph(g: PortLabeledGraph) -> str:
    out = io.StringIO()
    out.write(f"n {g.n}\n")
    for i in range(g.n):
        for j, p in g.adj[i]:
            out.write(f"edge {i} {j} {p}\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# Small-graph generators used by the exhaustive check harness and tests.
# ---------------------------------------------------------------------------


def connected_graphs_up_to_iso(n: int) -> list[PortLabeledGraph]:
    """All connected graphs on n nodes up to isomorphism, canonical ports.

    Counts for n = 1..5 are 1, 1, 2, 6, 21.  Each representative gets the
    ascending-neighbor port assignment, fixing one concrete port labeling
    per isomorphism class.
    """
    pairs = list(combinations(range(n), 2))
    reps: list[PortLabeledGraph] = []
    seen_masks: set[int] = set()
    for mask in range(1 << len(pairs)):
        edges = [pairs[b] for b in range(len(pairs)) if mask >> b & 1]
        if not _mask_connected(n, edges):
            continue
        canon = _canonical_mask(n, pairs, edges)
        if canon in seen_masks:
            continue
        seen_masks.add(canon)
        reps.append(_canonical_ports(n, edges))
    reps.sort(key=lambda g: (g.edge_count(), g.adj))
    return reps


def _mask_connected(n: int, edges: list[tuple[int, int]]) -> bool:
    if n == 1:
        return True
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        nbrs[i].append(j)
        nbrs[j].append(i)
    reached = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in nbrs[i]:
            if j not in reached:
                reached.add(j)
                frontier.append(j)
    return len(reached) == n


def _canonical_mask(n: int, pairs: list[tuple[int, int]], edges: list[tuple[int, int]]) -> int:
    index = {pair: b for b, pair in enumerate(pairs)}
    best = None
    for perm in permutations(range(n)):
        mask = 0
        for i, j in edges:
            a, b = perm[i], perm[j]
            mask |= 1 << index[(a, b) if a < b else (b, a)]
        if best is None or mask < best:
            best = mask
    return best


def random_connected_graph(n: int, rng: SplitMix64, extra_edge_percent: int = 30) -> PortLabeledGraph:
    """Random connected graph: random attachment tree plus extra edges.

    Each non-tree pair is added independently with the given percentage.
    Deterministic in the rng stream.  Canonical ascending-neighbor ports.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    edges: list[tuple[int, int]] = []
    present: set[tuple[int, int]] = set()
    for v in range(1, n):
        u = rng.randint(0, v - 1)
        edges.append((u, v))
        present.add((u, v))
    for i, j in combinations(range(n), 2):
        if (i, j) not in present and rng.randint(0, 99) < extra_edge_percent:
            edges.append((i, j))
            present.add((i, j))
    return _canonical_ports(n, edges)
