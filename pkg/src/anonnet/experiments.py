"""Experiment drivers: single runs, seeded sweeps and the exhaustive check.

This is the library behind the command line.  Everything here is
deterministic given the configuration: inputs are drawn from the named
splitmix64 generator with per-run derived seeds, runs inside a sweep never
share state, and CSV rows are emitted in configuration order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product as iproduct
from typing import Callable, Iterable, Sequence

from . import averaging, compiler, engine, kernel, network, tracking
from .rng import RNG_ID, SplitMix64, derive_seed

SUMMARY_COLUMNS = [
    "graph",
    "n",
    "K",
    "seed",
    "steps",
    "acceptance_count",
    "V_initial",
    "V_final",
    "final_max",
    "final_min",
    "output_interval",
]


def summary_header_comment() -> str:
    return (
        f"# anonnet run summary; rng={RNG_ID}; "
        "steps=first slot whose configuration is a fixed point"
    )


@dataclass(frozen=True)
class RunRow:
    graph: str
    n: int
    k: int
    seed: int | None
    steps: int
    status: str
    acceptance_count: int | None = None
    v_initial: Fraction | None = None
    v_final: Fraction | None = None
    final_max: int | None = None
    final_min: int | None = None
    output_interval: str | None = None
    checks_ok: bool = True
    detail: str = ""

    def csv_fields(self) -> list[str]:
        def num(v):
            if v is None:
                return ""
            if isinstance(v, Fraction):
                return repr(float(v))
            return str(v)

        return [
            self.graph,
            str(self.n),
            str(self.k),
            "" if self.seed is None else str(self.seed),
            str(self.steps),
            num(self.acceptance_count),
            num(self.v_initial),
            num(self.v_final),
            num(self.final_max),
            num(self.final_min),
            self.output_interval or "",
        ]


def parse_graph_arg(arg: str) -> tuple[str, network.PortLabeledGraph]:
    """Accept a family:n token or a graph file path."""
    fams: dict[str, Callable[..., network.PortLabeledGraph]] = {
        "complete": network.build_complete,
        "line": network.build_line,
        "ring": network.build_labeled_ring,
        "dumbbell": network.build_dumbbell,
    }
    head, _, rest = arg.partition(":")
    if head in fams and rest:
        parts = rest.split(":")
        n = int(parts[0])
        g = fams[head](n)
        if head == "ring" and len(parts) == 2:
            g = network.replicate_ring(g, int(parts[1]))
            return f"ring:{n}:{parts[1]}", g
        if len(parts) != 1:
            raise ValueError(f"unrecognized graph token {arg!r}")
        return f"{head}:{n}", g
    with open(arg, "r", encoding="utf-8") as fh:
        return arg, network.parse_graph(fh.read())


def dumbbell_adversarial_inputs(n: int) -> list[int]:
    """One clique all 0, the other all 2, the connecting line all 1."""
    q = n // 3
    return [0] * q + [2] * q + [1] * q


def parse_inputs_arg(arg: str, n: int, seed: int) -> tuple[list[int], int]:
    """Inputs token: comma list | uniform:lo:hi | dumbbell-adversarial.

    Returns the vector and the alphabet bound K it implies.
    """
    if arg == "dumbbell-adversarial":
        return dumbbell_adversarial_inputs(n), 2
    if arg.startswith("uniform:"):
        _u, lo, hi = arg.split(":")
        lo, hi = int(lo), int(hi)
        rng = SplitMix64(seed)
        return [rng.randint(lo, hi) for _ in range(n)], hi
    xs = [int(tok) for tok in arg.split(",") if tok != ""]
    if len(xs) != n:
        raise ValueError(f"expected {n} inputs, got {len(xs)}")
    return xs, max(xs) if xs else 0


# ---------------------------------------------------------------------------
# Single runs
# ---------------------------------------------------------------------------


def run_interval_avg(
    graph_name: str,
    g: network.PortLabeledGraph,
    inputs: Sequence[int],
    k: int | None = None,
    seed: int | None = None,
    max_steps: int | None = None,
    backend: str | None = None,
) -> RunRow:
    k = max(list(inputs) + [0]) if k is None else k
    cap = max_steps if max_steps is not None else averaging.termination_bound(g.n, max(k, 1)) + g.n + 16
    res = kernel.simulate_averaging(g, inputs, max_steps=cap, backend=backend)
    n = g.n
    final_max = int(res.max_estimates.max()) if n else 0
    final_min = int(res.min_estimates.min()) if n else 0
    y = averaging.decode_output(int(res.pebbles[0]), int(res.final_state[0, kernel.F_XM]), int(res.final_state[0, kernel.F_NM]))
    return RunRow(
        graph=graph_name,
        n=n,
        k=k,
        seed=seed,
        steps=res.steps,
        status=res.status,
        acceptance_count=res.accept_count,
        v_initial=Fraction(res.v0_scaled, n * n),
        v_final=Fraction(res.v_final_scaled, n * n),
        final_max=final_max,
        final_min=final_min,
        output_interval=averaging.render_interval(y),
        checks_ok=res.all_checks_ok(),
        detail="" if res.all_checks_ok() else f"fault={res.fault}",
    )


def run_generic(
    algo: str,
    graph_name: str,
    g: network.PortLabeledGraph,
    inputs: Sequence[int],
    k: int,
    seed: int | None,
    max_steps: int,
) -> tuple[RunRow, engine.RunResult]:
    spec = {
        "detect": engine.detection_automaton,
        "maxtrack": tracking.max_tracking_automaton,
        "mintrack": tracking.min_tracking_automaton,
    }[algo]()
    res = engine.run_to_fixed_point(g, spec, list(inputs), max_steps=max_steps, record_trace=False)
    common = res.config.ys[0]
    row = RunRow(
        graph=graph_name,
        n=g.n,
        k=k,
        seed=seed,
        steps=res.steps,
        status=res.status,
        output_interval=str(common),
    )
    return row, res


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    family: str  # complete | line | ring | dumbbell
    sizes: tuple[int, ...]
    inputs: str  # uniform:lo:hi | dumbbell-adversarial
    runs: int
    seed: int
    max_steps: int | None = None
    backend: str | None = None

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")


@dataclass
class SweepResult:
    rows: list[RunRow]
    aggregate: list[dict]

    def mean_steps(self) -> dict[int, float]:
        return {agg["n"]: agg["mean_steps"] for agg in self.aggregate}


def run_sweep(config: SweepConfig, on_row: Callable[[RunRow], None] | None = None) -> SweepResult:
    rows: list[RunRow] = []
    aggregate = []
    for size in config.sizes:
        name = f"{config.family}:{size}"
        _name, g = parse_graph_arg(name)
        per_size: list[RunRow] = []
        for run_idx in range(config.runs):
            run_seed = derive_seed(config.seed, size, run_idx)
            inputs, k = parse_inputs_arg(config.inputs, g.n, run_seed)
            row = run_interval_avg(
                name, g, inputs, k=k, seed=run_seed, max_steps=config.max_steps, backend=config.backend
            )
            per_size.append(row)
            rows.append(row)
            if on_row is not None:
                on_row(row)
        steps = [r.steps for r in per_size]
        aggregate.append(
            {
                "family": config.family,
                "n": size,
                "runs": config.runs,
                "mean_steps": sum(steps) / len(steps),
                "min_steps": min(steps),
                "max_steps": max(steps),
                "failures": sum(1 for r in per_size if r.status != "fixed-point" or not r.checks_ok),
            }
        )
    return SweepResult(rows, aggregate)


def loglog_slope(points: Iterable[tuple[float, float]]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    logs = [(math.log(x), math.log(y)) for x, y in points if x > 0 and y > 0]
    if len(logs) < 2:
        raise ValueError("need at least two points")
    mx = sum(x for x, _ in logs) / len(logs)
    my = sum(y for _, y in logs) / len(logs)
    sxx = sum((x - mx) ** 2 for x, _ in logs)
    sxy = sum((x - mx) * (y - my) for x, y in logs)
    return sxy / sxx


# ---------------------------------------------------------------------------
# Exhaustive small-instance verification
# ---------------------------------------------------------------------------


@dataclass
class CheckReport:
    graphs: int = 0
    runs: int = 0
    violations: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_exhaustive(
    max_n: int = 5,
    k: int = 2,
    transition_override: Callable | None = None,
    cross_check_kernel: bool = True,
    backend: str | None = None,
) -> CheckReport:
    """Run interval-averaging on every connected graph up to max_n (one
    canonical port labeling per isomorphism class) and every input vector
    over {0..k}, asserting every tracked invariant on every slot.

    ``transition_override`` swaps the per-node transition (used by fault
    injection tests to prove the harness catches a corrupted protocol).
    Returns a report; the first violation per instance is recorded with a
    reproducible instance description.
    """
    report = CheckReport()
    base = averaging.averaging_automaton()
    spec = base if transition_override is None else engine.AutomatonSpec(base.name, transition_override, base.init)
    for n in range(1, max_n + 1):
        for g in network.connected_graphs_up_to_iso(n):
            report.graphs += 1
            for xs in iproduct(range(k + 1), repeat=n):
                report.runs += 1
                checker = averaging.AveragingChecker(g, xs, k)
                bound = averaging.termination_bound(n, k)
                try:
                    res = engine.run_to_fixed_point(
                        g, spec, list(xs), max_steps=bound + n + 16, on_step=checker.on_step
                    )
                except (tracking.InvariantViolation, averaging.ProtocolViolation) as exc:
                    report.violations.append(_violation(g, xs, "invariant", str(exc)))
                    continue
                if res.status != "fixed-point":
                    report.violations.append(_violation(g, xs, "budget", f"no fixed point in {bound} slots"))
                    continue
                if res.steps > bound:
                    report.violations.append(_violation(g, xs, "bound", f"steps {res.steps} > {bound}"))
                us = [z.pebbles for z in res.config.zs]
                if sum(us) != sum(xs):
                    report.violations.append(_violation(g, xs, "conservation", f"sum {sum(us)} != {sum(xs)}"))
                    continue
                if us and max(us) - min(us) > 1:
                    report.violations.append(_violation(g, xs, "spread", f"final values {us}"))
                    continue
                avg = Fraction(sum(xs), n)
                want = ("point", int(avg)) if avg.denominator == 1 else ("open", int(avg), int(avg) + 1)
                if any(y != want for y in res.config.ys):
                    report.violations.append(_violation(g, xs, "decode", f"outputs {res.config.ys}, want {want}"))
                    continue
                if cross_check_kernel and transition_override is None:
                    ker = kernel.simulate_averaging(g, list(xs), max_steps=bound + n + 16, backend=backend)
                    if (
                        ker.steps != res.steps
                        or sorted(ker.pebbles.tolist()) != sorted(us)
                        or not ker.all_checks_ok()
                    ):
                        report.violations.append(
                            _violation(g, xs, "kernel-mismatch", f"kernel steps {ker.steps} vs {res.steps}")
                        )
    return report


def _violation(g: network.PortLabeledGraph, xs, kind: str, detail: str) -> dict:
    return {
        "kind": kind,
        "detail": detail,
        "graph": network.serialize_graph(g),
        "inputs": ",".join(str(x) for x in xs),
    }
